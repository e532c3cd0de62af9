mod common;

use common::{naive_shift, random_tensor, rng};
use proptest::prelude::*;
use rand::Rng;
use tsm_core::model::{build_model, Capacity, ModelConfig, StageLayout};
use tsm_core::tsm::{shifted_residual_block, temporal_shift, temporal_shift_backward, ShiftConfig};
use tsm_core::Tensor;

#[test]
fn matches_index_remap_oracle() {
    let mut r = rng(1);
    let x = random_tensor(&[2 * 4, 8, 3, 3], &mut r);
    let y = temporal_shift(&x, &ShiftConfig::new(4, 8)).unwrap();
    assert_eq!(y, naive_shift(&x, 4, 8));
}

#[test]
fn random_shapes_match_oracle() {
    let mut r = rng(2);
    for _ in 0..200 {
        let t = r.random_range(1..=8);
        let c = r.random_range(2..=32);
        let fold_div = [2, 4, 8][r.random_range(0..3)];
        let n = r.random_range(1..=2);
        let x = random_tensor(
            &[n * t, c, r.random_range(1..=3), r.random_range(1..=3)],
            &mut r,
        );
        let y = temporal_shift(&x, &ShiftConfig::new(t, fold_div)).unwrap();
        assert_eq!(
            y,
            naive_shift(&x, t, fold_div),
            "T={t} C={c} fold_div={fold_div}"
        );
    }
}

#[test]
fn unshifted_channels_pass_gradient_through() {
    let mut r = rng(3);
    let g = random_tensor(&[6, 8, 2, 2], &mut r);
    let dx = temporal_shift_backward(&g, &ShiftConfig::new(3, 4)).unwrap();
    for frame in 0..6 {
        let off = frame * 32;
        assert_eq!(
            &dx.data()[off + 16..off + 32],
            &g.data()[off + 16..off + 32]
        );
    }
}

#[test]
fn forward_then_adjoint_keeps_interior_steps() {
    // Applying the shift and then its adjoint moves each shifted value back
    // where it came from, except at the boundary steps it fell off.
    let t = 5;
    let mut r = rng(4);
    let x = random_tensor(&[t, 4, 1, 1], &mut r);
    let cfg = ShiftConfig::new(t, 4);
    let back = temporal_shift_backward(&temporal_shift(&x, &cfg).unwrap(), &cfg).unwrap();
    for step in 0..t {
        for ch in 0..2 {
            let lost = (ch == 0 && step == 0) || (ch == 1 && step == t - 1);
            let expect = if lost { 0.0 } else { x.data()[step * 4 + ch] };
            assert_eq!(
                back.data()[step * 4 + ch],
                expect,
                "step {step} channel {ch}"
            );
        }
    }
}

#[test]
fn rejects_indivisible_batch() {
    let x = Tensor::<f64>::zeros(&[7, 8, 1, 1]);
    let err = temporal_shift(&x, &ShiftConfig::new(3, 8)).unwrap_err();
    assert!(err.to_string().contains("not divisible"), "{err}");
}

fn shape_and_config() -> impl Strategy<Value = (usize, usize, usize, usize, u64)> {
    (
        1usize..=6,
        2usize..=16,
        prop::sample::select(vec![2usize, 4, 8]),
        1usize..=2,
        any::<u64>(),
    )
}

proptest! {
    #[test]
    fn adjoint_identity((t, c, fold_div, n, seed) in shape_and_config()) {
        let mut r = rng(seed);
        let cfg = ShiftConfig::new(t, fold_div);
        let x = random_tensor(&[n * t, c, 2, 2], &mut r);
        let y = random_tensor(&[n * t, c, 2, 2], &mut r);
        let lhs = temporal_shift(&x, &cfg).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&temporal_shift_backward(&y, &cfg).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn outputs_are_copies_or_zero((t, c, fold_div, n, seed) in shape_and_config()) {
        let mut r = rng(seed);
        let x = random_tensor(&[n * t, c, 2, 3], &mut r);
        let y = temporal_shift(&x, &ShiftConfig::new(t, fold_div)).unwrap();
        let mut pool: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        pool.sort_unstable();
        for v in y.data() {
            prop_assert!(*v == 0.0 || pool.binary_search(&v.to_bits()).is_ok());
        }
        // Each input value is used at most once.
        let mut out: Vec<u64> = y.data().iter().filter(|v| **v != 0.0).map(|v| v.to_bits()).collect();
        out.sort_unstable();
        out.dedup();
        prop_assert_eq!(out.len(), y.data().iter().filter(|v| **v != 0.0).count());
    }

    #[test]
    fn shift_is_linear((t, c, fold_div, n, seed) in shape_and_config(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut r = rng(seed);
        let cfg = ShiftConfig::new(t, fold_div);
        let x = random_tensor(&[n * t, c, 1, 2], &mut r);
        let y = random_tensor(&[n * t, c, 1, 2], &mut r);
        let combo = x.scale(a).add(&y.scale(b)).unwrap();
        let lhs = temporal_shift(&combo, &cfg).unwrap();
        let rhs = temporal_shift(&x, &cfg).unwrap().scale(a).add(&temporal_shift(&y, &cfg).unwrap().scale(b)).unwrap();
        prop_assert_eq!(lhs, rhs);
    }
}

fn block_model(shift: bool, seed: u64) -> tsm_core::model::Model<f64> {
    let cfg = ModelConfig {
        num_classes: 3,
        in_channels: 1,
        num_segments: 4,
        capacity: Capacity::Custom(StageLayout {
            widths: vec![8],
            blocks_per_stage: 2,
            cardinality: 1,
        }),
        dropout_rate: 0.0,
        shift_enabled: shift,
        fold_div: 4,
    };
    build_model::<f64>(&cfg, seed).unwrap()
}

/// The second block keeps its channel count and stride, so it has an
/// identity shortcut.
fn identity_block(model: &tsm_core::model::Model<f64>) -> &tsm_core::tsm::ResidualBlock {
    &model.blocks()[1]
}

#[test]
fn fresh_block_is_identity() {
    let model = block_model(true, 5);
    let x = random_tensor(&[8, 8, 4, 4], &mut rng(6));
    let y = shifted_residual_block(&x, identity_block(&model), model.params()).unwrap();
    assert_eq!(y, x);
}

fn randomized(shift: bool) -> tsm_core::model::Model<f64> {
    let mut model = block_model(shift, 7);
    tsm_core::gradcheck::randomize_params(&mut model, 8);
    model
}

/// Reorders the frames of every clip by `perm`.
fn permute(x: &Tensor<f64>, t: usize, perm: &[usize]) -> Tensor<f64> {
    let frame = x.len() / x.shape()[0];
    let mut out = x.clone();
    for clip in 0..x.shape()[0] / t {
        for (dst, &src) in perm.iter().enumerate() {
            let (d, s) = ((clip * t + dst) * frame, (clip * t + src) * frame);
            out.data_mut()[d..d + frame].copy_from_slice(&x.data()[s..s + frame]);
        }
    }
    out
}

#[test]
fn unshifted_block_is_permutation_equivariant() {
    let model = randomized(false);
    let block = identity_block(&model);
    let perm = [2, 0, 3, 1];
    let mut r = rng(9);
    for _ in 0..5 {
        let x = random_tensor(&[8, 8, 4, 4], &mut r);
        let y = shifted_residual_block(&x, block, model.params()).unwrap();
        let yp = shifted_residual_block(&permute(&x, 4, &perm), block, model.params()).unwrap();
        let diff = yp
            .add(&permute(&y, 4, &perm).scale(-1.0))
            .unwrap()
            .max_abs();
        assert!(diff < 1e-12, "difference {diff}");
    }
}

#[test]
fn shifted_block_breaks_equivariance() {
    let model = randomized(true);
    let block = identity_block(&model);
    let perm = [2, 0, 3, 1];
    let x = random_tensor(&[8, 8, 4, 4], &mut rng(10));
    let y = shifted_residual_block(&x, block, model.params()).unwrap();
    let yp = shifted_residual_block(&permute(&x, 4, &perm), block, model.params()).unwrap();
    let diff = yp
        .add(&permute(&y, 4, &perm).scale(-1.0))
        .unwrap()
        .max_abs();
    assert!(diff > 1e-6, "difference {diff}");
}
