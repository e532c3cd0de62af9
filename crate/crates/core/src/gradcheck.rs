//! Central finite-difference checks of every backward pass, in `f64`.
//!
//! Each operation is wrapped in a scalar loss `L = sum(r * op(x))` with a
//! fixed random `r`, so the analytic input gradient is `op_backward(r)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::{build_model, Capacity, Mode, Model, ModelConfig, StageLayout, VideoBatch};
use crate::ops::{self, Conv2dParams};
use crate::seed::derive_seed;
use crate::tensor::Tensor;
use crate::tsm::{temporal_shift, temporal_shift_backward, ShiftConfig};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Pass threshold for single operations.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Pass threshold for whole-model checks.
pub const MODEL_TOLERANCE: f64 = 1e-4;

/// Below this magnitude, errors are measured in absolute terms.
const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(
    x: &Tensor<f64>,
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
) -> Result<Tensor<f64>> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - STEP;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * STEP);
    }
    Ok(out)
}

fn compare(
    name: &str,
    analytic: &[&Tensor<f64>],
    numeric: &[Tensor<f64>],
    tolerance: f64,
) -> GradCheck {
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&x, &y) in a.data().iter().zip(n.data()) {
            worst = worst.max(relative_error(x, y));
            entries += 1;
        }
    }
    GradCheck {
        name: name.to_string(),
        max_rel_error: worst,
        entries,
        tolerance,
    }
}

struct Sampler(ChaCha8Rng);

impl Sampler {
    fn normal(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| self.0.sample(StandardNormal))
    }

    /// Normal values pushed at least `gap` away from zero.
    fn away_from_zero(&mut self, shape: &[usize], gap: f64) -> Tensor<f64> {
        self.normal(shape).map(|v| v + gap * v.signum())
    }
}

fn weighted(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.dot(r).expect("r is drawn with the output shape")
}

fn check_conv(
    s: &mut Sampler,
    name: &str,
    p: Conv2dParams,
    c_in: usize,
    c_out: usize,
) -> Result<GradCheck> {
    let x = s.normal(&[2, c_in, 5, 5]);
    let w = s.normal(&[c_out, c_in / p.groups, 3, 3]);
    let b = s.normal(&[c_out]);
    let y = ops::conv2d(&x, &w, Some(&b), p)?;
    let r = s.normal(y.shape());
    let g = ops::conv2d_backward(&x, &w, &r, p)?;
    let nx = numeric_grad(&x, |x| Ok(weighted(&ops::conv2d(x, &w, Some(&b), p)?, &r)))?;
    let nw = numeric_grad(&w, |w| Ok(weighted(&ops::conv2d(&x, w, Some(&b), p)?, &r)))?;
    let nb = numeric_grad(&b, |b| Ok(weighted(&ops::conv2d(&x, &w, Some(b), p)?, &r)))?;
    Ok(compare(
        name,
        &[&g.input, &g.weight, &g.bias],
        &[nx, nw, nb],
        OP_TOLERANCE,
    ))
}

fn check_norm(s: &mut Sampler) -> Result<GradCheck> {
    let x = s.normal(&[3, 2, 3, 3]);
    let scale = s.normal(&[2]);
    let shift = s.normal(&[2]);
    let (y, cache) = ops::affine_norm(&x, &scale, &shift)?;
    let r = s.normal(y.shape());
    let g = ops::affine_norm_backward(&r, &cache, &scale)?;
    let f = |x: &Tensor<f64>, a: &Tensor<f64>, b: &Tensor<f64>| -> Result<f64> {
        Ok(weighted(&ops::affine_norm(x, a, b)?.0, &r))
    };
    let nx = numeric_grad(&x, |x| f(x, &scale, &shift))?;
    let ns = numeric_grad(&scale, |a| f(&x, a, &shift))?;
    let nb = numeric_grad(&shift, |b| f(&x, &scale, b))?;
    Ok(compare(
        "affine_norm",
        &[&g.input, &g.scale, &g.shift],
        &[nx, ns, nb],
        OP_TOLERANCE,
    ))
}

fn check_linear(s: &mut Sampler) -> Result<GradCheck> {
    let x = s.normal(&[4, 6]);
    let w = s.normal(&[3, 6]);
    let b = s.normal(&[3]);
    let r = s.normal(&[4, 3]);
    let g = ops::linear_backward(&x, &w, &r)?;
    let nx = numeric_grad(&x, |x| Ok(weighted(&ops::linear(x, &w, &b)?, &r)))?;
    let nw = numeric_grad(&w, |w| Ok(weighted(&ops::linear(&x, w, &b)?, &r)))?;
    let nb = numeric_grad(&b, |b| Ok(weighted(&ops::linear(&x, &w, b)?, &r)))?;
    Ok(compare(
        "linear",
        &[&g.input, &g.weight, &g.bias],
        &[nx, nw, nb],
        OP_TOLERANCE,
    ))
}

fn check_relu(s: &mut Sampler) -> Result<GradCheck> {
    let x = s.away_from_zero(&[2, 3, 4, 4], 0.1);
    let r = s.normal(x.shape());
    let g = ops::relu_backward(&r, &x)?;
    let n = numeric_grad(&x, |x| Ok(weighted(&ops::relu(x), &r)))?;
    Ok(compare("relu", &[&g], &[n], OP_TOLERANCE))
}

fn check_pool(s: &mut Sampler) -> Result<GradCheck> {
    let x = s.normal(&[2, 3, 4, 5]);
    let r = s.normal(&[2, 3]);
    let g = ops::global_avg_pool_backward(&r, x.shape())?;
    let n = numeric_grad(&x, |x| Ok(weighted(&ops::global_avg_pool(x)?, &r)))?;
    Ok(compare("global_avg_pool", &[&g], &[n], OP_TOLERANCE))
}

fn check_cross_entropy(s: &mut Sampler) -> Result<GradCheck> {
    let logits = s.normal(&[4, 5]);
    let labels = [0, 3, 4, 1];
    let (_, probs) = ops::softmax_cross_entropy(&logits, &labels)?;
    let g = ops::softmax_cross_entropy_backward(&probs, &labels)?;
    let n = numeric_grad(&logits, |l| Ok(ops::softmax_cross_entropy(l, &labels)?.0))?;
    Ok(compare("softmax_cross_entropy", &[&g], &[n], OP_TOLERANCE))
}

fn check_dropout(s: &mut Sampler) -> Result<GradCheck> {
    let x = s.normal(&[4, 8]);
    let r = s.normal(x.shape());
    let (_, mask) = ops::dropout(&x, 0.5, 11, true)?;
    let g = ops::dropout_backward(&r, &mask)?;
    let n = numeric_grad(&x, |x| Ok(weighted(&ops::dropout(x, 0.5, 11, true)?.0, &r)))?;
    Ok(compare("dropout", &[&g], &[n], OP_TOLERANCE))
}

fn check_shift(s: &mut Sampler) -> Result<GradCheck> {
    let cfg = ShiftConfig::new(3, 4);
    let x = s.normal(&[6, 8, 2, 2]);
    let r = s.normal(x.shape());
    let g = temporal_shift_backward(&r, &cfg)?;
    let n = numeric_grad(&x, |x| Ok(weighted(&temporal_shift(x, &cfg)?, &r)))?;
    Ok(compare("temporal_shift", &[&g], &[n], OP_TOLERANCE))
}

fn check_consensus(s: &mut Sampler) -> Result<GradCheck> {
    let x = s.normal(&[6, 4]);
    let r = s.normal(&[2, 4]);
    let g = crate::model::segment_consensus_backward(&r, 3)?;
    let n = numeric_grad(&x, |x| {
        Ok(weighted(&crate::model::segment_consensus(x, 2)?, &r))
    })?;
    Ok(compare("segment_consensus", &[&g], &[n], OP_TOLERANCE))
}

/// Configuration of the micro model used for end-to-end checks: one stage of
/// two 4-channel blocks on 8x8 frames with `T = 3`.
pub fn micro_config(cardinality: usize, shift: bool) -> ModelConfig {
    ModelConfig {
        num_classes: 3,
        in_channels: 1,
        num_segments: 3,
        capacity: Capacity::Custom(StageLayout {
            widths: vec![4],
            blocks_per_stage: 2,
            cardinality,
        }),
        dropout_rate: 0.5,
        shift_enabled: shift,
        fold_div: 4,
    }
}

/// Replaces every parameter with a random value so that no gradient is
/// trivially zero (fresh residual branches have zero output scale).
pub fn randomize_params(model: &mut Model<f64>, seed: u64) {
    let mut s = Sampler(ChaCha8Rng::seed_from_u64(seed));
    for t in model.params_mut().tensors_mut() {
        *t = s.normal(t.shape()).scale(0.5);
    }
}

/// Loss gradient of `model` w.r.t. every parameter against finite differences.
pub fn check_model(
    name: &str,
    mut model: Model<f64>,
    batch: &VideoBatch<f64>,
    mode: Mode,
) -> Result<GradCheck> {
    let (_, _, grads) = model.loss_and_grads(batch, mode)?;
    let mut numeric = Vec::with_capacity(model.params().len());
    for i in 0..model.params().len() {
        let original = model.params().tensors()[i].clone();
        let n = numeric_grad(&original, |p| {
            model.params_mut().tensors_mut()[i] = p.clone();
            let logits = model.forward(&batch.frames, mode)?;
            Ok(ops::softmax_cross_entropy(&logits, &batch.labels)?.0)
        })?;
        model.params_mut().tensors_mut()[i] = original;
        numeric.push(n);
    }
    let analytic: Vec<&Tensor<f64>> = grads.tensors().iter().collect();
    Ok(compare(name, &analytic, &numeric, MODEL_TOLERANCE))
}

fn micro_model(cardinality: usize, seed: u64) -> Result<GradCheck> {
    let cfg = micro_config(cardinality, true);
    let mut model = build_model::<f64>(&cfg, seed)?;
    randomize_params(&mut model, derive_seed(seed, &[1]));
    let mut s = Sampler(ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2])));
    let batch = VideoBatch {
        frames: s.normal(&[2 * 3, 1, 8, 8]),
        labels: vec![0, 2],
        ids: vec!["a".into(), "b".into()],
    };
    let mode = Mode::Train {
        dropout_seed: derive_seed(seed, &[3]),
    };
    check_model(
        &format!("micro_model(cardinality={cardinality})"),
        model,
        &batch,
        mode,
    )
}

/// Runs every check with inputs drawn from `seed`.
pub fn run_all(seed: u64) -> Result<Vec<GradCheck>> {
    let mut s = Sampler(ChaCha8Rng::seed_from_u64(seed));
    Ok(vec![
        check_conv(&mut s, "conv2d", Conv2dParams::new(1, 1), 2, 3)?,
        check_conv(
            &mut s,
            "conv2d(stride=2, groups=2)",
            Conv2dParams::new(2, 1).with_groups(2),
            4,
            6,
        )?,
        check_norm(&mut s)?,
        check_linear(&mut s)?,
        check_relu(&mut s)?,
        check_pool(&mut s)?,
        check_cross_entropy(&mut s)?,
        check_dropout(&mut s)?,
        check_shift(&mut s)?,
        check_consensus(&mut s)?,
        micro_model(1, seed)?,
        micro_model(2, seed)?,
    ])
}
