mod common;

use common::{random_tensor, rng};
use tsm_core::gradcheck::randomize_params;
use tsm_core::model::{build_model, Capacity, Mode, Model, ModelConfig, StageLayout};
use tsm_core::Tensor;

/// Parameter count read off the layer table: 3x3 convolutions without bias,
/// a scale and shift per normalized channel, a 1x1 projection wherever the
/// stride or width changes, and a biased classifier.
fn closed_form(layout: &StageLayout, in_ch: usize, classes: usize) -> usize {
    let norm = |c: usize| 2 * c;
    let w0 = layout.widths[0];
    let mut total = w0 * in_ch * 9 + norm(w0);
    let mut width = w0;
    for &out in &layout.widths {
        for b in 0..layout.blocks_per_stage {
            let stride = if b == 0 { 2 } else { 1 };
            total += out * (width / layout.cardinality) * 9 + norm(out);
            total += out * out * 9 + norm(out);
            if stride != 1 || width != out {
                total += out * width + norm(out);
            }
            width = out;
        }
    }
    total + classes * width + classes
}

#[test]
fn small_model_parameter_count() {
    let cfg = ModelConfig::new(5, 1);
    let model = build_model::<f32>(&cfg, 0).unwrap();
    let expected = closed_form(&Capacity::Small.layout(), 1, 5);
    assert_eq!(expected, 174_933);
    assert_eq!(model.params().num_scalars(), expected);
}

#[test]
fn large_and_rgb_parameter_counts() {
    for (capacity, in_ch) in [
        (Capacity::Large, 1),
        (Capacity::Large, 3),
        (Capacity::Small, 3),
    ] {
        let cfg = ModelConfig {
            capacity: capacity.clone(),
            ..ModelConfig::new(5, in_ch)
        };
        let model = build_model::<f32>(&cfg, 0).unwrap();
        assert_eq!(
            model.params().num_scalars(),
            closed_form(&capacity.layout(), in_ch, 5)
        );
    }
}

fn tiny(shift: bool, segments: usize) -> ModelConfig {
    ModelConfig {
        num_classes: 4,
        in_channels: 1,
        num_segments: segments,
        capacity: Capacity::Custom(StageLayout {
            widths: vec![8, 16],
            blocks_per_stage: 1,
            cardinality: 1,
        }),
        dropout_rate: 0.5,
        shift_enabled: shift,
        fold_div: 4,
    }
}

fn randomized(cfg: &ModelConfig) -> Model<f64> {
    let mut m = build_model::<f64>(cfg, 1).unwrap();
    randomize_params(&mut m, 2);
    m
}

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
fn without_shift_logits_ignore_segment_order() {
    let model = randomized(&tiny(false, 5));
    let mut r = rng(3);
    for perm in [[4, 3, 2, 1, 0], [1, 3, 0, 4, 2], [2, 0, 1, 4, 3]] {
        let x = random_tensor(&[2 * 5, 1, 16, 16], &mut r);
        let a = model.forward(&x, Mode::Eval).unwrap();
        let b = model.forward(&permute(&x, 5, &perm), Mode::Eval).unwrap();
        let diff = a.add(&b.scale(-1.0)).unwrap().max_abs();
        assert!(diff < 1e-10, "permutation {perm:?} moved logits by {diff}");
    }
}

#[test]
fn with_shift_reversal_changes_logits() {
    let model = randomized(&tiny(true, 5));
    let mut r = rng(4);
    for _ in 0..3 {
        let x = random_tensor(&[5, 1, 16, 16], &mut r);
        let a = model.forward(&x, Mode::Eval).unwrap();
        let b = model
            .forward(&permute(&x, 5, &[4, 3, 2, 1, 0]), Mode::Eval)
            .unwrap();
        let diff = a.add(&b.scale(-1.0)).unwrap().max_abs();
        assert!(diff > 1e-6, "reversal moved logits by only {diff}");
    }
}

#[test]
fn identical_frames_give_single_frame_logits() {
    let clip_model = randomized(&tiny(false, 6));
    let frame_model = randomized(&tiny(false, 1));
    assert_eq!(clip_model.params(), frame_model.params());
    let frame = random_tensor(&[1, 1, 16, 16], &mut rng(5));
    let clip = Tensor::from_vec(&[6, 1, 16, 16], frame.data().repeat(6)).unwrap();
    let a = clip_model.forward(&clip, Mode::Eval).unwrap();
    let b = frame_model.forward(&frame, Mode::Eval).unwrap();
    let diff = a.add(&b.scale(-1.0)).unwrap().max_abs();
    assert!(diff < 1e-10, "{diff}");
}

#[test]
fn train_mode_is_deterministic_given_dropout_seed() {
    let model = randomized(&tiny(true, 2));
    let x = random_tensor(&[4, 1, 16, 16], &mut rng(6));
    let run = |seed| {
        model
            .forward(&x, Mode::Train { dropout_seed: seed })
            .unwrap()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
    assert_eq!(
        model.forward(&x, Mode::Eval).unwrap(),
        model.forward(&x, Mode::Eval).unwrap()
    );
}

#[test]
fn f32_model_tracks_f64_model() {
    let m64 = randomized(&tiny(true, 3));
    let m32: Model<f32> = m64.cast();
    let x = random_tensor(&[3, 1, 16, 16], &mut rng(7));
    let a = m64.forward(&x, Mode::Eval).unwrap();
    let b = m32.forward(&x.cast(), Mode::Eval).unwrap().cast::<f64>();
    let diff = a.add(&b.scale(-1.0)).unwrap().max_abs();
    assert!(diff < 1e-3 * (1.0 + a.max_abs()), "{diff}");
}
