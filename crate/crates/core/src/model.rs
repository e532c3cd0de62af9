//! Segment-based TSM classifier.
//!
//! Frames of `N` clips, `T` segments each, are stacked as `[N*T, C, H, W]`
//! and pass through a residual 2-D CNN whose blocks carry a temporal shift on
//! their residual branch. Per-frame logits are averaged over the `T` segments
//! to produce clip logits.
//!
//! Layer table (`w_s` = stage widths, `B` = blocks per stage, `G` = cardinality):
//!
//! | layer          | shape                                  |
//! |----------------|----------------------------------------|
//! | stem conv      | `w_0 x C_in x 3 x 3`, stride 2          |
//! | stem norm      | scale + shift, `w_0` each               |
//! | block conv1    | `w_out x w_in/G x 3 x 3`, stride 2 in the first block of a stage |
//! | block conv2    | `w_out x w_out x 3 x 3`                 |
//! | block norms    | scale + shift after each conv          |
//! | projection     | `w_out x w_in x 1 x 1` + norm, first block of each stage |
//! | classifier     | `K x w_last` weight + `K` bias          |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ConvLayer, Gradients, LinearLayer, NormLayer, ParamStore};
use crate::ops::{self, Conv2dParams, NormCache};
use crate::tensor::{Float, Tensor};
use crate::tsm::{BlockCache, ResidualBlock, ShiftConfig, DEFAULT_FOLD_DIV, DEFAULT_SEGMENTS};

/// Standard deviation of the freshly initialized classifier weights.
pub const CLASSIFIER_INIT_STD: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLayout {
    pub widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub cardinality: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capacity {
    Small,
    Large,
    Custom(StageLayout),
}

impl Capacity {
    pub fn layout(&self) -> StageLayout {
        match self {
            Capacity::Small => StageLayout {
                widths: vec![16, 32, 64],
                blocks_per_stage: 2,
                cardinality: 1,
            },
            Capacity::Large => StageLayout {
                widths: vec![32, 64, 128],
                blocks_per_stage: 3,
                cardinality: 4,
            },
            Capacity::Custom(layout) => layout.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub in_channels: usize,
    pub num_segments: usize,
    pub capacity: Capacity,
    pub dropout_rate: f64,
    pub shift_enabled: bool,
    pub fold_div: usize,
}

impl ModelConfig {
    pub fn new(num_classes: usize, in_channels: usize) -> Self {
        ModelConfig {
            num_classes,
            in_channels,
            num_segments: DEFAULT_SEGMENTS,
            capacity: Capacity::Small,
            dropout_rate: 0.5,
            shift_enabled: true,
            fold_div: DEFAULT_FOLD_DIV,
        }
    }

    pub fn shift_config(&self) -> Option<ShiftConfig> {
        self.shift_enabled
            .then(|| ShiftConfig::new(self.num_segments, self.fold_div))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("model config", msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes {} < 2", self.num_classes));
        }
        if self.in_channels == 0 {
            return bad("in_channels must be positive".into());
        }
        if self.num_segments == 0 {
            return bad("num_segments must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        let layout = self.capacity.layout();
        if layout.widths.is_empty() || layout.blocks_per_stage == 0 {
            return bad("capacity needs at least one stage with one block".into());
        }
        if layout.cardinality == 0 || layout.widths.iter().any(|w| w % layout.cardinality != 0) {
            return bad(format!(
                "cardinality {} must divide every stage width {:?}",
                layout.cardinality, layout.widths
            ));
        }
        if let Some(cfg) = self.shift_config() {
            for &w in &layout.widths {
                cfg.validate(w)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { dropout_seed: u64 },
}

/// Frames of `N` clips stacked as `[N*T, C, H, W]`.
#[derive(Clone, Debug)]
pub struct VideoBatch<F: Float = f32> {
    pub frames: Tensor<F>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Model<F: Float = f32> {
    cfg: ModelConfig,
    params: ParamStore<F>,
    stem_conv: ConvLayer,
    stem_norm: NormLayer,
    blocks: Vec<ResidualBlock>,
    head: LinearLayer,
}

/// Saved activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace<F: Float> {
    input: Tensor<F>,
    stem_norm: NormCache<F>,
    stem_out: Tensor<F>,
    blocks: Vec<BlockCache<F>>,
    features: Tensor<F>,
    dropped: Tensor<F>,
    mask: Tensor<F>,
}

/// Deterministically initializes a model from `seed`.
///
/// Convolution weights use He fan-in scaling, norms start at unit scale except
/// the last norm of every residual branch which starts at zero, and the
/// classifier starts near zero so an untrained model is close to uniform.
pub fn build_model<F: Float>(cfg: &ModelConfig, seed: u64) -> Result<Model<F>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let layout = cfg.capacity.layout();
    let stem_width = layout.widths[0];
    let stem_conv = ConvLayer::new(
        &mut params,
        "stem.conv",
        cfg.in_channels,
        stem_width,
        3,
        Conv2dParams::new(2, 1),
        &mut rng,
    );
    let stem_norm = NormLayer::new(&mut params, "stem.norm", stem_width, F::one());
    let mut blocks = Vec::new();
    let mut width = stem_width;
    for (s, &out) in layout.widths.iter().enumerate() {
        for b in 0..layout.blocks_per_stage {
            let stride = if b == 0 { 2 } else { 1 };
            blocks.push(ResidualBlock::new(
                &mut params,
                &format!("stage{s}.block{b}"),
                width,
                out,
                stride,
                layout.cardinality,
                cfg.shift_config(),
                &mut rng,
            )?);
            width = out;
        }
    }
    let head = LinearLayer::new(
        &mut params,
        "head",
        width,
        cfg.num_classes,
        CLASSIFIER_INIT_STD,
        &mut rng,
    );
    Ok(Model {
        cfg: cfg.clone(),
        params,
        stem_conv,
        stem_norm,
        blocks,
        head,
    })
}

impl<F: Float> Model<F> {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    /// Number of temporal shift call sites in the network.
    pub fn shift_sites(&self) -> usize {
        self.blocks.iter().filter(|b| b.shift().is_some()).count()
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<G: Float>(&self) -> Model<G> {
        let mut params = ParamStore::new();
        for (name, t) in self.params.iter() {
            params.add(name, t.cast());
        }
        Model {
            cfg: self.cfg.clone(),
            params,
            stem_conv: self.stem_conv.clone(),
            stem_norm: self.stem_norm.clone(),
            blocks: self.blocks.clone(),
            head: self.head.clone(),
        }
    }

    fn check_input(&self, frames: &Tensor<F>) -> Result<usize> {
        let (nt, c, _, _) = frames.dims4("model forward")?;
        if c != self.cfg.in_channels {
            return Err(Error::invalid(
                "model forward",
                format!(
                    "frames {:?} have {c} channels, model expects {}",
                    frames.shape(),
                    self.cfg.in_channels
                ),
            ));
        }
        let t = self.cfg.num_segments;
        if nt == 0 || nt % t != 0 {
            return Err(Error::invalid(
                "model forward",
                format!("leading extent {nt} is not a positive multiple of {t} segments"),
            ));
        }
        Ok(nt / t)
    }

    /// Clip logits `[N, num_classes]`.
    pub fn forward(&self, frames: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        self.forward_trace(frames, mode).map(|(y, _)| y)
    }

    pub fn forward_trace(&self, frames: &Tensor<F>, mode: Mode) -> Result<(Tensor<F>, Trace<F>)> {
        let clips = self.check_input(frames)?;
        let p = &self.params;
        let x = self.stem_conv.forward(p, frames)?;
        let (x, stem_norm) = self.stem_norm.forward(p, &x)?;
        let stem_out = ops::relu(&x);
        let mut x = stem_out.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, cache) = block.forward(p, &x)?;
            caches.push(cache);
            x = y;
        }
        let features = ops::relu(&x);
        let pooled = ops::global_avg_pool(&features)?;
        let (train, seed) = match mode {
            Mode::Eval => (false, 0),
            Mode::Train { dropout_seed } => (true, dropout_seed),
        };
        let (dropped, mask) = ops::dropout(&pooled, self.cfg.dropout_rate, seed, train)?;
        let frame_logits = self.head.forward(p, &dropped)?;
        let logits = segment_consensus(&frame_logits, clips)?;
        Ok((
            logits,
            Trace {
                input: frames.clone(),
                stem_norm,
                stem_out,
                blocks: caches,
                features,
                dropped,
                mask,
            },
        ))
    }

    /// Parameter gradients given the gradient of the loss w.r.t. clip logits.
    pub fn backward(&self, trace: &Trace<F>, grad_logits: &Tensor<F>) -> Result<Gradients<F>> {
        let p = &self.params;
        let mut grads = Gradients::zeros_like(p);
        let g = segment_consensus_backward(grad_logits, self.cfg.num_segments)?;
        let g = self.head.backward(p, &trace.dropped, &g, &mut grads)?;
        let g = ops::dropout_backward(&g, &trace.mask)?;
        let g = ops::global_avg_pool_backward(&g, trace.features.shape())?;
        let mut g = ops::relu_backward(&g, &trace.features)?;
        for (block, cache) in self.blocks.iter().zip(&trace.blocks).rev() {
            g = block.backward(p, cache, &g, &mut grads)?;
        }
        let g = ops::relu_backward(&g, &trace.stem_out)?;
        let g = self
            .stem_norm
            .backward(p, &trace.stem_norm, &g, &mut grads)?;
        self.stem_conv.backward(p, &trace.input, &g, &mut grads)?;
        Ok(grads)
    }

    /// Mean cross-entropy of a batch, clip probabilities and parameter gradients.
    pub fn loss_and_grads(
        &self,
        batch: &VideoBatch<F>,
        mode: Mode,
    ) -> Result<(F, Tensor<F>, Gradients<F>)> {
        let (logits, trace) = self.forward_trace(&batch.frames, mode)?;
        let (loss, probs) = ops::softmax_cross_entropy(&logits, &batch.labels)?;
        let grad = ops::softmax_cross_entropy_backward(&probs, &batch.labels)?;
        let grads = self.backward(&trace, &grad)?;
        Ok((loss, probs, grads))
    }
}

/// Averages `[N*T, K]` per-frame logits into `[N, K]` clip logits.
pub fn segment_consensus<F: Float>(frame_logits: &Tensor<F>, clips: usize) -> Result<Tensor<F>> {
    let (nt, k) = frame_logits.dims2("segment_consensus")?;
    if clips == 0 || nt % clips != 0 {
        return Err(Error::invalid(
            "segment_consensus",
            format!("{nt} frames cannot be split into {clips} clips"),
        ));
    }
    let t = nt / clips;
    let inv = F::of(1.0 / t as f64);
    let mut out = Tensor::zeros(&[clips, k]);
    for (clip, dst) in out.data_mut().chunks_mut(k).enumerate() {
        for row in frame_logits.data()[clip * t * k..(clip + 1) * t * k].chunks(k) {
            for (d, &v) in dst.iter_mut().zip(row) {
                *d += v;
            }
        }
        for d in dst.iter_mut() {
            *d *= inv;
        }
    }
    Ok(out)
}

pub fn segment_consensus_backward<F: Float>(
    grad: &Tensor<F>,
    segments: usize,
) -> Result<Tensor<F>> {
    let (n, k) = grad.dims2("segment_consensus_backward")?;
    let inv = F::of(1.0 / segments as f64);
    let mut out = Tensor::zeros(&[n * segments, k]);
    for (i, row) in out.data_mut().chunks_mut(k).enumerate() {
        let src = &grad.data()[(i / segments) * k..][..k];
        for (d, &g) in row.iter_mut().zip(src) {
            *d = g * inv;
        }
    }
    Ok(out)
}
