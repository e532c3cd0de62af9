use rand::Rng;

use super::{temporal_shift, temporal_shift_backward, ShiftConfig};
use crate::error::{Error, Result};
use crate::nn::{ConvLayer, Gradients, NormLayer, ParamStore};
use crate::ops::{self, Conv2dParams, NormCache};
use crate::tensor::{Float, Tensor};

/// Residual block `y = shortcut(x) + F(shift(x))` with
/// `F = conv3x3 -> norm -> relu -> conv3x3 -> norm`.
///
/// The shift sits on the residual branch only; the shortcut sees the unshifted
/// input. The shortcut is the identity unless the block changes resolution or
/// width, in which case it is a strided 1x1 convolution followed by a norm.
/// The first convolution is grouped with `cardinality` groups.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    shift: Option<ShiftConfig>,
    in_ch: usize,
    out_ch: usize,
    conv1: ConvLayer,
    norm1: NormLayer,
    conv2: ConvLayer,
    norm2: NormLayer,
    proj: Option<(ConvLayer, NormLayer)>,
}

/// Activations saved by [`ResidualBlock::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct BlockCache<F: Float> {
    input: Tensor<F>,
    shifted: Option<Tensor<F>>,
    norm1: NormCache<F>,
    hidden: Tensor<F>,
    norm2: NormCache<F>,
    proj: Option<NormCache<F>>,
}

impl ResidualBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Float, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        cardinality: usize,
        shift: Option<ShiftConfig>,
        rng: &mut R,
    ) -> Result<Self> {
        if cardinality == 0
            || !in_ch.is_multiple_of(cardinality)
            || !out_ch.is_multiple_of(cardinality)
        {
            return Err(Error::invalid(
                "residual block",
                format!("cardinality {cardinality} must divide {in_ch} and {out_ch} channels"),
            ));
        }
        if let Some(cfg) = &shift {
            cfg.validate(in_ch)?;
        }
        let conv1 = ConvLayer::new(
            store,
            &format!("{name}.conv1"),
            in_ch,
            out_ch,
            3,
            Conv2dParams::new(stride, 1).with_groups(cardinality),
            rng,
        );
        let norm1 = NormLayer::new(store, &format!("{name}.norm1"), out_ch, F::one());
        let conv2 = ConvLayer::new(
            store,
            &format!("{name}.conv2"),
            out_ch,
            out_ch,
            3,
            Conv2dParams::new(1, 1),
            rng,
        );
        // Zero scale makes the fresh block an identity map.
        let norm2 = NormLayer::new(store, &format!("{name}.norm2"), out_ch, F::zero());
        let proj = (stride != 1 || in_ch != out_ch).then(|| {
            let conv = ConvLayer::new(
                store,
                &format!("{name}.proj"),
                in_ch,
                out_ch,
                1,
                Conv2dParams::new(stride, 0),
                rng,
            );
            let norm = NormLayer::new(store, &format!("{name}.proj_norm"), out_ch, F::one());
            (conv, norm)
        });
        Ok(ResidualBlock {
            shift,
            in_ch,
            out_ch,
            conv1,
            norm1,
            conv2,
            norm2,
            proj,
        })
    }

    pub fn shift(&self) -> Option<&ShiftConfig> {
        self.shift.as_ref()
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn forward<F: Float>(
        &self,
        store: &ParamStore<F>,
        x: &Tensor<F>,
    ) -> Result<(Tensor<F>, BlockCache<F>)> {
        let (_, c, _, _) = x.dims4("residual block")?;
        if c != self.in_ch {
            return Err(Error::invalid(
                "residual block",
                format!(
                    "input {:?} has {c} channels, block expects {}",
                    x.shape(),
                    self.in_ch
                ),
            ));
        }
        let shifted = match &self.shift {
            Some(cfg) => Some(temporal_shift(x, cfg)?),
            None => None,
        };
        let branch_in = shifted.as_ref().unwrap_or(x);
        let h = self.conv1.forward(store, branch_in)?;
        let (h, norm1) = self.norm1.forward(store, &h)?;
        let hidden = ops::relu(&h);
        let h = self.conv2.forward(store, &hidden)?;
        let (branch, norm2) = self.norm2.forward(store, &h)?;

        let (mut y, proj) = match &self.proj {
            Some((conv, norm)) => {
                let s = conv.forward(store, x)?;
                let (s, cache) = norm.forward(store, &s)?;
                (s, Some(cache))
            }
            None => (x.clone(), None),
        };
        if y.shape() != branch.shape() {
            return Err(Error::shape("residual block", y.shape(), branch.shape()));
        }
        y.add_assign(&branch)?;
        Ok((
            y,
            BlockCache {
                input: x.clone(),
                shifted,
                norm1,
                hidden,
                norm2,
                proj,
            },
        ))
    }

    pub fn backward<F: Float>(
        &self,
        store: &ParamStore<F>,
        cache: &BlockCache<F>,
        grad: &Tensor<F>,
        grads: &mut Gradients<F>,
    ) -> Result<Tensor<F>> {
        let g = self.norm2.backward(store, &cache.norm2, grad, grads)?;
        let g = self.conv2.backward(store, &cache.hidden, &g, grads)?;
        let g = ops::relu_backward(&g, &cache.hidden)?;
        let g = self.norm1.backward(store, &cache.norm1, &g, grads)?;
        let branch_in = cache.shifted.as_ref().unwrap_or(&cache.input);
        let g = self.conv1.backward(store, branch_in, &g, grads)?;
        let mut dx = match &self.shift {
            Some(cfg) => temporal_shift_backward(&g, cfg)?,
            None => g,
        };
        match (&self.proj, &cache.proj) {
            (Some((conv, norm)), Some(norm_cache)) => {
                let s = norm.backward(store, norm_cache, grad, grads)?;
                let s = conv.backward(store, &cache.input, &s, grads)?;
                dx.add_assign(&s)?;
            }
            _ => dx.add_assign(grad)?,
        }
        Ok(dx)
    }
}

/// Applies `block` to `x`, discarding the backward cache.
pub fn shifted_residual_block<F: Float>(
    x: &Tensor<F>,
    block: &ResidualBlock,
    store: &ParamStore<F>,
) -> Result<Tensor<F>> {
    block.forward(store, x).map(|(y, _)| y)
}
