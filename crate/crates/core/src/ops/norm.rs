//! Per-channel standardization over the batch followed by a learnable affine.
//!
//! Statistics always come from the batch being processed, in training and in
//! evaluation alike; there are no running averages.

use crate::error::Result;
use crate::tensor::{Float, Tensor};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct NormCache<F: Float> {
    x_hat: Tensor<F>,
    inv_std: Vec<F>,
}

#[derive(Clone, Debug)]
pub struct NormGrads<F: Float> {
    pub input: Tensor<F>,
    pub scale: Tensor<F>,
    pub shift: Tensor<F>,
}

#[allow(clippy::needless_range_loop)]
pub fn affine_norm<F: Float>(
    x: &Tensor<F>,
    scale: &Tensor<F>,
    shift: &Tensor<F>,
) -> Result<(Tensor<F>, NormCache<F>)> {
    let (n, c, h, w) = x.dims4("affine_norm")?;
    scale.expect_shape("affine_norm scale", &[c])?;
    shift.expect_shape("affine_norm shift", &[c])?;
    let plane = h * w;
    let count = F::of((n * plane) as f64);
    let eps = F::of(NORM_EPS);
    let mut x_hat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(c);
    let xd = x.data();
    for ch in 0..c {
        let planes = (0..n).map(|s| &xd[(s * c + ch) * plane..][..plane]);
        let mean = planes.clone().flatten().copied().sum::<F>() / count;
        let var = planes
            .flatten()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<F>()
            / count;
        let istd = (var + eps).sqrt().recip();
        inv_std.push(istd);
        let (g, b) = (scale.data()[ch], shift.data()[ch]);
        for s in 0..n {
            let off = (s * c + ch) * plane;
            for i in off..off + plane {
                let xh = (xd[i] - mean) * istd;
                x_hat.data_mut()[i] = xh;
                y.data_mut()[i] = g * xh + b;
            }
        }
    }
    Ok((y, NormCache { x_hat, inv_std }))
}

pub fn affine_norm_backward<F: Float>(
    grad: &Tensor<F>,
    cache: &NormCache<F>,
    scale: &Tensor<F>,
) -> Result<NormGrads<F>> {
    grad.expect_same_shape("affine_norm_backward", &cache.x_hat)?;
    let (n, c, h, w) = grad.dims4("affine_norm_backward")?;
    scale.expect_shape("affine_norm_backward scale", &[c])?;
    let plane = h * w;
    let count = F::of((n * plane) as f64);
    let gd = grad.data();
    let xh = cache.x_hat.data();
    let mut dx = Tensor::zeros(grad.shape());
    let mut dscale = Tensor::zeros(&[c]);
    let mut dshift = Tensor::zeros(&[c]);
    for ch in 0..c {
        let mut sum_g = F::zero();
        let mut sum_gx = F::zero();
        for s in 0..n {
            let off = (s * c + ch) * plane;
            for i in off..off + plane {
                sum_g += gd[i];
                sum_gx += gd[i] * xh[i];
            }
        }
        dshift.data_mut()[ch] = sum_g;
        dscale.data_mut()[ch] = sum_gx;
        let k = scale.data()[ch] * cache.inv_std[ch];
        let (mg, mgx) = (sum_g / count, sum_gx / count);
        for s in 0..n {
            let off = (s * c + ch) * plane;
            for i in off..off + plane {
                dx.data_mut()[i] = k * (gd[i] - mg - xh[i] * mgx);
            }
        }
    }
    Ok(NormGrads {
        input: dx,
        scale: dscale,
        shift: dshift,
    })
}
