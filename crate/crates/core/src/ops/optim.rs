use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdHyper {
    fn default() -> Self {
        SgdHyper {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

/// One SGD-with-momentum update:
/// `v <- momentum * v + (g + weight_decay * p)`, `p <- p - lr * v`.
///
/// All gradients are validated before any parameter is touched, so a
/// non-finite gradient leaves `params` and `velocity` unchanged.
pub fn sgd_step<F: Float>(
    params: &mut [Tensor<F>],
    grads: &[Tensor<F>],
    velocity: &mut [Tensor<F>],
    hyper: &SgdHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::invalid(
            "sgd_step",
            format!(
                "{} parameters, {} gradients, {} velocity buffers",
                params.len(),
                grads.len(),
                velocity.len()
            ),
        ));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(velocity.iter()).enumerate() {
        g.expect_same_shape("sgd_step", p)?;
        v.expect_same_shape("sgd_step", p)?;
        if !g.all_finite() {
            return Err(Error::NonFinite {
                what: format!("gradient of parameter #{i}"),
            });
        }
    }
    let lr = F::of(hyper.lr);
    let mu = F::of(hyper.momentum);
    let wd = F::of(hyper.weight_decay);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv + (gv + wd * *pv);
            *pv -= lr * *vv;
        }
    }
    Ok(())
}
