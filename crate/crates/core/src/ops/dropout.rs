use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Inverted dropout. Returns the output and the per-element multiplier
/// (`0` or `1 / (1 - rate)`) used again by [`dropout_backward`].
///
/// Outside training mode this is the identity and the mask is all ones.
pub fn dropout<F: Float>(
    x: &Tensor<F>,
    rate: f64,
    seed: u64,
    train: bool,
) -> Result<(Tensor<F>, Tensor<F>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(
            "dropout",
            format!("rate {rate} outside [0, 1)"),
        ));
    }
    if !train || rate == 0.0 {
        return Ok((x.clone(), Tensor::full(x.shape(), F::one())));
    }
    let keep = F::of(1.0 / (1.0 - rate));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = Tensor::from_fn(x.shape(), |_| {
        if rng.random::<f64>() < rate {
            F::zero()
        } else {
            keep
        }
    });
    let y = Tensor::from_vec(
        x.shape(),
        x.data()
            .iter()
            .zip(mask.data())
            .map(|(&v, &m)| v * m)
            .collect(),
    )?;
    Ok((y, mask))
}

pub fn dropout_backward<F: Float>(grad: &Tensor<F>, mask: &Tensor<F>) -> Result<Tensor<F>> {
    grad.expect_same_shape("dropout_backward", mask)?;
    Tensor::from_vec(
        grad.shape(),
        grad.data()
            .iter()
            .zip(mask.data())
            .map(|(&g, &m)| g * m)
            .collect(),
    )
}
