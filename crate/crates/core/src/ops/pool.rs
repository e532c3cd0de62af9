use crate::error::Result;
use crate::tensor::{Float, Tensor};

/// `[N, C, H, W] -> [N, C]` spatial mean.
pub fn global_avg_pool<F: Float>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4("global_avg_pool")?;
    let plane = h * w;
    let inv = F::of(1.0 / plane as f64);
    let data = x
        .data()
        .chunks(plane)
        .map(|p| p.iter().copied().sum::<F>() * inv)
        .collect();
    Tensor::from_vec(&[n, c], data)
}

pub fn global_avg_pool_backward<F: Float>(
    grad: &Tensor<F>,
    input_shape: &[usize],
) -> Result<Tensor<F>> {
    let [n, c, h, w]: [usize; 4] = input_shape.try_into().map_err(|_| {
        crate::Error::invalid("global_avg_pool_backward", "input shape must be rank 4")
    })?;
    grad.expect_shape("global_avg_pool_backward", &[n, c])?;
    let plane = h * w;
    let inv = F::of(1.0 / plane as f64);
    let mut dx = Tensor::zeros(input_shape);
    for (dst, &g) in dx.data_mut().chunks_mut(plane).zip(grad.data()) {
        dst.fill(g * inv);
    }
    Ok(dx)
}
