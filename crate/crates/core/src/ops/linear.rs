use crate::error::Result;
use crate::tensor::{gemm, Float, Tensor, Transpose};

#[derive(Clone, Debug)]
pub struct LinearGrads<F: Float> {
    pub input: Tensor<F>,
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

fn check<F: Float>(x: &Tensor<F>, weight: &Tensor<F>) -> Result<(usize, usize, usize)> {
    let (n, fan_in) = x.dims2("linear")?;
    let (fan_out, w_in) = weight.dims2("linear")?;
    if w_in != fan_in {
        return Err(crate::Error::invalid(
            "linear",
            format!(
                "input {:?} incompatible with weight {:?}",
                x.shape(),
                weight.shape()
            ),
        ));
    }
    Ok((n, fan_in, fan_out))
}

/// `y = x W^T + b` with `x: [N, in]`, `W: [out, in]`, `b: [out]`.
pub fn linear<F: Float>(x: &Tensor<F>, weight: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, fan_in, fan_out) = check(x, weight)?;
    bias.expect_shape("linear bias", &[fan_out])?;
    let mut y = Tensor::zeros(&[n, fan_out]);
    for row in y.data_mut().chunks_mut(fan_out) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        n,
        fan_in,
        fan_out,
        x.data(),
        Transpose::No,
        weight.data(),
        Transpose::Yes,
        y.data_mut(),
        true,
    );
    Ok(y)
}

pub fn linear_backward<F: Float>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    grad: &Tensor<F>,
) -> Result<LinearGrads<F>> {
    let (n, fan_in, fan_out) = check(x, weight)?;
    grad.expect_shape("linear_backward", &[n, fan_out])?;
    let mut dx = Tensor::zeros(&[n, fan_in]);
    let mut dw = Tensor::zeros(&[fan_out, fan_in]);
    let mut db = Tensor::zeros(&[fan_out]);
    gemm(
        n,
        fan_out,
        fan_in,
        grad.data(),
        Transpose::No,
        weight.data(),
        Transpose::No,
        dx.data_mut(),
        false,
    );
    gemm(
        fan_out,
        n,
        fan_in,
        grad.data(),
        Transpose::Yes,
        x.data(),
        Transpose::No,
        dw.data_mut(),
        false,
    );
    for row in grad.data().chunks(fan_out) {
        for (b, &g) in db.data_mut().iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(LinearGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}
