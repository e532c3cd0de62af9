use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub fn relu<F: Float>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| v.max(F::zero()))
}

/// Passes the upstream gradient where the forward input was positive.
pub fn relu_backward<F: Float>(grad: &Tensor<F>, input: &Tensor<F>) -> Result<Tensor<F>> {
    grad.expect_same_shape("relu_backward", input)?;
    let data = grad
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > F::zero() { g } else { F::zero() })
        .collect();
    Tensor::from_vec(grad.shape(), data)
}

/// Row-wise softmax over `[N, K]` logits.
pub fn softmax<F: Float>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    let (_, k) = logits.dims2("softmax")?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let mut total = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::invalid(
            "cross_entropy",
            format!("{} labels for a batch of {n}", labels.len()),
        ));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: k,
        });
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` under row-wise probabilities.
pub fn cross_entropy<F: Float>(probs: &Tensor<F>, labels: &[usize]) -> Result<F> {
    let (n, k) = probs.dims2("cross_entropy")?;
    check_labels(labels, n, k)?;
    let total: F = probs
        .data()
        .chunks(k)
        .zip(labels)
        .map(|(row, &l)| -row[l].max(F::min_positive_value()).ln())
        .sum();
    Ok(total / F::of(n as f64))
}

/// Softmax followed by mean cross-entropy, computed through log-sum-exp.
/// Returns the loss and the probabilities needed by the backward pass.
pub fn softmax_cross_entropy<F: Float>(
    logits: &Tensor<F>,
    labels: &[usize],
) -> Result<(F, Tensor<F>)> {
    let (n, k) = logits.dims2("softmax_cross_entropy")?;
    check_labels(labels, n, k)?;
    let probs = softmax(logits)?;
    let total: F = logits
        .data()
        .chunks(k)
        .zip(labels)
        .map(|(row, &l)| {
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
            lse - row[l]
        })
        .sum();
    Ok((total / F::of(n as f64), probs))
}

/// Gradient of the mean softmax cross-entropy with respect to the logits.
pub fn softmax_cross_entropy_backward<F: Float>(
    probs: &Tensor<F>,
    labels: &[usize],
) -> Result<Tensor<F>> {
    let (n, k) = probs.dims2("softmax_cross_entropy_backward")?;
    check_labels(labels, n, k)?;
    let inv_n = F::of(1.0 / n as f64);
    let mut grad = probs.scale(inv_n);
    for (row, &l) in grad.data_mut().chunks_mut(k).zip(labels) {
        row[l] -= inv_n;
    }
    Ok(grad)
}
