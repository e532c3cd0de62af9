//! Parameter storage and the parameterized layers the model is built from.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops::{self, Conv2dParams, NormCache};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in creation order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<F: Float> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor<F>> {
        self.tensors
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect()
    }

    /// Replaces every tensor with `values`, which must match names and shapes.
    pub fn load(&mut self, values: Vec<(String, Tensor<F>)>) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(Error::invalid(
                "load parameters",
                format!(
                    "expected {} tensors, got {}",
                    self.tensors.len(),
                    values.len()
                ),
            ));
        }
        for (i, (name, t)) in values.iter().enumerate() {
            if *name != self.names[i] {
                return Err(Error::invalid(
                    "load parameters",
                    format!("tensor #{i} is `{name}`, expected `{}`", self.names[i]),
                ));
            }
            t.expect_same_shape("load parameters", &self.tensors[i])?;
        }
        self.tensors = values.into_iter().map(|(_, t)| t).collect();
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Gradients<F: Float> {
    tensors: Vec<Tensor<F>>,
}

impl<F: Float> Gradients<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Gradients {
            tensors: store.zeros_like(),
        }
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor<F>) -> Result<()> {
        self.tensors[id.0].add_assign(grad)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }
}

/// Normal initialization with standard deviation `sqrt(2 / fan_in)`.
pub fn he_normal<F: Float, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<F> {
    normal(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

pub fn normal<F: Float, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<F> {
    let dist = Normal::new(0.0, std).expect("finite standard deviation");
    Tensor::from_fn(shape, |_| F::of(dist.sample(rng)))
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub params: Conv2dParams,
}

impl ConvLayer {
    /// Registers an `out x in/groups x k x k` kernel (no bias) with He init.
    pub fn new<F: Float, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        params: Conv2dParams,
        rng: &mut R,
    ) -> Self {
        let per_group = in_ch / params.groups;
        let shape = [out_ch, per_group, kernel, kernel];
        let weight = store.add(
            format!("{name}.weight"),
            he_normal(&shape, per_group * kernel * kernel, rng),
        );
        ConvLayer { weight, params }
    }

    pub fn forward<F: Float>(&self, store: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        ops::conv2d(x, store.get(self.weight), None, self.params)
    }

    pub fn backward<F: Float>(
        &self,
        store: &ParamStore<F>,
        x: &Tensor<F>,
        grad: &Tensor<F>,
        grads: &mut Gradients<F>,
    ) -> Result<Tensor<F>> {
        let g = ops::conv2d_backward(x, store.get(self.weight), grad, self.params)?;
        grads.accumulate(self.weight, &g.weight)?;
        Ok(g.input)
    }
}

#[derive(Clone, Debug)]
pub struct NormLayer {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl NormLayer {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        init_scale: F,
    ) -> Self {
        NormLayer {
            scale: store.add(
                format!("{name}.scale"),
                Tensor::full(&[channels], init_scale),
            ),
            shift: store.add(format!("{name}.shift"), Tensor::zeros(&[channels])),
        }
    }

    pub fn forward<F: Float>(
        &self,
        store: &ParamStore<F>,
        x: &Tensor<F>,
    ) -> Result<(Tensor<F>, NormCache<F>)> {
        ops::affine_norm(x, store.get(self.scale), store.get(self.shift))
    }

    pub fn backward<F: Float>(
        &self,
        store: &ParamStore<F>,
        cache: &NormCache<F>,
        grad: &Tensor<F>,
        grads: &mut Gradients<F>,
    ) -> Result<Tensor<F>> {
        let g = ops::affine_norm_backward(grad, cache, store.get(self.scale))?;
        grads.accumulate(self.scale, &g.scale)?;
        grads.accumulate(self.shift, &g.shift)?;
        Ok(g.input)
    }
}

#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearLayer {
    pub fn new<F: Float, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        weight_std: f64,
        rng: &mut R,
    ) -> Self {
        LinearLayer {
            weight: store.add(
                format!("{name}.weight"),
                normal(&[fan_out, fan_in], weight_std, rng),
            ),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward<F: Float>(&self, store: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        ops::linear(x, store.get(self.weight), store.get(self.bias))
    }

    pub fn backward<F: Float>(
        &self,
        store: &ParamStore<F>,
        x: &Tensor<F>,
        grad: &Tensor<F>,
        grads: &mut Gradients<F>,
    ) -> Result<Tensor<F>> {
        let g = ops::linear_backward(x, store.get(self.weight), grad)?;
        grads.accumulate(self.weight, &g.weight)?;
        grads.accumulate(self.bias, &g.bias)?;
        Ok(g.input)
    }
}
