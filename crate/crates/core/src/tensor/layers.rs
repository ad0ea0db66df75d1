//! Parameterized building blocks recorded onto a [`Graph`].

use rand::Rng;

use super::graph::{Conv2dSpec, Graph, Var};
use super::params::{he_uniform, lecun_uniform, ParamId, ParamStore};
use super::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Scaled for a following ReLU.
    He,
    /// Plain fan-in scaling.
    Lecun,
    Zeros,
}

fn init_tensor(rng: &mut impl Rng, shape: &[usize], fan_in: usize, init: Init) -> Tensor {
    match init {
        Init::He => he_uniform(rng, shape, fan_in),
        Init::Lecun => lecun_uniform(rng, shape, fan_in),
        Init::Zeros => Tensor::zeros(shape),
    }
}

/// Affine map over the last axis, weight stored as `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init: Init,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init_tensor(rng, &[in_dim, out_dim], in_dim, init),
            true,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]), true));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w, false, false)?;
        match self.bias {
            None => Ok(y),
            Some(b) => {
                let rank = g.shape(y).len();
                let mut shape = vec![1; rank];
                shape[rank - 1] = self.out_dim;
                let b = g.param(b);
                let b = g.reshape(b, &shape)?;
                g.add_broadcast(y, b)
            }
        }
    }
}

/// Square-kernel 2-D convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: Conv2dSpec,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        spec: Conv2dSpec,
        init: Init,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            init_tensor(rng, &[out_ch, in_ch, kernel, kernel], fan_in, init),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]), true);
        Conv2d { weight, bias, spec }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, w, Some(b), self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f32,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim]), true),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, self.eps)
    }
}
