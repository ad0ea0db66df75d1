use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Non-local self-attention over the spatial positions of a feature map.
///
/// Queries, keys and values are 1×1 convolutions; the attended values pass
/// through an output projection and are added back to the input. The output
/// projection starts at zero, so a fresh block is the identity.
#[derive(Clone, Debug)]
pub struct SelfAttention2d {
    channels: usize,
    key_dim: usize,
    heads: usize,
    q: (ParamId, ParamId),
    k: (ParamId, ParamId),
    v: (ParamId, ParamId),
    out: ParamId,
}

pub struct AttentionOutput {
    pub output: Var,
    /// `[N·heads, P, P]`, one softmax row per query position.
    pub weights: Var,
}

impl SelfAttention2d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        key_dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 || key_dim % heads != 0 {
            return Err(Error::Config(format!(
                "attention with {channels} channels and {key_dim} key channels cannot be split into {heads} heads"
            )));
        }
        let mut proj = |suffix: &str, rows: usize| {
            let w = store.add(
                format!("{name}.{suffix}.weight"),
                crate::tensor::lecun_uniform(rng, &[rows, channels], channels),
                true,
            );
            let b = store.add(format!("{name}.{suffix}.bias"), Tensor::zeros(&[rows, 1]), true);
            (w, b)
        };
        let q = proj("query", key_dim);
        let k = proj("key", key_dim);
        let v = proj("value", channels);
        let out = store.add(format!("{name}.out.weight"), Tensor::zeros(&[channels, channels]), true);
        Ok(SelfAttention2d {
            channels,
            key_dim,
            heads,
            q,
            k,
            v,
            out,
        })
    }

    /// `x`: `[N, C, H, W]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<AttentionOutput> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::Shape(format!(
                "attention expects [N, {}, H, W], got {shape:?}",
                self.channels
            )));
        }
        let (n, c, p) = (shape[0], shape[1], shape[2] * shape[3]);
        let h = self.heads;
        let flat = g.reshape(x, &[n, c, p])?;
        let conv1x1 = |g: &mut Graph, (w, b): (ParamId, ParamId)| -> Result<Var> {
            let w = g.param(w);
            let b = g.param(b);
            let y = g.matmul(w, flat, false, false)?;
            let rows = g.shape(y)[1];
            let b = g.reshape(b, &[1, rows, 1])?;
            g.add_broadcast(y, b)
        };
        let q = conv1x1(g, self.q)?;
        let k = conv1x1(g, self.k)?;
        let v = conv1x1(g, self.v)?;
        let dk = self.key_dim / h;
        let q = g.reshape(q, &[n * h, dk, p])?;
        let k = g.reshape(k, &[n * h, dk, p])?;
        let v = g.reshape(v, &[n * h, c / h, p])?;
        let scores = g.matmul(q, k, true, false)?;
        let scores = g.scale(scores, 1.0 / (dk as f32).sqrt());
        let weights = g.softmax_last(scores);
        let attended = g.matmul(v, weights, false, true)?;
        let attended = g.reshape(attended, &[n, c, p])?;
        let wo = g.param(self.out);
        let projected = g.matmul(wo, attended, false, false)?;
        let y = g.add(flat, projected)?;
        let output = g.reshape(y, &shape)?;
        Ok(AttentionOutput { output, weights })
    }
}
