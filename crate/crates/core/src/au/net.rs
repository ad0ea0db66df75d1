use rand::Rng;

use super::config::{ClassifierConfig, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::tensor::layers::{Init, LayerNorm, Linear};
use crate::tensor::{he_uniform, lecun_uniform, Graph, ParamId, ParamStore, Tensor, Var};

/// Per-AU two-layer MLPs, stored as stacked weights so all views run as one
/// batched product.
#[derive(Clone, Debug)]
struct ViewMlps {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl ViewMlps {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ClassifierConfig) -> Self {
        let (a, h, d) = (cfg.num_aus, cfg.view_hidden, cfg.token_dim);
        let w1 = he_uniform(rng, &[a, FEATURE_DIM, h], FEATURE_DIM);
        ViewMlps {
            w1: store.add("au.view.fc1.weight", w1, true),
            b1: store.add("au.view.fc1.bias", Tensor::zeros(&[a, 1, h]), true),
            w2: store.add("au.view.fc2.weight", lecun_uniform(rng, &[a, h, d], h), true),
            b2: store.add("au.view.fc2.bias", Tensor::zeros(&[a, 1, d]), true),
        }
    }

    /// `[N, 67]` → `[N, N_a, d]`.
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w1 = g.param(self.w1);
        let b1 = g.param(self.b1);
        let w2 = g.param(self.w2);
        let b2 = g.param(self.b2);
        let h = g.matmul(x, w1, false, false)?;
        let h = g.add_broadcast(h, b1)?;
        let h = g.relu(h);
        let t = g.matmul(h, w2, false, false)?;
        let t = g.add_broadcast(t, b2)?;
        g.permute(t, &[1, 0, 2])
    }
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    norm1: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    heads: usize,
}

impl EncoderBlock {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cfg: &ClassifierConfig) -> Self {
        let d = cfg.token_dim;
        let mut lin = |suffix: &str, i: usize, o: usize, init| {
            Linear::new(store, rng, &format!("{name}.{suffix}"), i, o, true, init)
        };
        let query = lin("query", d, d, Init::Lecun);
        let key = lin("key", d, d, Init::Lecun);
        let value = lin("value", d, d, Init::Lecun);
        let out = lin("out", d, d, Init::Lecun);
        let ff1 = lin("ff1", d, cfg.feedforward_dim, Init::He);
        let ff2 = lin("ff2", cfg.feedforward_dim, d, Init::Lecun);
        EncoderBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            query,
            key,
            value,
            out,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
            ff1,
            ff2,
            heads: cfg.head_count,
        }
    }

    /// Pre-norm block on `[N, T, d]`; also returns the `[N·heads, T, T]` attention.
    fn forward(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let s = g.shape(x).to_vec();
        let (n, t, d) = (s[0], s[1], s[2]);
        let h = self.heads;
        let dh = d / h;
        let normed = self.norm1.forward(g, x)?;
        let split = |g: &mut Graph, v: Var| -> Result<Var> {
            let v = g.reshape(v, &[n, t, h, dh])?;
            let v = g.permute(v, &[0, 2, 1, 3])?;
            g.reshape(v, &[n * h, t, dh])
        };
        let q = self.query.forward(g, normed)?;
        let q = split(g, q)?;
        let k = self.key.forward(g, normed)?;
        let k = split(g, k)?;
        let v = self.value.forward(g, normed)?;
        let v = split(g, v)?;
        let scores = g.matmul(q, k, false, true)?;
        let scores = g.scale(scores, 1.0 / (dh as f32).sqrt());
        let attn = g.softmax_last(scores);
        let mixed = g.matmul(attn, v, false, false)?;
        let mixed = g.reshape(mixed, &[n, h, t, dh])?;
        let mixed = g.permute(mixed, &[0, 2, 1, 3])?;
        let mixed = g.reshape(mixed, &[n, t, d])?;
        let mixed = self.out.forward(g, mixed)?;
        let x = g.add(x, mixed)?;
        let normed = self.norm2.forward(g, x)?;
        let f = self.ff1.forward(g, normed)?;
        let f = g.relu(f);
        let f = self.ff2.forward(g, f)?;
        Ok((g.add(x, f)?, attn))
    }
}

/// Graph handles produced by one classifier pass.
pub struct ClassifierVars {
    /// `[N, N_a, d]` view tokens before encoding.
    pub tokens: Var,
    /// `[N, N_a, d]` encoder output after the final normalization.
    pub encoded: Var,
    /// `[N, N_a]` logits of the per-AU heads.
    pub initial_logits: Var,
    /// `[N, N_a]` logits after the joint FC.
    pub final_logits: Var,
    /// One `[N·heads, N_a, N_a]` tensor per encoder block.
    pub attention: Vec<Var>,
}

/// View MLPs, transformer encoders, per-AU heads and the joint FC.
#[derive(Clone, Debug)]
pub struct AuClassifier {
    config: ClassifierConfig,
    views: ViewMlps,
    blocks: Vec<EncoderBlock>,
    final_norm: LayerNorm,
    head_weight: ParamId,
    head_bias: ParamId,
    joint: Linear,
}

/// Parameter name prefix of every classifier weight.
pub const AU_PREFIX: &str = "au.";

impl AuClassifier {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, config: &ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let views = ViewMlps::new(store, rng, config);
        let blocks = (0..config.encoder_count)
            .map(|i| EncoderBlock::new(store, rng, &format!("au.encoder{i}"), config))
            .collect();
        let final_norm = LayerNorm::new(store, "au.encoder.norm", config.token_dim);
        let a = config.num_aus;
        let head_weight = store.add(
            "au.head.weight",
            lecun_uniform(rng, &[a, config.token_dim, 1], config.token_dim),
            true,
        );
        let head_bias = store.add("au.head.bias", Tensor::zeros(&[1, a]), true);
        let joint = Linear::new(store, rng, "au.joint", a, a, true, Init::Zeros);
        let eye = Tensor::new(
            &[a, a],
            (0..a * a).map(|i| if i / a == i % a { 1.0 } else { 0.0 }).collect(),
        )?;
        *store.get_mut(joint.weight) = eye;
        Ok(AuClassifier {
            config: config.clone(),
            views,
            blocks,
            final_norm,
            head_weight,
            head_bias,
            joint,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn num_aus(&self) -> usize {
        self.config.num_aus
    }

    /// `[N, 67]` joint features → tokens.
    pub fn project_views(&self, g: &mut Graph, features: Var) -> Result<Var> {
        let s = g.shape(features);
        if s.len() != 2 || s[1] != FEATURE_DIM {
            return Err(Error::Shape(format!(
                "joint features must be [N, {FEATURE_DIM}], got {s:?}"
            )));
        }
        self.views.forward(g, features)
    }

    /// Runs the encoder stack on `[N, N_a, d]` tokens.
    pub fn encode(&self, g: &mut Graph, tokens: Var) -> Result<(Var, Vec<Var>)> {
        let s = g.shape(tokens);
        if s.len() != 3 || s[1] != self.config.num_aus || s[2] != self.config.token_dim {
            return Err(Error::Shape(format!(
                "tokens must be [N, {}, {}], got {s:?}",
                self.config.num_aus, self.config.token_dim
            )));
        }
        let mut x = tokens;
        let mut attention = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, a) = block.forward(g, x)?;
            x = y;
            attention.push(a);
        }
        Ok((self.final_norm.forward(g, x)?, attention))
    }

    /// Per-AU heads on encoded tokens, then the joint FC on their logits.
    pub fn predict(&self, g: &mut Graph, encoded: Var) -> Result<(Var, Var)> {
        let n = g.shape(encoded)[0];
        let a = self.config.num_aus;
        let per_au = g.permute(encoded, &[1, 0, 2])?;
        let w = g.param(self.head_weight);
        let logits = g.matmul(per_au, w, false, false)?;
        let logits = g.reshape(logits, &[a, n])?;
        let logits = g.permute(logits, &[1, 0])?;
        let b = g.param(self.head_bias);
        let initial = g.add_broadcast(logits, b)?;
        let fused = self.joint.forward(g, initial)?;
        Ok((initial, fused))
    }

    pub fn forward(&self, g: &mut Graph, features: Var) -> Result<ClassifierVars> {
        let tokens = self.project_views(g, features)?;
        let (encoded, attention) = self.encode(g, tokens)?;
        let (initial_logits, final_logits) = self.predict(g, encoded)?;
        Ok(ClassifierVars {
            tokens,
            encoded,
            initial_logits,
            final_logits,
            attention,
        })
    }
}
