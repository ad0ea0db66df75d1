use rand::Rng;

use super::attention::SelfAttention2d;
use super::config::{EmbeddingConfig, EMBED_DIM};
use crate::error::{Error, Result};
use crate::geometry::{CropName, CROP_SIZE};
use crate::tensor::layers::{Conv2d, Init, Linear};
use crate::tensor::{Conv2dSpec, Graph, ParamStore, Var};

const STRIDE2: Conv2dSpec = Conv2dSpec { stride: 2, padding: 1 };

/// Strided 3×3 convolutions, global average pooling and a linear map to `D_b`.
#[derive(Clone, Debug)]
pub struct Backbone {
    prefix: String,
    convs: Vec<Conv2d>,
    fc: Linear,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, config: &EmbeddingConfig) -> Self {
        let mut convs = Vec::with_capacity(config.backbone_widths.len());
        let mut in_ch = 3;
        for (i, &w) in config.backbone_widths.iter().enumerate() {
            convs.push(Conv2d::new(
                store,
                rng,
                &format!("{prefix}.conv{i}"),
                in_ch,
                w,
                3,
                STRIDE2,
                Init::He,
            ));
            in_ch = w;
        }
        let fc = Linear::new(
            store,
            rng,
            &format!("{prefix}.fc"),
            in_ch,
            config.backbone_dim,
            true,
            Init::Lecun,
        );
        Backbone {
            prefix: prefix.to_string(),
            convs,
            fc,
        }
    }

    /// Registers a copy of `source` under `prefix` with every parameter frozen.
    pub fn frozen_copy(store: &mut ParamStore, source: &Backbone, prefix: &str) -> Self {
        let mut copy_param = |id| {
            let p = store.param(id);
            let suffix = p.name.strip_prefix(source.prefix.as_str()).unwrap_or(&p.name);
            let name = format!("{prefix}{suffix}");
            let value = p.value.clone();
            store.add(name, value, false)
        };
        let convs = source
            .convs
            .iter()
            .map(|c| Conv2d {
                weight: copy_param(c.weight),
                bias: copy_param(c.bias),
                spec: c.spec,
            })
            .collect();
        let fc = Linear {
            weight: copy_param(source.fc.weight),
            bias: source.fc.bias.map(&mut copy_param),
            in_dim: source.fc.in_dim,
            out_dim: source.fc.out_dim,
        };
        Backbone {
            prefix: prefix.to_string(),
            convs,
            fc,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, h)?;
            h = g.relu(h);
        }
        let s = g.shape(h).to_vec();
        let flat = g.reshape(h, &[s[0], s[1], s[2] * s[3]])?;
        let pooled = g.mean_last(flat)?;
        self.fc.forward(g, pooled)
    }
}

/// Global branch: the difference between a trainable face model and a frozen
/// copy of its initial weights, reduced to 16 dimensions without bias.
#[derive(Clone, Debug)]
pub struct GlobalBranch {
    face: Backbone,
    identity: Backbone,
    reducer: Linear,
}

impl GlobalBranch {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, config: &EmbeddingConfig) -> Self {
        let face = Backbone::new(store, rng, "global.face", config);
        let identity = Backbone::frozen_copy(store, &face, "global.identity");
        let reducer = Linear::new(
            store,
            rng,
            "global.reducer",
            config.backbone_dim,
            EMBED_DIM,
            false,
            Init::Lecun,
        );
        GlobalBranch {
            face,
            identity,
            reducer,
        }
    }

    pub fn forward(&self, g: &mut Graph, faces: Var) -> Result<Var> {
        let v_face = self.face.forward(g, faces)?;
        let v_id = self.identity.forward(g, faces)?;
        let diff = g.sub(v_face, v_id)?;
        self.reducer.forward(g, diff)
    }
}

/// Four strided convolutions, spatial self-attention and average pooling for
/// one named crop.
#[derive(Clone, Debug)]
pub struct LocalExtractor {
    convs: Vec<Conv2d>,
    attention: SelfAttention2d,
}

impl LocalExtractor {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, config: &EmbeddingConfig) -> Result<Self> {
        let mut convs = Vec::with_capacity(4);
        let mut in_ch = 3;
        for (i, &w) in config.local_widths.iter().enumerate() {
            convs.push(Conv2d::new(
                store,
                rng,
                &format!("{prefix}.conv{i}"),
                in_ch,
                w,
                3,
                STRIDE2,
                Init::He,
            ));
            in_ch = w;
        }
        let attention = SelfAttention2d::new(
            store,
            rng,
            &format!("{prefix}.attn"),
            in_ch,
            config.attention_key_dim,
            config.attention_heads,
        )?;
        Ok(LocalExtractor { convs, attention })
    }

    /// Returns the pooled `[N, d_loc]` feature and the attention weights.
    pub fn forward(&self, g: &mut Graph, crop: Var) -> Result<(Var, Var)> {
        let mut h = crop;
        for conv in &self.convs {
            h = conv.forward(g, h)?;
            h = g.relu(h);
        }
        let att = self.attention.forward(g, h)?;
        let s = g.shape(att.output).to_vec();
        let flat = g.reshape(att.output, &[s[0], s[1], s[2] * s[3]])?;
        Ok((g.mean_last(flat)?, att.weights))
    }
}

/// Sixteen extractors whose concatenated features pass through a two-layer MLP.
#[derive(Clone, Debug)]
pub struct LocalBranch {
    extractors: Vec<LocalExtractor>,
    hidden: Linear,
    out: Linear,
}

impl LocalBranch {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, config: &EmbeddingConfig) -> Result<Self> {
        let extractors = CropName::ALL
            .iter()
            .map(|name| LocalExtractor::new(store, rng, &format!("local.{name}"), config))
            .collect::<Result<Vec<_>>>()?;
        let concat = CropName::ALL.len() * config.local_dim();
        let hidden = Linear::new(store, rng, "local.head.fc1", concat, config.head_hidden, true, Init::He);
        let out = Linear::new(
            store,
            rng,
            "local.head.fc2",
            config.head_hidden,
            EMBED_DIM,
            true,
            Init::Lecun,
        );
        Ok(LocalBranch {
            extractors,
            hidden,
            out,
        })
    }

    /// `crops[i]` is the `[N, 3, 96, 96]` batch for `CropName::ALL[i]`.
    pub fn forward(&self, g: &mut Graph, crops: &[Var]) -> Result<(Var, Vec<Var>)> {
        if crops.len() != self.extractors.len() {
            return Err(Error::Shape(format!(
                "local branch expects {} crop batches, got {}",
                self.extractors.len(),
                crops.len()
            )));
        }
        let mut features = Vec::with_capacity(crops.len());
        let mut weights = Vec::with_capacity(crops.len());
        for (extractor, &crop) in self.extractors.iter().zip(crops) {
            let shape = g.shape(crop);
            if shape.len() != 4 || shape[1] != 3 || shape[2] != CROP_SIZE || shape[3] != CROP_SIZE {
                return Err(Error::Shape(format!(
                    "crop batch must be [N, 3, {CROP_SIZE}, {CROP_SIZE}], got {shape:?}"
                )));
            }
            let (f, w) = extractor.forward(g, crop)?;
            features.push(f);
            weights.push(w);
        }
        let cat = g.concat_last(&features)?;
        let h = self.hidden.forward(g, cat)?;
        let h = g.relu(h);
        Ok((self.out.forward(g, h)?, weights))
    }
}

/// Graph handles produced by one embedding pass.
pub struct EmbeddingVars {
    pub global: Var,
    pub local: Var,
    pub embedding: Var,
    /// One `[N·heads, P, P]` weight tensor per crop, in `CropName::ALL` order.
    pub attention: Vec<Var>,
}

/// The full expression embedding network `E = G + L`.
#[derive(Clone, Debug)]
pub struct EmbeddingNet {
    config: EmbeddingConfig,
    global: GlobalBranch,
    local: LocalBranch,
}

impl EmbeddingNet {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, config: &EmbeddingConfig) -> Result<Self> {
        config.validate()?;
        let global = GlobalBranch::new(store, rng, config);
        let local = LocalBranch::new(store, rng, config)?;
        Ok(EmbeddingNet {
            config: config.clone(),
            global,
            local,
        })
    }

    pub fn config(&self) -> &EmbeddingConfig {
        &self.config
    }

    /// `faces`: `[N, 3, S, S]` aligned faces; `crops`: sixteen `[N, 3, 96, 96]` batches.
    pub fn forward(&self, g: &mut Graph, faces: Var, crops: &[Var]) -> Result<EmbeddingVars> {
        let fs = g.shape(faces);
        if fs.len() != 4 || fs[1] != 3 {
            return Err(Error::Shape(format!("face batch must be [N, 3, S, S], got {fs:?}")));
        }
        let n = fs[0];
        if crops.iter().any(|&c| g.shape(c).first() != Some(&n)) {
            return Err(Error::Shape("face and crop batches differ in size".into()));
        }
        let global = self.global.forward(g, faces)?;
        let (local, attention) = self.local.forward(g, crops)?;
        let embedding = g.add(global, local)?;
        Ok(EmbeddingVars {
            global,
            local,
            embedding,
            attention,
        })
    }
}

/// Parameter name prefixes of the two embedding branches.
pub const GLOBAL_PREFIX: &str = "global.";
pub const LOCAL_PREFIX: &str = "local.";
