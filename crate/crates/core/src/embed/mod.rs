//! Expression embedding network: a global deviation branch over the aligned
//! face plus sixteen attentive local extractors, and the triplet loss used to
//! pretrain them.

mod attention;
mod config;
mod loss;
mod net;

use std::io::Write;
use std::path::Path;

pub use attention::{AttentionOutput, SelfAttention2d};
pub use config::{EmbeddingConfig, EMBED_DIM};
pub use loss::{triplet_loss, triplet_loss_grad, TripletGrad};
pub use net::{
    Backbone, EmbeddingNet, EmbeddingVars, GlobalBranch, LocalBranch, LocalExtractor, GLOBAL_PREFIX, LOCAL_PREFIX,
};

use crate::error::{Error, Result};
use crate::geometry::{CropName, CropSet, RgbImage};
use crate::tensor::{Graph, ParamStore, Tensor};

/// Global, local and summed expression features for one face.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionEmbedding {
    pub global: Vec<f32>,
    pub local: Vec<f32>,
    pub embedding: Vec<f32>,
}

/// Offset subtracted from pixel values so network inputs are centred on zero.
pub const INPUT_OFFSET: f32 = 0.5;

/// Stacks images of equal size into an `[N, 3, H, W]` tensor of centred values.
pub fn stack_images(images: &[&RgbImage]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.height() != h || img.width() != w {
            return Err(Error::Shape(format!(
                "image batch mixes {h}x{w} and {}x{}",
                img.height(),
                img.width()
            )));
        }
        data.extend(img.to_chw().into_iter().map(|v| v - INPUT_OFFSET));
    }
    Tensor::new(&[images.len(), 3, h, w], data)
}

/// One `[N, 3, 96, 96]` tensor per crop name, in `CropName::ALL` order.
pub fn stack_crops(sets: &[&CropSet]) -> Result<Vec<Tensor>> {
    CropName::ALL
        .iter()
        .map(|&name| {
            let imgs: Vec<&RgbImage> = sets.iter().map(|s| s.get(name)).collect();
            stack_images(&imgs)
        })
        .collect()
}

/// Input tensors for a batch of faces.
#[derive(Clone, Debug)]
pub struct EmbeddingBatch {
    pub faces: Tensor,
    pub crops: Vec<Tensor>,
}

impl EmbeddingBatch {
    pub fn new(faces: &[&RgbImage], crops: &[&CropSet]) -> Result<Self> {
        if faces.len() != crops.len() {
            return Err(Error::InvalidInput(format!(
                "{} faces but {} crop sets",
                faces.len(),
                crops.len()
            )));
        }
        Ok(EmbeddingBatch {
            faces: stack_images(faces)?,
            crops: stack_crops(crops)?,
        })
    }

    pub fn len(&self) -> usize {
        self.faces.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records the batch as graph inputs and runs the network.
    pub fn forward(&self, g: &mut Graph, net: &EmbeddingNet) -> Result<EmbeddingVars> {
        let faces = g.input(self.faces.clone());
        let crops: Vec<_> = self.crops.iter().map(|c| g.input(c.clone())).collect();
        net.forward(g, faces, &crops)
    }
}

/// Embeds a batch of aligned faces with their crops.
pub fn embed_batch(
    store: &ParamStore,
    net: &EmbeddingNet,
    faces: &[&RgbImage],
    crops: &[&CropSet],
) -> Result<Vec<ExpressionEmbedding>> {
    let batch = EmbeddingBatch::new(faces, crops)?;
    let mut g = Graph::new(store);
    let vars = batch.forward(&mut g, net)?;
    let (gl, lo, em) = (g.value(vars.global), g.value(vars.local), g.value(vars.embedding));
    if !em.is_finite() {
        return Err(Error::Numerical("non-finite expression embedding".into()));
    }
    Ok((0..batch.len())
        .map(|i| ExpressionEmbedding {
            global: gl.row(i).to_vec(),
            local: lo.row(i).to_vec(),
            embedding: em.row(i).to_vec(),
        })
        .collect())
}

pub fn embed(store: &ParamStore, net: &EmbeddingNet, face: &RgbImage, crops: &CropSet) -> Result<ExpressionEmbedding> {
    Ok(embed_batch(store, net, &[face], &[crops])?.remove(0))
}

/// Writes `frame_id` followed by the sixteen embedding values, tab separated.
pub fn write_embeddings<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, &'a [f32])>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for (id, values) in rows {
        let mut line = id.to_string();
        for v in values {
            line.push('\t');
            line.push_str(&v.to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
