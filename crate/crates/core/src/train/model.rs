use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::FaceSample;
use crate::au::{joint_feature, AuClassifier, AuPrediction, ClassifierConfig, ClassifierVars, FEATURE_DIM};
use crate::embed::{EmbeddingBatch, EmbeddingConfig, EmbeddingNet, EmbeddingVars, ExpressionEmbedding, EMBED_DIM};
use crate::error::{Error, Result};
use crate::geometry::{CropSet, RgbImage};
use crate::morphable::NUM_EXPR;
use crate::tensor::{Graph, ParamStore, Tensor};

/// Embedding network and AU classifier sharing one parameter store.
#[derive(Clone, Debug)]
pub struct GleeModel {
    pub store: ParamStore,
    pub embedding: EmbeddingNet,
    pub classifier: AuClassifier,
}

/// Handles of a full forward pass.
pub struct ModelVars {
    pub embedding: EmbeddingVars,
    pub classifier: ClassifierVars,
}

impl GleeModel {
    /// Fresh weights drawn from a seeded generator. The embedding network is
    /// initialized before the classifier, so both depend only on the seed.
    pub fn new(embedding: &EmbeddingConfig, classifier: &ClassifierConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = EmbeddingNet::new(&mut store, &mut rng, embedding)?;
        let classifier = AuClassifier::new(&mut store, &mut rng, classifier)?;
        Ok(GleeModel {
            store,
            embedding,
            classifier,
        })
    }

    pub fn num_aus(&self) -> usize {
        self.classifier.num_aus()
    }

    /// Records the embedding and classifier on `g` for a batch of samples.
    pub fn forward(&self, g: &mut Graph, samples: &[&FaceSample], f_exp: &[&[f64]]) -> Result<ModelVars> {
        let batch = batch_of(samples)?;
        let embedding = batch.forward(g, &self.embedding)?;
        let coeffs = coefficient_tensor(f_exp)?;
        let coeffs = g.input(coeffs);
        let features = g.concat_last(&[embedding.embedding, coeffs])?;
        let classifier = self.classifier.forward(g, features)?;
        Ok(ModelVars { embedding, classifier })
    }

    pub fn embed(&self, samples: &[&FaceSample]) -> Result<Vec<ExpressionEmbedding>> {
        let faces: Vec<&RgbImage> = samples.iter().map(|s| &s.face).collect();
        let crops: Vec<&CropSet> = samples.iter().map(|s| &s.crops).collect();
        crate::embed::embed_batch(&self.store, &self.embedding, &faces, &crops)
    }

    /// Classifies precomputed embeddings joined with their coefficients.
    pub fn classify(&self, embeddings: &[&[f32]], f_exp: &[&[f64]]) -> Result<Vec<AuPrediction>> {
        let features = embeddings
            .iter()
            .zip(f_exp)
            .map(|(e, f)| joint_feature(e, f))
            .collect::<Result<Vec<_>>>()?;
        crate::au::classify(&self.store, &self.classifier, &features)
    }

    /// Full pipeline on preprocessed frames.
    pub fn predict(&self, samples: &[&FaceSample], f_exp: &[&[f64]]) -> Result<Vec<AuPrediction>> {
        let emb = self.embed(samples)?;
        let rows: Vec<&[f32]> = emb.iter().map(|e| e.embedding.as_slice()).collect();
        self.classify(&rows, f_exp)
    }
}

pub(crate) fn batch_of(samples: &[&FaceSample]) -> Result<EmbeddingBatch> {
    let faces: Vec<&RgbImage> = samples.iter().map(|s| &s.face).collect();
    let crops: Vec<&CropSet> = samples.iter().map(|s| &s.crops).collect();
    EmbeddingBatch::new(&faces, &crops)
}

pub(crate) fn coefficient_tensor(f_exp: &[&[f64]]) -> Result<Tensor> {
    if let Some(bad) = f_exp.iter().find(|f| f.len() != NUM_EXPR) {
        return Err(Error::Shape(format!(
            "expected {NUM_EXPR} coefficients, got {}",
            bad.len()
        )));
    }
    let data = f_exp.iter().flat_map(|f| f.iter().map(|&v| v as f32)).collect();
    Tensor::new(&[f_exp.len(), NUM_EXPR], data)
}

const _: () = assert!(FEATURE_DIM == EMBED_DIM + NUM_EXPR);
