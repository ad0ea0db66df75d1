//! AU classifier over the joint feature `[E_exp, f_exp]`: per-AU view MLPs,
//! a transformer encoder stack, per-AU heads and a joint FC, plus the
//! occurrence-weighted cross entropy.

mod config;
mod loss;
mod net;

use std::io::Write;
use std::path::Path;

pub use config::{ClassifierConfig, FEATURE_DIM};
pub use loss::{
    sigmoid, total_loss, total_loss_logits, weighted_ce, weighted_ce_logits, DatasetStats, PROB_EPS, RATIO_FLOOR,
};
pub use net::{AuClassifier, ClassifierVars, AU_PREFIX};

use crate::embed::EMBED_DIM;
use crate::error::{Error, Result};
use crate::morphable::NUM_EXPR;
use crate::tensor::{Graph, ParamStore, Tensor};

/// Strict presence rule.
pub fn occurs(p: f64) -> bool {
    p > 0.5
}

/// Concatenates an embedding and expression coefficients into a joint feature.
pub fn joint_feature(embedding: &[f32], f_exp: &[f64]) -> Result<Vec<f32>> {
    if embedding.len() != EMBED_DIM || f_exp.len() != NUM_EXPR {
        return Err(Error::Shape(format!(
            "joint feature needs {EMBED_DIM} + {NUM_EXPR} values, got {} + {}",
            embedding.len(),
            f_exp.len()
        )));
    }
    let mut out = embedding.to_vec();
    out.extend(f_exp.iter().map(|&v| v as f32));
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("joint feature is not finite".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuPrediction {
    pub initial: Vec<f64>,
    pub fused: Vec<f64>,
    pub occurrences: Vec<bool>,
}

impl AuPrediction {
    pub fn from_logits(initial: &[f32], fused: &[f32]) -> Self {
        let initial: Vec<f64> = initial.iter().map(|&z| sigmoid(z.into())).collect();
        let fused: Vec<f64> = fused.iter().map(|&z| sigmoid(z.into())).collect();
        let occurrences = fused.iter().map(|&p| occurs(p)).collect();
        AuPrediction {
            initial,
            fused,
            occurrences,
        }
    }
}

/// Classifies a batch of joint features given as rows.
pub fn classify(store: &ParamStore, net: &AuClassifier, features: &[Vec<f32>]) -> Result<Vec<AuPrediction>> {
    if features.is_empty() {
        return Ok(Vec::new());
    }
    let data: Vec<f32> = features.iter().flatten().copied().collect();
    let x = Tensor::new(&[features.len(), data.len() / features.len()], data)?;
    let mut g = Graph::new(store);
    let x = g.input(x);
    let vars = net.forward(&mut g, x)?;
    let (init, fused) = (g.value(vars.initial_logits), g.value(vars.final_logits));
    Ok((0..features.len())
        .map(|i| AuPrediction::from_logits(init.row(i), fused.row(i)))
        .collect())
}

/// Writes `frame_id`, the final probabilities and the 0/1 occurrences.
pub fn write_predictions<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, &'a AuPrediction)>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for (id, pred) in rows {
        let mut line = id.to_string();
        for p in &pred.fused {
            line.push('\t');
            line.push_str(&p.to_string());
        }
        for &o in &pred.occurrences {
            line.push_str(if o { "\t1" } else { "\t0" });
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
