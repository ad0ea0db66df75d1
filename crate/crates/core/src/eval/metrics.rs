use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Confusion counts and F1 of one AU.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuScore {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub f1: f64,
    /// No positives were labelled or predicted, so F1 is 1 by convention.
    pub vacuous: bool,
}

impl AuScore {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let (f1, vacuous) = if tp + fp + fn_ == 0 {
            (1.0, true)
        } else if tp == 0 {
            (0.0, false)
        } else {
            // 2PR/(P+R) with P = tp/(tp+fp), R = tp/(tp+fn), in one rounding.
            ((2 * tp) as f64 / (2 * tp + fp + fn_) as f64, false)
        };
        AuScore {
            tp,
            fp,
            fn_,
            tn,
            f1,
            vacuous,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_au: Vec<AuScore>,
    pub average_f1: f64,
    pub frames: usize,
    pub fold: Option<usize>,
}

impl EvalReport {
    pub fn per_au_f1(&self) -> Vec<f64> {
        self.per_au.iter().map(|s| s.f1).collect()
    }

    pub fn vacuous_count(&self) -> usize {
        self.per_au.iter().filter(|s| s.vacuous).count()
    }
}

/// Frame-level F1 per AU and their unweighted mean.
pub fn f1_per_au<P: AsRef<[bool]>, L: AsRef<[bool]>>(predictions: &[P], labels: &[L]) -> Result<EvalReport> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} prediction rows and {} label rows",
            predictions.len(),
            labels.len()
        )));
    }
    let na = labels[0].as_ref().len();
    let mut counts = vec![[0usize; 4]; na];
    for (p, l) in predictions.iter().zip(labels) {
        let (p, l) = (p.as_ref(), l.as_ref());
        if p.len() != na || l.len() != na {
            return Err(Error::Shape(format!(
                "rows of length {} and {} for {na} AUs",
                p.len(),
                l.len()
            )));
        }
        for ((c, &pi), &li) in counts.iter_mut().zip(p).zip(l) {
            let slot = match (pi, li) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            c[slot] += 1;
        }
    }
    let per_au: Vec<AuScore> = counts
        .iter()
        .map(|&[tp, fp, fn_, tn]| AuScore::from_counts(tp, fp, fn_, tn))
        .collect();
    let average_f1 = if na == 0 {
        0.0
    } else {
        per_au.iter().map(|s| s.f1).sum::<f64>() / na as f64
    };
    Ok(EvalReport {
        per_au,
        average_f1,
        frames: predictions.len(),
        fold: None,
    })
}

/// One AU-combination group of the compactness metric.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceGroup {
    pub labels: Vec<u8>,
    pub count: usize,
    pub per_dim: Vec<f64>,
    pub variance: f64,
    pub singleton: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AveVarReport {
    pub groups: Vec<VarianceGroup>,
    pub ave_var: f64,
}

/// Mean over AU-combination groups of the trace of the unbiased sample
/// covariance of their embeddings. Singleton groups contribute zero.
pub fn ave_var<E: AsRef<[f32]>, L: AsRef<[u8]>>(embeddings: &[E], labels: &[L]) -> Result<AveVarReport> {
    if embeddings.is_empty() || embeddings.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} embeddings and {} label rows",
            embeddings.len(),
            labels.len()
        )));
    }
    let dim = embeddings[0].as_ref().len();
    let mut members: BTreeMap<Vec<u8>, Vec<&[f32]>> = BTreeMap::new();
    for (e, l) in embeddings.iter().zip(labels) {
        let e = e.as_ref();
        if e.len() != dim {
            return Err(Error::Shape(format!("embeddings of length {dim} and {}", e.len())));
        }
        members.entry(l.as_ref().to_vec()).or_default().push(e);
    }
    let groups: Vec<VarianceGroup> = members
        .into_iter()
        .map(|(labels, rows)| {
            let n = rows.len();
            let per_dim: Vec<f64> = if n < 2 {
                vec![0.0; dim]
            } else {
                (0..dim)
                    .map(|d| {
                        let mean = rows.iter().map(|r| f64::from(r[d])).sum::<f64>() / n as f64;
                        rows.iter().map(|r| (f64::from(r[d]) - mean).powi(2)).sum::<f64>() / (n - 1) as f64
                    })
                    .collect()
            };
            VarianceGroup {
                labels,
                count: n,
                variance: per_dim.iter().sum(),
                per_dim,
                singleton: n < 2,
            }
        })
        .collect();
    let ave_var = groups.iter().map(|g| g.variance).sum::<f64>() / groups.len() as f64;
    Ok(AveVarReport { groups, ave_var })
}
