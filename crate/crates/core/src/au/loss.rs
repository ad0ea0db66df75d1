use crate::error::{Error, Result};

/// Probabilities are clipped to `[ε, 1-ε]` before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;
/// Lower bound on occurrence ratios.
pub const RATIO_FLOOR: f64 = 1e-3;

/// Training-fold AU occurrence ratios used as inverse loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    ratios: Vec<f64>,
}

impl DatasetStats {
    /// Clamps each ratio to `[1e-3, 1]`.
    pub fn new(ratios: Vec<f64>) -> Result<Self> {
        if ratios.is_empty() || ratios.iter().any(|r| !r.is_finite() || *r < 0.0 || *r > 1.0) {
            return Err(Error::InvalidInput(format!(
                "occurrence ratios must lie in [0, 1]: {ratios:?}"
            )));
        }
        Ok(DatasetStats {
            ratios: ratios.into_iter().map(|r| r.max(RATIO_FLOOR)).collect(),
        })
    }

    /// Counts occurrences over label rows.
    pub fn from_labels<L: AsRef<[u8]>>(labels: &[L]) -> Result<Self> {
        let first = labels
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot compute statistics of an empty label set".into()))?;
        let na = first.as_ref().len();
        let mut counts = vec![0usize; na];
        for row in labels {
            let row = row.as_ref();
            if row.len() != na {
                return Err(Error::Shape(format!("label rows of length {na} and {}", row.len())));
            }
            for (c, &g) in counts.iter_mut().zip(row) {
                *c += usize::from(g != 0);
            }
        }
        let n = labels.len() as f64;
        Self::new(counts.iter().map(|&c| c as f64 / n).collect())
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn num_aus(&self) -> usize {
        self.ratios.len()
    }
}

fn check(len: usize, labels: &[u8], stats: &DatasetStats) -> Result<()> {
    if labels.len() != len || stats.num_aus() != len {
        return Err(Error::Shape(format!(
            "{len} predictions, {} labels, {} ratios",
            labels.len(),
            stats.num_aus()
        )));
    }
    Ok(())
}

/// `-(1/N_a) Σ (1/r_i) [g_i ln p_i + (1-g_i) ln(1-p_i)]` on clipped probabilities.
pub fn weighted_ce(probs: &[f64], labels: &[u8], stats: &DatasetStats) -> Result<f64> {
    check(probs.len(), labels, stats)?;
    let na = probs.len() as f64;
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .zip(stats.ratios())
        .map(|((&p, &g), &r)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            let ll = if g != 0 { p.ln() } else { (1.0 - p).ln() };
            ll / r
        })
        .sum();
    Ok(-sum / na)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weighted CE of `sigmoid(logits)` and its gradient with respect to the logits.
pub fn weighted_ce_logits(logits: &[f64], labels: &[u8], stats: &DatasetStats) -> Result<(f64, Vec<f64>)> {
    check(logits.len(), labels, stats)?;
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let loss = weighted_ce(&probs, labels, stats)?;
    let na = logits.len() as f64;
    let grad = probs
        .iter()
        .zip(labels)
        .zip(stats.ratios())
        .map(|((&p, &g), &r)| {
            if p < PROB_EPS || p > 1.0 - PROB_EPS {
                0.0
            } else {
                (p - f64::from(g)) / (r * na)
            }
        })
        .collect();
    Ok((loss, grad))
}

/// Sum of the weighted CE on initial and final predictions, with gradients
/// for both logit vectors.
pub fn total_loss_logits(
    initial: &[f64],
    fused: &[f64],
    labels: &[u8],
    stats: &DatasetStats,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (a, ga) = weighted_ce_logits(initial, labels, stats)?;
    let (b, gb) = weighted_ce_logits(fused, labels, stats)?;
    Ok((a + b, ga, gb))
}

/// `weighted_ce(initial) + weighted_ce(final)` on probabilities.
pub fn total_loss(initial: &[f64], fused: &[f64], labels: &[u8], stats: &DatasetStats) -> Result<f64> {
    Ok(weighted_ce(initial, labels, stats)? + weighted_ce(fused, labels, stats)?)
}
