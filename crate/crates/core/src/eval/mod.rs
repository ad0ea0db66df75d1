//! Frame-level F1, the Ave-Var compactness metric, full-pipeline evaluation
//! and report files.

mod metrics;

use std::io::Write;
use std::path::Path;

pub use metrics::{ave_var, f1_per_au, AuScore, AveVarReport, EvalReport, VarianceGroup};

use crate::au::AuPrediction;
use crate::error::{Error, Result};
use crate::train::{AuData, FaceSample, GleeModel};

/// Frames per forward pass during evaluation.
const EVAL_BATCH: usize = 32;

/// Predictions and embeddings for every frame, in data order.
#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub predictions: Vec<AuPrediction>,
    pub embeddings: Vec<Vec<f32>>,
}

/// Embeds and classifies every frame, then scores the thresholded outputs.
pub fn evaluate(model: &GleeModel, data: &AuData) -> Result<EvalOutput> {
    if data.num_aus() != model.num_aus() {
        return Err(Error::InvalidInput(format!(
            "data has {} AUs but the model predicts {}",
            data.num_aus(),
            model.num_aus()
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    let mut predictions = Vec::with_capacity(data.len());
    let mut embeddings = Vec::with_capacity(data.len());
    for chunk in data.frames.chunks(EVAL_BATCH) {
        let samples: Vec<&FaceSample> = chunk.iter().map(|f| &f.sample).collect();
        let emb = model.embed(&samples)?;
        let rows: Vec<&[f32]> = emb.iter().map(|e| e.embedding.as_slice()).collect();
        let coeffs: Vec<&[f64]> = chunk.iter().map(|f| f.f_exp.as_slice()).collect();
        predictions.extend(model.classify(&rows, &coeffs)?);
        embeddings.extend(emb.into_iter().map(|e| e.embedding));
    }
    let predicted: Vec<&[bool]> = predictions.iter().map(|p| p.occurrences.as_slice()).collect();
    let labels: Vec<Vec<bool>> = data
        .frames
        .iter()
        .map(|f| f.labels.iter().map(|&g| g != 0).collect())
        .collect();
    let report = f1_per_au(&predicted, &labels)?;
    Ok(EvalOutput {
        report,
        predictions,
        embeddings,
    })
}

/// Human-readable table of an evaluation report.
pub fn report_table(report: &EvalReport, au_names: &[String]) -> String {
    let mut out = String::new();
    if let Some(fold) = report.fold {
        out.push_str(&format!("fold\t{fold}\n"));
    }
    out.push_str("au\ttp\tfp\tfn\ttn\tf1\tnote\n");
    for (i, s) in report.per_au.iter().enumerate() {
        let name = au_names.get(i).cloned().unwrap_or_else(|| format!("au{i}"));
        let note = if s.vacuous { "vacuous" } else { "" };
        out.push_str(&format!(
            "{name}\t{}\t{}\t{}\t{}\t{:.4}\t{note}\n",
            s.tp, s.fp, s.fn_, s.tn, s.f1
        ));
    }
    out.push_str(&format!(
        "average\t\t\t\t\t{:.4}\t{} frames\n",
        report.average_f1, report.frames
    ));
    out
}

/// One JSON record per AU followed by a summary record.
pub fn report_records(report: &EvalReport, au_names: &[String]) -> String {
    let mut out = String::new();
    for (i, s) in report.per_au.iter().enumerate() {
        let name = au_names.get(i).cloned().unwrap_or_else(|| format!("au{i}"));
        let rec = serde_json::json!({
            "kind": "au",
            "au": name,
            "tp": s.tp,
            "fp": s.fp,
            "fn": s.fn_,
            "tn": s.tn,
            "f1": s.f1,
            "vacuous": s.vacuous,
        });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    let summary = serde_json::json!({
        "kind": "summary",
        "average_f1": report.average_f1,
        "frames": report.frames,
        "fold": report.fold,
        "vacuous_aus": report.vacuous_count(),
    });
    out.push_str(&summary.to_string());
    out.push('\n');
    out
}

fn label_key(labels: &[u8]) -> String {
    labels.iter().map(|l| l.to_string()).collect()
}

/// Human-readable table of an Ave-Var report, one row per AU combination.
pub fn ave_var_table(report: &AveVarReport) -> String {
    let mut out = String::from("labels\tcount\tvariance\tnote\n");
    for g in &report.groups {
        let note = if g.singleton { "singleton" } else { "" };
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{note}\n",
            label_key(&g.labels),
            g.count,
            g.variance
        ));
    }
    out.push_str(&format!("ave_var\t{}\t{:.6}\n", report.groups.len(), report.ave_var));
    out
}

/// One JSON record per group followed by a summary record.
pub fn ave_var_records(report: &AveVarReport) -> String {
    let mut out = String::new();
    for g in &report.groups {
        let rec = serde_json::json!({
            "kind": "group",
            "labels": label_key(&g.labels),
            "count": g.count,
            "variance": g.variance,
            "per_dim": g.per_dim,
            "singleton": g.singleton,
        });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    let summary = serde_json::json!({
        "kind": "summary",
        "groups": report.groups.len(),
        "ave_var": report.ave_var,
    });
    out.push_str(&summary.to_string());
    out.push('\n');
    out
}

/// Writes `<stem>.txt` and `<stem>.jsonl` next to each other.
pub fn write_report(stem: &Path, table: &str, records: &str) -> Result<()> {
    for (ext, body) in [("txt", table), ("jsonl", records)] {
        let path = stem.with_extension(ext);
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
