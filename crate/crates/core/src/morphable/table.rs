//! Tab-separated per-frame coefficient table.
//!
//! Header line, then one row per frame: `frame_id`, the shape coefficients,
//! the expression coefficients, six extrinsics (axis-angle rotation then
//! translation), the final cost, and a status word (`converged`,
//! `unconverged` or `failed`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::fit::FitResult;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitStatus {
    Converged,
    Unconverged,
    /// The fit raised an error; coefficients are zero.
    Failed,
}

impl FitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FitStatus::Converged => "converged",
            FitStatus::Unconverged => "unconverged",
            FitStatus::Failed => "failed",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "converged" => Some(FitStatus::Converged),
            "unconverged" => Some(FitStatus::Unconverged),
            "failed" => Some(FitStatus::Failed),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientRow {
    pub f_s: Vec<f64>,
    pub f_exp: Vec<f64>,
    pub pose: [f64; 6],
    pub final_cost: f64,
    pub status: FitStatus,
}

impl CoefficientRow {
    pub fn from_fit(fit: &FitResult) -> Self {
        CoefficientRow {
            f_s: fit.f_s.clone(),
            f_exp: fit.f_exp.clone(),
            pose: fit.pose.extrinsics(),
            final_cost: fit.final_cost,
            status: if fit.converged {
                FitStatus::Converged
            } else {
                FitStatus::Unconverged
            },
        }
    }

    pub fn failed(num_shape: usize, num_expr: usize) -> Self {
        CoefficientRow {
            f_s: vec![0.0; num_shape],
            f_exp: vec![0.0; num_expr],
            pose: [0.0; 6],
            final_cost: f64::NAN,
            status: FitStatus::Failed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientTable {
    pub num_shape: usize,
    pub num_expr: usize,
    rows: BTreeMap<String, CoefficientRow>,
}

impl CoefficientTable {
    pub fn new(num_shape: usize, num_expr: usize) -> Self {
        CoefficientTable {
            num_shape,
            num_expr,
            rows: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, frame_id: impl Into<String>, row: CoefficientRow) -> Result<()> {
        if row.f_s.len() != self.num_shape || row.f_exp.len() != self.num_expr {
            return Err(Error::Shape("coefficient row does not match table widths".into()));
        }
        self.rows.insert(frame_id.into(), row);
        Ok(())
    }

    pub fn get(&self, frame_id: &str) -> Option<&CoefficientRow> {
        self.rows.get(frame_id)
    }

    /// Expression coefficients of a frame, or an error naming it.
    pub fn f_exp(&self, frame_id: &str) -> Result<&[f64]> {
        self.rows
            .get(frame_id)
            .map(|r| r.f_exp.as_slice())
            .ok_or_else(|| Error::MissingCoefficients(frame_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &CoefficientRow)> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn count(&self, status: FitStatus) -> usize {
        self.rows.values().filter(|r| r.status == status).count()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("frame_id");
        for i in 0..self.num_shape {
            write!(out, "\tf_s{i}").unwrap();
        }
        for i in 0..self.num_expr {
            write!(out, "\tf_exp{i}").unwrap();
        }
        out.push_str("\trx\try\trz\ttx\tty\ttz\tfinal_cost\tstatus\n");
        for (id, row) in &self.rows {
            out.push_str(id);
            for v in row.f_s.iter().chain(&row.f_exp).chain(&row.pose) {
                write!(out, "\t{v}").unwrap();
            }
            writeln!(out, "\t{}\t{}", row.final_cost, row.status.as_str()).unwrap();
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty coefficient table"))?;
        let cols: Vec<&str> = header.split('\t').collect();
        let num_shape = cols.iter().filter(|c| c.starts_with("f_s")).count();
        let num_expr = cols.iter().filter(|c| c.starts_with("f_exp")).count();
        if cols.first() != Some(&"frame_id") || cols.len() != num_shape + num_expr + 9 {
            return Err(Error::parse(path, 1, "unexpected coefficient table header"));
        }
        let mut table = CoefficientTable::new(num_shape, num_expr);
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != cols.len() {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected {} fields, got {}", cols.len(), fields.len()),
                ));
            }
            let nums = fields[1..fields.len() - 1]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            let status = FitStatus::parse(fields[fields.len() - 1])
                .ok_or_else(|| Error::parse(path, i + 1, "unknown fit status"))?;
            let (f_s, rest) = nums.split_at(num_shape);
            let (f_exp, rest) = rest.split_at(num_expr);
            table.insert(
                fields[0],
                CoefficientRow {
                    f_s: f_s.to_vec(),
                    f_exp: f_exp.to_vec(),
                    pose: rest[..6].try_into().unwrap(),
                    final_cost: rest[6],
                    status,
                },
            )?;
        }
        Ok(table)
    }
}
