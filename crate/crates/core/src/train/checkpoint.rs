//! Checkpoint directories hold `weights.bin` and `meta.json`.
//!
//! `weights.bin` layout, little endian throughout:
//!
//! ```text
//! "GLWT" | u32 version | u32 tensor count
//! per tensor: u32 name length | name (UTF-8) | u8 trainable | u32 rank | u32 dims[rank] | f32 values
//! ```
//!
//! `meta.json` records the format version, stage, AU count, the training
//! configuration with its SHA-256, the loss history and the SHA-256 of the
//! weights blob. Each file is written to a temporary name and renamed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Stage, TrainConfig};
use super::model::GleeModel;
use crate::au::AU_PREFIX;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"GLWT";
const WEIGHTS_FILE: &str = "weights.bin";
const META_FILE: &str = "meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub stage: Stage,
    pub num_aus: usize,
    pub config_hash: String,
    pub config: TrainConfig,
    pub loss_history: Vec<f64>,
    /// Training-set average F1 after each finetuning epoch, when tracked.
    #[serde(default)]
    pub f1_history: Vec<f64>,
    pub weights_sha256: String,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: GleeModel,
}

impl Checkpoint {
    pub fn new(model: GleeModel, config: &TrainConfig, loss_history: Vec<f64>, f1_history: Vec<f64>) -> Self {
        Checkpoint {
            meta: CheckpointMeta {
                version: CHECKPOINT_VERSION,
                stage: config.stage,
                num_aus: model.num_aus(),
                config_hash: config.hash(),
                config: config.clone(),
                loss_history,
                f1_history,
                weights_sha256: String::new(),
            },
            model,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let blob = encode_weights(&self.model.store);
        let mut meta = self.meta.clone();
        meta.weights_sha256 = hex(&Sha256::digest(&blob));
        atomic_write(&dir.join(WEIGHTS_FILE), &blob)?;
        let json = serde_json::to_vec_pretty(&meta).expect("metadata serializes");
        atomic_write(&dir.join(META_FILE), &json)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta = serde_json::from_slice(&text)
            .map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", meta_path.display())))?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: meta.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let weights_path = dir.join(WEIGHTS_FILE);
        let blob = std::fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
        if hex(&Sha256::digest(&blob)) != meta.weights_sha256 {
            return Err(Error::CorruptCheckpoint(format!(
                "{} does not match its recorded checksum",
                weights_path.display()
            )));
        }
        let tensors = decode_weights(&blob)?;
        let cfg = &meta.config;
        let mut classifier = cfg.classifier.clone();
        classifier.num_aus = meta.num_aus;
        let mut model = GleeModel::new(&cfg.embedding, &classifier, cfg.seed)?;
        assign_all(&mut model.store, &tensors, |_| true)?;
        if model.store.len() != tensors.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "checkpoint holds {} tensors but the model has {}",
                tensors.len(),
                model.store.len()
            )));
        }
        Ok(Checkpoint { meta, model })
    }
}

/// Copies the embedding weights of `source` into `target`, leaving the
/// classifier untouched.
pub fn transfer_embedding(source: &GleeModel, target: &mut GleeModel) -> Result<()> {
    let tensors: Vec<(String, bool, Tensor)> = source
        .store
        .iter()
        .map(|(_, p)| (p.name.clone(), p.trainable, p.value.clone()))
        .collect();
    assign_all(&mut target.store, &tensors, |name| !name.starts_with(AU_PREFIX))
}

fn assign_all(store: &mut ParamStore, tensors: &[(String, bool, Tensor)], keep: impl Fn(&str) -> bool) -> Result<()> {
    for (name, _, value) in tensors.iter().filter(|(n, _, _)| keep(n)) {
        store.assign(name, value.clone()).map_err(|e| match e {
            Error::Shape(msg) | Error::InvalidInput(msg) => Error::CorruptCheckpoint(msg),
            other => other,
        })?;
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn encode_weights(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * store.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(u8::from(p.trainable));
        let shape = p.value.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("weights truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn decode_weights(bytes: &[u8]) -> Result<Vec<(String, bool, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad weights magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let trainable = r.take(1)?[0] != 0;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::CorruptCheckpoint(format!("tensor {name} is too large")))?;
        let raw = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| Error::CorruptCheckpoint("overflow".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push((name, trainable, Tensor::new(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}
