//! Tab-separated manifests. The first non-comment line names the fields;
//! lines starting with `#` are comments, and `# source: ...` records where the
//! data came from.
//!
//! Triplet manifests use the fields
//! `anchor_image anchor_landmarks positive_image positive_landmarks negative_image negative_landmarks`.
//! AU manifests use `frame_id image landmarks subject` followed by one column
//! per AU, so the header declares `N_a` and the AU names.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Environment variable prefixed to relative manifest paths.
pub const DATA_ROOT_VAR: &str = "GLEE_DATA_ROOT";

const TRIPLET_FIELDS: [&str; 6] = [
    "anchor_image",
    "anchor_landmarks",
    "positive_image",
    "positive_landmarks",
    "negative_image",
    "negative_landmarks",
];
const AU_FIXED_FIELDS: [&str; 4] = ["frame_id", "image", "landmarks", "subject"];

/// An image and its 68-point landmark file.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FaceRef {
    pub image: PathBuf,
    pub landmarks: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletRecord {
    pub anchor: FaceRef,
    pub positive: FaceRef,
    pub negative: FaceRef,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletManifest {
    pub source: String,
    pub records: Vec<TripletRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuRecord {
    pub frame_id: String,
    pub face: FaceRef,
    pub subject: String,
    pub labels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuManifest {
    pub source: String,
    pub au_names: Vec<String>,
    pub records: Vec<AuRecord>,
}

/// Resolves relative paths against `$GLEE_DATA_ROOT`, or the manifest's
/// directory when the variable is unset.
fn resolve(base: &Path, field: &str) -> PathBuf {
    let p = PathBuf::from(field);
    if p.is_absolute() {
        return p;
    }
    match std::env::var_os(DATA_ROOT_VAR) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(p),
        _ => base.join(p),
    }
}

struct Lines {
    source: String,
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_lines(path: &Path) -> Result<Lines> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut source = String::new();
    let mut header = None;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(s) = comment.trim().strip_prefix("source:") {
                source = s.trim().to_string();
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if header.is_none() {
            header = Some(fields);
        } else {
            rows.push((i + 1, fields));
        }
    }
    let header = header.ok_or_else(|| Error::parse(path, 1, "missing header line"))?;
    Ok(Lines { source, header, rows })
}

fn check_exists(path: &Path, line: usize, file: &Path) -> Result<()> {
    if file.is_file() {
        Ok(())
    } else {
        Err(Error::parse(
            path,
            line,
            format!("referenced file {} does not exist", file.display()),
        ))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn field(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

impl TripletManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let lines = read_lines(path)?;
        if lines.header != TRIPLET_FIELDS {
            return Err(Error::parse(
                path,
                1,
                format!("expected header `{}`", TRIPLET_FIELDS.join("\t")),
            ));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let mut records = Vec::with_capacity(lines.rows.len());
        for (line, fields) in lines.rows {
            if fields.len() != TRIPLET_FIELDS.len() {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected 6 fields, found {}", fields.len()),
                ));
            }
            let face = |i: usize| FaceRef {
                image: resolve(base, &fields[i]),
                landmarks: resolve(base, &fields[i + 1]),
            };
            let record = TripletRecord {
                anchor: face(0),
                positive: face(2),
                negative: face(4),
            };
            for f in [&record.anchor, &record.positive, &record.negative] {
                check_exists(path, line, &f.image)?;
                check_exists(path, line, &f.landmarks)?;
            }
            let images: HashSet<_> = [&record.anchor.image, &record.positive.image, &record.negative.image]
                .into_iter()
                .collect();
            if images.len() != 3 {
                return Err(Error::parse(path, line, "triplet references the same image twice"));
            }
            records.push(record);
        }
        Ok(TripletManifest {
            source: lines.source,
            records,
        })
    }

    /// Writes paths as given; relative paths resolve against the manifest directory.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        if !self.source.is_empty() {
            text.push_str(&format!("# source: {}\n", self.source));
        }
        text.push_str(&TRIPLET_FIELDS.join("\t"));
        text.push('\n');
        for r in &self.records {
            let parts = [&r.anchor, &r.positive, &r.negative]
                .iter()
                .flat_map(|f| [field(&f.image), field(&f.landmarks)])
                .collect::<Vec<_>>();
            text.push_str(&parts.join("\t"));
            text.push('\n');
        }
        write_text(path, &text)
    }
}

impl AuManifest {
    pub fn num_aus(&self) -> usize {
        self.au_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<&[u8]> {
        self.records.iter().map(|r| r.labels.as_slice()).collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let lines = read_lines(path)?;
        if lines.header.len() <= AU_FIXED_FIELDS.len() || lines.header[..4] != AU_FIXED_FIELDS {
            return Err(Error::parse(
                path,
                1,
                format!("expected header `{}` followed by AU names", AU_FIXED_FIELDS.join("\t")),
            ));
        }
        let au_names = lines.header[4..].to_vec();
        let base = path.parent().unwrap_or(Path::new("."));
        let mut records = Vec::with_capacity(lines.rows.len());
        let mut seen = HashSet::new();
        for (line, fields) in lines.rows {
            if fields.len() != lines.header.len() {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected {} fields, found {}", lines.header.len(), fields.len()),
                ));
            }
            if fields[0].is_empty() || !seen.insert(fields[0].clone()) {
                return Err(Error::parse(
                    path,
                    line,
                    format!("frame id `{}` is empty or repeated", fields[0]),
                ));
            }
            if fields[3].is_empty() {
                return Err(Error::parse(path, line, "empty subject id"));
            }
            let labels = fields[4..]
                .iter()
                .map(|v| match v.as_str() {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => Err(Error::parse(path, line, format!("label `{other}` is not 0 or 1"))),
                })
                .collect::<Result<Vec<u8>>>()?;
            let face = FaceRef {
                image: resolve(base, &fields[1]),
                landmarks: resolve(base, &fields[2]),
            };
            check_exists(path, line, &face.image)?;
            check_exists(path, line, &face.landmarks)?;
            records.push(AuRecord {
                frame_id: fields[0].clone(),
                face,
                subject: fields[3].clone(),
                labels,
            });
        }
        Ok(AuManifest {
            source: lines.source,
            au_names,
            records,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        if !self.source.is_empty() {
            text.push_str(&format!("# source: {}\n", self.source));
        }
        let mut header: Vec<String> = AU_FIXED_FIELDS.iter().map(|s| s.to_string()).collect();
        header.extend(self.au_names.iter().cloned());
        text.push_str(&header.join("\t"));
        text.push('\n');
        for r in &self.records {
            let mut parts = vec![
                r.frame_id.clone(),
                field(&r.face.image),
                field(&r.face.landmarks),
                r.subject.clone(),
            ];
            parts.extend(r.labels.iter().map(|l| l.to_string()));
            text.push_str(&parts.join("\t"));
            text.push('\n');
        }
        write_text(path, &text)
    }

    /// Copy restricted to the given subjects, preserving record order.
    pub fn filter_subjects(&self, subjects: &HashSet<String>) -> AuManifest {
        AuManifest {
            source: self.source.clone(),
            au_names: self.au_names.clone(),
            records: self
                .records
                .iter()
                .filter(|r| subjects.contains(&r.subject))
                .cloned()
                .collect(),
        }
    }
}
