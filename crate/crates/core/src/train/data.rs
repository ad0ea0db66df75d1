use std::collections::{BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::manifest::{AuManifest, FaceRef, TripletManifest};
use crate::au::DatasetStats;
use crate::error::{Error, Result};
use crate::geometry::{align_face, crop_parts, AlignmentConfig, CropSet, LandmarkSet68, RgbImage};
use crate::morphable::CoefficientTable;

/// An aligned face with its sixteen crops, ready for the embedding network.
#[derive(Clone, Debug)]
pub struct FaceSample {
    pub face: RgbImage,
    pub crops: CropSet,
}

impl FaceSample {
    pub fn from_aligned(face: RgbImage) -> Result<Self> {
        let crops = crate::geometry::crop_image(&face)?;
        Ok(FaceSample { face, crops })
    }

    /// Loads, aligns and crops one frame.
    pub fn load(face: &FaceRef, alignment: &AlignmentConfig) -> Result<Self> {
        let image = RgbImage::load(&face.image)?;
        let landmarks = LandmarkSet68::read(&face.landmarks, image.height(), image.width())?;
        let aligned = align_face(&image, &landmarks, alignment)?;
        let crops = crop_parts(&aligned)?;
        Ok(FaceSample {
            face: aligned.image,
            crops,
        })
    }
}

/// Preprocessed faces plus index triplets into them.
#[derive(Clone, Debug)]
pub struct TripletData {
    pub faces: Vec<FaceSample>,
    pub triplets: Vec<[usize; 3]>,
}

impl TripletData {
    pub fn new(faces: Vec<FaceSample>, triplets: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(t) = triplets.iter().find(|t| t.iter().any(|&i| i >= faces.len())) {
            return Err(Error::InvalidInput(format!(
                "triplet {t:?} indexes past {} faces",
                faces.len()
            )));
        }
        Ok(TripletData { faces, triplets })
    }

    /// Preprocesses every distinct image once.
    pub fn load(manifest: &TripletManifest, alignment: &AlignmentConfig) -> Result<Self> {
        let mut index: HashMap<&FaceRef, usize> = HashMap::new();
        let mut refs = Vec::new();
        let mut triplets = Vec::with_capacity(manifest.records.len());
        for r in &manifest.records {
            let mut t = [0; 3];
            for (slot, f) in t.iter_mut().zip([&r.anchor, &r.positive, &r.negative]) {
                *slot = *index.entry(f).or_insert_with(|| {
                    refs.push(f);
                    refs.len() - 1
                });
            }
            triplets.push(t);
        }
        let faces = refs
            .par_iter()
            .map(|f| FaceSample::load(f, alignment))
            .collect::<Result<Vec<_>>>()?;
        Self::new(faces, triplets)
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// One labelled frame with its cached expression coefficients.
#[derive(Clone, Debug)]
pub struct AuFrame {
    pub frame_id: String,
    pub subject: String,
    pub sample: FaceSample,
    pub f_exp: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Clone, Debug)]
pub struct AuData {
    pub au_names: Vec<String>,
    pub frames: Vec<AuFrame>,
}

impl AuData {
    /// Preprocesses every frame and attaches its coefficients; a frame missing
    /// from `coefficients` is an error naming it.
    pub fn load(manifest: &AuManifest, coefficients: &CoefficientTable, alignment: &AlignmentConfig) -> Result<Self> {
        let frames = manifest
            .records
            .par_iter()
            .map(|r| {
                let f_exp = coefficients.f_exp(&r.frame_id)?.to_vec();
                Ok(AuFrame {
                    frame_id: r.frame_id.clone(),
                    subject: r.subject.clone(),
                    sample: FaceSample::load(&r.face, alignment)?,
                    f_exp,
                    labels: r.labels.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AuData {
            au_names: manifest.au_names.clone(),
            frames,
        })
    }

    pub fn num_aus(&self) -> usize {
        self.au_names.len()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn labels(&self) -> Vec<&[u8]> {
        self.frames.iter().map(|f| f.labels.as_slice()).collect()
    }
}

/// Per-AU occurrence counts.
pub fn occurrence_counts(manifest: &AuManifest) -> Vec<usize> {
    let mut counts = vec![0; manifest.num_aus()];
    for r in &manifest.records {
        for (c, &g) in counts.iter_mut().zip(&r.labels) {
            *c += usize::from(g != 0);
        }
    }
    counts
}

/// Occurrence ratios of a training manifest, clamped below at 1e-3.
pub fn compute_stats(manifest: &AuManifest) -> Result<DatasetStats> {
    if manifest.is_empty() {
        return Err(Error::InvalidInput(
            "cannot compute statistics of an empty manifest".into(),
        ));
    }
    DatasetStats::from_labels(&manifest.labels())
}

/// A subject-exclusive split.
#[derive(Clone, Debug)]
pub struct Fold {
    pub index: usize,
    pub test_subjects: BTreeSet<String>,
    pub train: AuManifest,
    pub test: AuManifest,
}

/// Partitions subjects into `k` groups. Subjects are ordered by a seeded hash
/// of their id and dealt round-robin; fold `i` tests on group `i`.
pub fn make_folds(manifest: &AuManifest, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k == 0 {
        return Err(Error::InvalidInput("fold count must be positive".into()));
    }
    let subjects: BTreeSet<&str> = manifest.records.iter().map(|r| r.subject.as_str()).collect();
    if subjects.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} subjects cannot fill {k} folds",
            subjects.len()
        )));
    }
    let mut keyed: Vec<([u8; 32], &str)> = subjects
        .into_iter()
        .map(|s| {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(s.as_bytes());
            (h.finalize().into(), s)
        })
        .collect();
    keyed.sort();
    let mut groups = vec![BTreeSet::new(); k];
    for (i, (_, s)) in keyed.into_iter().enumerate() {
        groups[i % k].insert(s.to_string());
    }
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(index, test_subjects)| {
            let test_set: HashSet<String> = test_subjects.iter().cloned().collect();
            let train_set: HashSet<String> = manifest
                .records
                .iter()
                .map(|r| r.subject.clone())
                .filter(|s| !test_set.contains(s))
                .collect();
            Fold {
                index,
                train: manifest.filter_subjects(&train_set),
                test: manifest.filter_subjects(&test_set),
                test_subjects,
            }
        })
        .collect())
}
