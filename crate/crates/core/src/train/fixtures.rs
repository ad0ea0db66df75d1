//! Synthetic data that exercises the whole pipeline without external datasets:
//! faces rendered from the procedural morphable model, separable triplet
//! clusters, planted-signal AU frames and landmark-only fitting scenes.

use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::data::{AuData, AuFrame, FaceSample, TripletData};
use super::manifest::{AuManifest, AuRecord, FaceRef, TripletManifest, TripletRecord};
use crate::error::{Error, Result};
use crate::geometry::{AlignmentConfig, LandmarkSet68, RgbImage};
use crate::morphable::synthetic::{project_landmarks, random_scene, synthetic_model, SceneOptions, SyntheticScene};
use crate::morphable::{CoefficientRow, CoefficientTable, FitStatus, MorphableModel, PoseParams, NUM_EXPR, NUM_SHAPE};

/// Seed of the morphable model shared by every fixture.
pub const FIXTURE_MODEL_SEED: u64 = 7;

/// Rendering parameters that are not geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceStyle {
    pub skin: [f32; 3],
    pub background: [f32; 3],
    /// Opening and darkness of the inner mouth, 0 closed to 1 wide open.
    pub mouth_open: f32,
    /// Brow stroke half-width in pixels.
    pub brow_width: f32,
    pub noise: f32,
}

impl FaceStyle {
    pub fn random(rng: &mut impl Rng) -> Self {
        let tone = rng.random_range(0.6..0.75f32);
        FaceStyle {
            skin: [
                tone,
                tone * rng.random_range(0.8..0.85),
                tone * rng.random_range(0.65..0.75),
            ],
            background: [0; 3].map(|_| rng.random_range(0.2..0.3)),
            mouth_open: 0.5,
            brow_width: 1.5,
            noise: 0.02,
        }
    }
}

fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

fn lerp(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * t)
}

/// Draws a cartoon face whose features follow the 68 landmarks.
pub fn render_face(landmarks: &LandmarkSet68, style: &FaceStyle, rng: &mut impl Rng) -> RgbImage {
    let (h, w) = landmarks.image_size();
    let pts = landmarks.points();
    let pick = |r: std::ops::Range<usize>| pts[r].to_vec();
    // Face outline: the jaw, closed over the brows lifted by a margin.
    let mut outline = pick(0..17);
    let lift = (pts[8][1] - pts[27][1]).abs() * 0.35;
    outline.extend(pts[17..27].iter().rev().map(|p| [p[0], p[1] - lift]));
    let eyes = [pick(36..42), pick(42..48)];
    let outer_lip = pick(48..60);
    // An open mouth stretches the inner lip vertically about its centre.
    let inner_lip: Vec<[f64; 2]> = {
        let lip = pick(60..68);
        let cy = lip.iter().map(|p| p[1]).sum::<f64>() / lip.len() as f64;
        let stretch = 1.0 + 1.5 * f64::from(style.mouth_open);
        lip.iter().map(|p| [p[0], cy + (p[1] - cy) * stretch]).collect()
    };
    let mut strokes: Vec<([f64; 2], [f64; 2], f64)> = Vec::new();
    let mut chain = |r: std::ops::Range<usize>, width: f64, closed: bool| {
        let idx: Vec<usize> = r.collect();
        for k in 0..idx.len() - 1 {
            strokes.push((pts[idx[k]], pts[idx[k + 1]], width));
        }
        if closed {
            strokes.push((pts[idx[idx.len() - 1]], pts[idx[0]], width));
        }
    };
    let bw = f64::from(style.brow_width);
    chain(0..17, 0.8, false);
    chain(17..22, bw, false);
    chain(22..27, bw, false);
    chain(27..31, 0.9, false);
    chain(31..36, 0.9, false);
    chain(36..42, 0.8, true);
    chain(42..48, 0.8, true);
    let centers = eyes.iter().map(|e| {
        let n = e.len() as f64;
        [
            e.iter().map(|p| p[0]).sum::<f64>() / n,
            e.iter().map(|p| p[1]).sum::<f64>() / n,
        ]
    });
    let pupils: Vec<[f64; 2]> = centers.collect();
    let pupil_r = (pts[39][0] - pts[36][0]).abs() * 0.18;
    let ink = [0.08f32, 0.06, 0.05];
    let lip = lerp(style.skin, [0.7, 0.2, 0.25], 0.6);
    let mouth = lerp(lip, [0.05, 0.02, 0.02], style.mouth_open);
    let noise = Normal::new(0.0f32, style.noise.max(0.0)).expect("valid noise level");
    let mut data = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let p = [c as f64 + 0.5, r as f64 + 0.5];
            let mut px = style.background;
            if point_in_polygon(p, &outline) {
                let shade = 0.9 + 0.1 * (1.0 - (r as f32 / h as f32));
                px = style.skin.map(|v| v * shade);
                if point_in_polygon(p, &outer_lip) {
                    px = lip;
                }
                if point_in_polygon(p, &inner_lip) {
                    px = mouth;
                }
                for (e, centre) in eyes.iter().zip(&pupils) {
                    if point_in_polygon(p, e) {
                        px = [0.92, 0.92, 0.9];
                        if (p[0] - centre[0]).hypot(p[1] - centre[1]) < pupil_r {
                            px = ink;
                        }
                    }
                }
            }
            let d = strokes
                .iter()
                .map(|&(a, b, width)| segment_distance(p, a, b) - width)
                .fold(f64::INFINITY, f64::min);
            if d < 1.0 {
                px = lerp(ink, px, d.max(0.0) as f32);
            }
            for v in px {
                data.push((v + noise.sample(rng)).clamp(0.0, 1.0));
            }
        }
    }
    RgbImage::new(h, w, data).expect("rendered buffer matches its size")
}

/// A rendered frame and its ground truth.
#[derive(Clone, Debug)]
pub struct FixtureFace {
    pub image: RgbImage,
    pub landmarks: LandmarkSet68,
    pub f_s: Vec<f64>,
    pub f_exp: Vec<f64>,
    pub pose: PoseParams,
}

impl FixtureFace {
    fn render(
        model: &MorphableModel,
        f_s: Vec<f64>,
        f_exp: Vec<f64>,
        style: &FaceStyle,
        rng: &mut impl Rng,
        size: usize,
    ) -> Result<Self> {
        let pose = random_pose(rng, size)?;
        let landmarks = project_landmarks(model, &f_s, &f_exp, &pose, size)?;
        let image = render_face(&landmarks, style, rng);
        Ok(FixtureFace {
            image,
            landmarks,
            f_s,
            f_exp,
            pose,
        })
    }

    pub fn sample(&self, alignment: &AlignmentConfig) -> Result<FaceSample> {
        let aligned = crate::geometry::align_face(&self.image, &self.landmarks, alignment)?;
        let crops = crate::geometry::crop_parts(&aligned)?;
        Ok(FaceSample {
            face: aligned.image,
            crops,
        })
    }

    fn write(&self, dir: &Path, stem: &str) -> Result<FaceRef> {
        let image = PathBuf::from(format!("{stem}.png"));
        let landmarks = PathBuf::from(format!("{stem}.pts"));
        self.image.save(&dir.join(&image))?;
        self.landmarks.write(&dir.join(&landmarks))?;
        Ok(FaceRef { image, landmarks })
    }
}

fn random_pose(rng: &mut impl Rng, size: usize) -> Result<PoseParams> {
    let s = size as f64;
    PoseParams::new(
        [0; 3].map(|_| rng.random_range(-0.1..=0.1)),
        [
            rng.random_range(-0.05..=0.05),
            rng.random_range(-0.05..=0.05),
            rng.random_range(3.6..=4.2),
        ],
        s,
        [s / 2.0, s / 2.0],
    )
}

fn uniform_vec(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// Rendered frame size of every fixture.
pub const FIXTURE_IMAGE_SIZE: usize = 160;

/// Two expression clusters rendered over varied identities.
///
/// Cluster A has an open mouth and heavy brows, cluster B a closed mouth and
/// thin brows; both also shift the expression coefficients in opposite
/// directions. Triplets take anchor and positive from A and the negative from B.
#[derive(Clone, Debug)]
pub struct ClusterFixture {
    pub faces: Vec<FixtureFace>,
    /// `true` for members of cluster A.
    pub in_a: Vec<bool>,
    pub train: Vec<[usize; 3]>,
    pub heldout: Vec<[usize; 3]>,
}

impl ClusterFixture {
    /// `pool` faces per cluster for training triplets and half as many held out.
    pub fn generate(seed: u64, train_triplets: usize, heldout_triplets: usize, pool: usize) -> Result<Self> {
        if pool < 2 {
            return Err(Error::InvalidInput("each cluster needs at least two faces".into()));
        }
        let model = synthetic_model(FIXTURE_MODEL_SEED);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let direction: Vec<f64> = (0..NUM_EXPR)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let mut faces = Vec::new();
        let mut in_a = Vec::new();
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); 4];
        let held = (pool / 2).max(2);
        for (g, (a_member, count)) in [(true, pool), (false, pool), (true, held), (false, held)]
            .into_iter()
            .enumerate()
        {
            for _ in 0..count {
                let sign = if a_member { 1.0 } else { -1.0 };
                let f_exp = direction
                    .iter()
                    .map(|d| sign * 0.6 * d + rng.random_range(-0.3..=0.3))
                    .collect();
                let mut style = FaceStyle::random(&mut rng);
                style.mouth_open = if a_member {
                    rng.random_range(0.8..1.0)
                } else {
                    rng.random_range(0.0..0.2)
                };
                style.brow_width = if a_member {
                    rng.random_range(2.2..2.8)
                } else {
                    rng.random_range(0.6..1.0)
                };
                let f_s = uniform_vec(&mut rng, NUM_SHAPE, 1.0);
                groups[g].push(faces.len());
                faces.push(FixtureFace::render(
                    &model,
                    f_s,
                    f_exp,
                    &style,
                    &mut rng,
                    FIXTURE_IMAGE_SIZE,
                )?);
                in_a.push(a_member);
            }
        }
        let triplets = |rng: &mut ChaCha8Rng, a: &[usize], b: &[usize], n: usize| -> Vec<[usize; 3]> {
            (0..n)
                .map(|_| {
                    let pair: Vec<usize> = a.choose_multiple(rng, 2).copied().collect();
                    [pair[0], pair[1], *b.choose(rng).expect("non-empty cluster")]
                })
                .collect()
        };
        let train = triplets(&mut rng, &groups[0], &groups[1], train_triplets);
        let heldout = triplets(&mut rng, &groups[2], &groups[3], heldout_triplets);
        Ok(ClusterFixture {
            faces,
            in_a,
            train,
            heldout,
        })
    }

    /// Aligns and crops every face once; both splits index the same faces.
    pub fn samples(&self, alignment: &AlignmentConfig) -> Result<Vec<FaceSample>> {
        use rayon::prelude::*;
        self.faces.par_iter().map(|f| f.sample(alignment)).collect()
    }

    pub fn data(&self, samples: &[FaceSample], heldout: bool) -> Result<TripletData> {
        let triplets = if heldout { &self.heldout } else { &self.train };
        TripletData::new(samples.to_vec(), triplets.clone())
    }

    /// Writes images, landmarks and `train.tsv` / `heldout.tsv` manifests.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let refs = self
            .faces
            .iter()
            .enumerate()
            .map(|(i, f)| f.write(dir, &format!("face{i:04}")))
            .collect::<Result<Vec<_>>>()?;
        let manifest = |triplets: &[[usize; 3]]| TripletManifest {
            source: "synthetic expression clusters".into(),
            records: triplets
                .iter()
                .map(|&[a, p, n]| TripletRecord {
                    anchor: refs[a].clone(),
                    positive: refs[p].clone(),
                    negative: refs[n].clone(),
                })
                .collect(),
        };
        let train = dir.join("train.tsv");
        let heldout = dir.join("heldout.tsv");
        manifest(&self.train).write(&train)?;
        manifest(&self.heldout).write(&heldout)?;
        Ok((train, heldout))
    }
}

/// Frames whose AU labels are thresholded linear functions of their
/// expression coefficients.
#[derive(Clone, Debug)]
pub struct PlantedAuFixture {
    pub faces: Vec<FixtureFace>,
    pub frame_ids: Vec<String>,
    pub subjects: Vec<String>,
    pub labels: Vec<Vec<u8>>,
    pub au_names: Vec<String>,
    /// Planted direction of each AU over the expression coefficients.
    pub directions: Vec<Vec<f64>>,
}

/// Smallest normalized distance of any frame from any planted boundary.
const PLANTED_MARGIN: f64 = 0.15;

impl PlantedAuFixture {
    pub fn generate(seed: u64, frames: usize, num_aus: usize, subjects: usize) -> Result<Self> {
        if subjects == 0 || num_aus == 0 {
            return Err(Error::InvalidInput("fixture needs subjects and AUs".into()));
        }
        let model = synthetic_model(FIXTURE_MODEL_SEED);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let directions: Vec<Vec<f64>> = (0..num_aus)
            .map(|_| {
                let mut d = vec![0.0; NUM_EXPR];
                for k in rand::seq::index::sample(&mut rng, NUM_EXPR, 4) {
                    d[k] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                }
                let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                d.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let identities: Vec<(Vec<f64>, FaceStyle)> = (0..subjects)
            .map(|_| (uniform_vec(&mut rng, NUM_SHAPE, 1.0), FaceStyle::random(&mut rng)))
            .collect();
        let mut out = PlantedAuFixture {
            faces: Vec::with_capacity(frames),
            frame_ids: Vec::with_capacity(frames),
            subjects: Vec::with_capacity(frames),
            labels: Vec::with_capacity(frames),
            au_names: (0..num_aus).map(|i| format!("AU{:02}", i + 1)).collect(),
            directions,
        };
        for i in 0..frames {
            let s = i % subjects;
            let f_exp = loop {
                let f = uniform_vec(&mut rng, NUM_EXPR, 1.0);
                let clear = out.directions.iter().all(|d| {
                    let dot: f64 = d.iter().zip(&f).map(|(a, b)| a * b).sum();
                    dot.abs() > PLANTED_MARGIN
                });
                if clear {
                    break f;
                }
            };
            let labels = out
                .directions
                .iter()
                .map(|d| u8::from(d.iter().zip(&f_exp).map(|(a, b)| a * b).sum::<f64>() > 0.0))
                .collect();
            let (f_s, style) = &identities[s];
            out.faces.push(FixtureFace::render(
                &model,
                f_s.clone(),
                f_exp,
                style,
                &mut rng,
                FIXTURE_IMAGE_SIZE,
            )?);
            out.frame_ids.push(format!("frame{i:04}"));
            out.subjects.push(format!("S{s:02}"));
            out.labels.push(labels);
        }
        Ok(out)
    }

    /// Ground-truth coefficients, as a perfect fitter would report them.
    pub fn coefficients(&self) -> CoefficientTable {
        let mut table = CoefficientTable::new(NUM_SHAPE, NUM_EXPR);
        for (id, f) in self.frame_ids.iter().zip(&self.faces) {
            table
                .insert(
                    id.clone(),
                    CoefficientRow {
                        f_s: f.f_s.clone(),
                        f_exp: f.f_exp.clone(),
                        pose: f.pose.extrinsics(),
                        final_cost: 0.0,
                        status: FitStatus::Converged,
                    },
                )
                .expect("frame ids are unique");
        }
        table
    }

    pub fn data(&self, alignment: &AlignmentConfig) -> Result<AuData> {
        use rayon::prelude::*;
        let samples = self
            .faces
            .par_iter()
            .map(|f| f.sample(alignment))
            .collect::<Result<Vec<_>>>()?;
        Ok(AuData {
            au_names: self.au_names.clone(),
            frames: samples
                .into_iter()
                .enumerate()
                .map(|(i, sample)| AuFrame {
                    frame_id: self.frame_ids[i].clone(),
                    subject: self.subjects[i].clone(),
                    sample,
                    f_exp: self.faces[i].f_exp.clone(),
                    labels: self.labels[i].clone(),
                })
                .collect(),
        })
    }

    /// Writes frames, `manifest.tsv` and the ground-truth `coefficients.tsv`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut records = Vec::with_capacity(self.faces.len());
        for (i, f) in self.faces.iter().enumerate() {
            records.push(AuRecord {
                frame_id: self.frame_ids[i].clone(),
                face: f.write(dir, &self.frame_ids[i])?,
                subject: self.subjects[i].clone(),
                labels: self.labels[i].clone(),
            });
        }
        let manifest = AuManifest {
            source: "synthetic planted-signal frames".into(),
            au_names: self.au_names.clone(),
            records,
        };
        let mpath = dir.join("manifest.tsv");
        let cpath = dir.join("coefficients.tsv");
        manifest.write(&mpath)?;
        self.coefficients().write(&cpath)?;
        Ok((mpath, cpath))
    }
}

/// Landmark-only scenes for the fitting round trip.
pub fn fitting_scenes(seed: u64, count: usize) -> Result<(MorphableModel, Vec<SyntheticScene>)> {
    let model = synthetic_model(FIXTURE_MODEL_SEED);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = SceneOptions::default();
    let scenes = (0..count)
        .map(|_| random_scene(&model, &mut rng, &opts))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, scenes))
}
