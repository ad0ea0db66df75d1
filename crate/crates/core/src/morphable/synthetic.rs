//! Procedural stand-in for a licensed face model, plus scenes rendered from it.
//!
//! The mean face places the 68 landmarks on a stylized frontal face (jaw arc,
//! brows, nose, elliptical eyes and lips) with a smooth depth profile, and adds
//! a regular grid of non-landmark vertices. Shape bases move landmarks only
//! through a dozen low-order polynomial fields, which keeps them separable from
//! the localized expression bases when only 68 points are observed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::camera::{PoseParams, Projector};
use super::model::{ContourGroup, MorphableModel, NUM_EXPR, NUM_SHAPE};
use crate::error::Result;
use crate::geometry::{LandmarkSet68, NUM_LANDMARKS};

const GRID: usize = 12;
/// Largest vertex displacement produced by a unit shape coefficient.
const SHAPE_UNIT: f64 = 0.02;
/// Largest vertex displacement produced by a unit expression coefficient.
const EXPR_UNIT: f64 = 0.04;
const EXPR_WIDTH: f64 = 0.06;

fn depth(x: f64, y: f64) -> f64 {
    0.3 * x * x + 0.1 * y * y - 0.35 * (-(x * x + (y - 0.1).powi(2)) / 0.05).exp()
}

/// Frontal 2-D landmark layout in model units (x right, y down).
pub fn template_landmarks() -> Vec<[f64; 2]> {
    use std::f64::consts::PI;
    let mut pts = Vec::with_capacity(NUM_LANDMARKS);
    for i in 0..17 {
        let t = i as f64 / 16.0;
        pts.push([-(PI * t).cos(), -0.1 + 1.1 * (PI * t).sin()]);
    }
    for side in [-1.0, 1.0] {
        for i in 0..5 {
            let s = i as f64 / 4.0;
            let x = if side < 0.0 { -0.8 + 0.65 * s } else { 0.15 + 0.65 * s };
            pts.push([x, -0.45 - 0.1 * (PI * s).sin()]);
        }
    }
    for i in 0..4 {
        pts.push([0.0, -0.35 + 0.5 * i as f64 / 3.0]);
    }
    for i in 0..5 {
        let s = i as f64 / 4.0;
        pts.push([-0.22 + 0.44 * s, 0.3 + 0.05 * (PI * s).sin()]);
    }
    for cx in [-0.42, 0.42] {
        for k in 0..6 {
            let a = PI + k as f64 * PI / 3.0;
            pts.push([cx + 0.17 * a.cos(), -0.25 + 0.07 * a.sin()]);
        }
    }
    for k in 0..12 {
        let a = PI + k as f64 * PI / 6.0;
        pts.push([0.4 * a.cos(), 0.6 + 0.17 * a.sin()]);
    }
    for k in 0..8 {
        let a = PI + k as f64 * PI / 4.0;
        pts.push([0.28 * a.cos(), 0.6 + 0.06 * a.sin()]);
    }
    pts
}

/// iBUG-68 polyline groups.
pub fn standard_contour_groups() -> Vec<ContourGroup> {
    let open = |range: std::ops::Range<usize>| {
        let n = range.len();
        ContourGroup {
            landmarks: range.collect(),
            closed: false,
            endpoints: (0..n).map(|i| i == 0 || i == n - 1).collect(),
        }
    };
    let closed = |range: std::ops::Range<usize>, ends: [usize; 2]| ContourGroup {
        endpoints: range.clone().map(|l| ends.contains(&l)).collect(),
        landmarks: range.collect(),
        closed: true,
    };
    vec![
        open(0..17),
        open(17..22),
        open(22..27),
        open(27..31),
        open(31..36),
        closed(36..42, [36, 39]),
        closed(42..48, [42, 45]),
        closed(48..60, [48, 54]),
        closed(60..68, [60, 64]),
    ]
}

fn gram_schmidt(vectors: &mut [Vec<f64>]) {
    for i in 0..vectors.len() {
        for j in 0..i {
            let (done, rest) = vectors.split_at_mut(i);
            let dot: f64 = rest[0].iter().zip(&done[j]).map(|(a, b)| a * b).sum();
            rest[0].iter_mut().zip(&done[j]).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = vectors[i].iter().map(|a| a * a).sum::<f64>().sqrt();
        vectors[i].iter_mut().for_each(|a| *a /= norm);
    }
}

/// Rescales to the unit-displacement convention and rounds through `f32` so
/// the model survives its archive format bit for bit.
fn finish_basis(v: &[f64], unit: f64) -> Vec<[f64; 3]> {
    let max = v
        .chunks(3)
        .map(|c| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt())
        .fold(0.0, f64::max);
    v.chunks(3)
        .map(|c| [0, 1, 2].map(|d| (c[d] * unit / max) as f32 as f64))
        .collect()
}

/// Deterministic synthetic model with 60 shape and 51 expression bases.
pub fn synthetic_model(seed: u64) -> MorphableModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xy = template_landmarks();
    for gy in 0..GRID {
        for gx in 0..GRID {
            xy.push([
                -1.0 + 2.0 * gx as f64 / (GRID - 1) as f64,
                -0.8 + 1.8 * gy as f64 / (GRID - 1) as f64,
            ]);
        }
    }
    let mean: Vec<[f64; 3]> = xy
        .iter()
        .map(|&[x, y]| [x as f32 as f64, y as f32 as f64, depth(x, y) as f32 as f64])
        .collect();
    let v = mean.len();

    // Landmark-visible shape fields: in-plane quadratic warps and depth bends.
    let fields: Vec<Vec<f64>> = {
        let mono = |k: usize, x: f64, y: f64| [x, y, x * x, y * y, x * y][k];
        let mut f = Vec::new();
        for d in 0..2 {
            for k in 0..5 {
                f.push(
                    mean.iter()
                        .flat_map(|p| {
                            let mut o = [0.0; 3];
                            o[d] = mono(k, p[0], p[1]);
                            o
                        })
                        .collect(),
                );
            }
        }
        for k in 2..4 {
            f.push(mean.iter().flat_map(|p| [0.0, 0.0, mono(k, p[0], p[1])]).collect());
        }
        f
    };
    let mut shape: Vec<Vec<f64>> = (0..NUM_SHAPE)
        .map(|_| {
            let mut b = vec![0.0; 3 * v];
            for field in &fields {
                let a: f64 = StandardNormal.sample(&mut rng);
                b.iter_mut().zip(field).for_each(|(x, f)| *x += a * f);
            }
            let bumps: Vec<([f64; 2], [f64; 3])> = (0..4)
                .map(|_| {
                    let c = [rng.random_range(-1.0..1.0), rng.random_range(-0.8..1.0)];
                    let d: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(&mut rng));
                    (c, d)
                })
                .collect();
            for (vi, p) in mean.iter().enumerate().skip(NUM_LANDMARKS) {
                for (c, d) in &bumps {
                    let w = (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / 0.18).exp();
                    for k in 0..3 {
                        b[3 * vi + k] += 0.5 * w * d[k];
                    }
                }
            }
            b
        })
        .collect();
    gram_schmidt(&mut shape);

    // Expression bases: narrow bumps centered on distinct landmarks, pushing
    // contour points across their curve and corner points in any direction.
    let lms = template_landmarks();
    let groups = standard_contour_groups();
    let mut expr: Vec<Vec<f64>> = (0..NUM_EXPR)
        .map(|j| {
            let l = (j * 3) % NUM_LANDMARKS;
            let c = lms[l];
            let group = groups.iter().find(|g| g.landmarks.contains(&l)).unwrap();
            let pos = group.landmarks.iter().position(|&x| x == l).unwrap();
            let dir = if group.endpoints[pos] {
                let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                [a.cos(), a.sin()]
            } else {
                let n = group.landmarks.len();
                let prev = lms[group.landmarks[(pos + n - 1) % n]];
                let next = lms[group.landmarks[(pos + 1) % n]];
                let (tx, ty) = (next[0] - prev[0], next[1] - prev[1]);
                let len = tx.hypot(ty);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                [-ty / len * sign, tx / len * sign]
            };
            let dz = 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
            let d = [dir[0], dir[1], dz];
            mean.iter()
                .flat_map(|p| {
                    let w = (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / (2.0 * EXPR_WIDTH * EXPR_WIDTH)).exp();
                    d.map(|x| w * x)
                })
                .collect()
        })
        .collect();
    gram_schmidt(&mut expr);

    MorphableModel::new(
        mean,
        shape.iter().map(|b| finish_basis(b, SHAPE_UNIT)).collect(),
        expr.iter().map(|b| finish_basis(b, EXPR_UNIT)).collect(),
        (0..NUM_LANDMARKS).collect(),
        standard_contour_groups(),
    )
    .expect("synthetic model is well formed")
}

/// Ground truth and observed landmarks of one rendered scene.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub f_s: Vec<f64>,
    pub f_exp: Vec<f64>,
    pub pose: PoseParams,
    pub landmarks: LandmarkSet68,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneOptions {
    pub image_size: usize,
    /// Coefficients are drawn uniformly from `[-coef_bound, coef_bound]`.
    pub coef_bound: f64,
    pub max_rotation: f64,
    pub max_offset: f64,
    pub depth_range: (f64, f64),
}

impl Default for SceneOptions {
    fn default() -> Self {
        SceneOptions {
            image_size: 256,
            coef_bound: 1.0,
            max_rotation: 0.15,
            max_offset: 0.1,
            depth_range: (3.5, 4.5),
        }
    }
}

/// Projects the model under given coefficients and pose.
pub fn project_landmarks(
    model: &MorphableModel,
    f_s: &[f64],
    f_exp: &[f64],
    pose: &PoseParams,
    image_size: usize,
) -> Result<LandmarkSet68> {
    let proj = Projector::new(pose);
    let pts = model
        .landmark_vertices(f_s, f_exp)?
        .into_iter()
        .map(|v| proj.project(v))
        .collect::<Result<Vec<_>>>()?;
    LandmarkSet68::new(pts, image_size, image_size)
}

pub fn random_scene(model: &MorphableModel, rng: &mut impl Rng, opts: &SceneOptions) -> Result<SyntheticScene> {
    let b = opts.coef_bound;
    let f_s: Vec<f64> = (0..model.num_shape()).map(|_| rng.random_range(-b..=b)).collect();
    let f_exp: Vec<f64> = (0..model.num_expr()).map(|_| rng.random_range(-b..=b)).collect();
    let r = opts.max_rotation;
    let o = opts.max_offset;
    let size = opts.image_size as f64;
    let pose = PoseParams::new(
        [0; 3].map(|_| rng.random_range(-r..=r)),
        [
            rng.random_range(-o..=o),
            rng.random_range(-o..=o),
            rng.random_range(opts.depth_range.0..=opts.depth_range.1),
        ],
        size,
        [size / 2.0, size / 2.0],
    )?;
    let landmarks = project_landmarks(model, &f_s, &f_exp, &pose, opts.image_size)?;
    Ok(SyntheticScene {
        f_s,
        f_exp,
        pose,
        landmarks,
    })
}
