use super::camera::{PoseParams, Projector};
use super::fit::FitConfig;
use super::model::MorphableModel;
use crate::error::{Error, Result};
use crate::geometry::{LandmarkSet68, NUM_LANDMARKS};

/// Number of landmark residual components (two per endpoint, one otherwise).
pub fn num_landmark_residuals(model: &MorphableModel) -> usize {
    (0..NUM_LANDMARKS)
        .map(|l| if model.is_endpoint(l) { 2 } else { 1 })
        .sum()
}

/// Residual vector of the fitting energy: landmark terms in landmark order,
/// then `sqrt(λ_e)·f_exp`, then `sqrt(λ_s)·f_s`. The energy is its squared norm.
pub fn landmark_residuals(
    model: &MorphableModel,
    f_s: &[f64],
    f_exp: &[f64],
    pose: &PoseParams,
    detected: &LandmarkSet68,
    config: &FitConfig,
) -> Result<Vec<f64>> {
    let verts = model.landmark_vertices(f_s, f_exp)?;
    let mut r = Vec::with_capacity(num_landmark_residuals(model) + f_s.len() + f_exp.len());
    landmark_terms(model, &verts, &Projector::new(pose), detected, &mut r)?;
    regularizer_terms(f_s, f_exp, config, &mut r);
    Ok(r)
}

pub(crate) fn regularizer_terms(f_s: &[f64], f_exp: &[f64], config: &FitConfig, out: &mut Vec<f64>) {
    let (se, ss) = (config.lambda_e.sqrt(), config.lambda_s.sqrt());
    out.extend(f_exp.iter().map(|c| se * c));
    out.extend(f_s.iter().map(|c| ss * c));
}

pub(crate) fn landmark_terms(
    model: &MorphableModel,
    verts: &[[f64; 3]],
    projector: &Projector,
    detected: &LandmarkSet68,
    out: &mut Vec<f64>,
) -> Result<()> {
    let pts = detected.points();
    for (l, v) in verts.iter().enumerate() {
        let p = projector.project(*v)?;
        if model.is_endpoint(l) {
            out.push(p[0] - pts[l][0]);
            out.push(p[1] - pts[l][1]);
        } else {
            out.push(curve_distance(model, l, p, pts));
        }
    }
    Ok(())
}

/// Signed distance from `p` to the detected polyline around landmark `l`,
/// restricted to the segments joining its two neighbors on either side.
///
/// The sign follows the side of the nearest segment, so the residual passes
/// smoothly through zero when the point crosses the curve.
pub(crate) fn curve_distance(model: &MorphableModel, l: usize, p: [f64; 2], detected: &[[f64; 2]]) -> f64 {
    let (g, pos) = model.group_of(l);
    let group = &model.contour_groups()[g];
    let n = group.landmarks.len() as isize;
    let window: Vec<[f64; 2]> = (-2..=2)
        .filter_map(|off| {
            let q = pos as isize + off;
            let q = if group.closed {
                q.rem_euclid(n)
            } else if (0..n).contains(&q) {
                q
            } else {
                return None;
            };
            Some(detected[group.landmarks[q as usize]])
        })
        .collect();
    let mut best = f64::INFINITY;
    let mut signed = 0.0;
    for seg in window.windows(2) {
        let (d, s) = segment_distance(p, seg[0], seg[1]);
        if d < best {
            best = d;
            signed = s * d;
        }
    }
    signed
}

/// Unsigned distance to segment `ab` and the side of `p` relative to `a→b`.
pub(crate) fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let (px, py) = (p[0] - a[0], p[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ex, ey) = (px - t * dx, py - t * dy);
    let cross = dx * py - dy * px;
    (ex.hypot(ey), if cross < 0.0 { -1.0 } else { 1.0 })
}

pub fn cost(residuals: &[f64]) -> f64 {
    residuals.iter().map(|r| r * r).sum()
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite {what}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance_cases() {
        let (d, s) = segment_distance([0.5, 1.0], [0.0, 0.0], [1.0, 0.0]);
        assert_eq!((d, s), (1.0, 1.0));
        let (d, s) = segment_distance([0.5, -2.0], [0.0, 0.0], [1.0, 0.0]);
        assert_eq!((d, s), (2.0, -1.0));
        let (d, _) = segment_distance([4.0, 4.0], [0.0, 0.0], [1.0, 0.0]);
        assert_eq!(d, 5.0);
        let (d, _) = segment_distance([3.0, 4.0], [0.0, 0.0], [0.0, 0.0]);
        assert_eq!(d, 5.0);
    }
}
