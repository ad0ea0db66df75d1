use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::camera::{PoseParams, Projector};
use super::model::MorphableModel;
use super::residuals::{cost, ensure_finite, landmark_terms, num_landmark_residuals, regularizer_terms};
use crate::error::{Error, Result};
use crate::geometry::LandmarkSet68;

/// Damping above which the solver gives up on finding a descent step.
const MAX_DAMPING: f64 = 1e16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub lambda_e: f64,
    pub lambda_s: f64,
    pub lm_max_iters: usize,
    pub lm_init_damping: f64,
    pub lm_damping_up: f64,
    pub lm_damping_down: f64,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub convergence_tol: f64,
    /// Forward-difference step, scaled by `max(1, |x|)`.
    pub numeric_jacobian_step: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda_e: 1e-4,
            lambda_s: 1e-4,
            lm_max_iters: 100,
            lm_init_damping: 1e-3,
            lm_damping_up: 10.0,
            lm_damping_down: 10.0,
            convergence_tol: 1e-8,
            numeric_jacobian_step: 1e-6,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_e", self.lambda_e),
            ("lambda_s", self.lambda_s),
            ("lm_init_damping", self.lm_init_damping),
            ("lm_damping_up", self.lm_damping_up),
            ("lm_damping_down", self.lm_damping_down),
            ("convergence_tol", self.convergence_tol),
            ("numeric_jacobian_step", self.numeric_jacobian_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub f_s: Vec<f64>,
    pub f_exp: Vec<f64>,
    pub pose: PoseParams,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

/// Initial pose: intrinsics from the frame size, identity rotation, and a
/// translation that makes the projected mean-face landmark box match the
/// detected box in center and size.
pub fn init_pose(model: &MorphableModel, detected: &LandmarkSet68) -> Result<PoseParams> {
    let (h, w) = detected.image_size();
    let focal = w as f64;
    let pp = [w as f64 / 2.0, h as f64 / 2.0];
    let target = bbox(detected.points());
    if !(target.2 > 0.0 && target.3 > 0.0) {
        return Err(Error::DegenerateLandmarks(
            "detected landmarks have a zero-extent bounding box".into(),
        ));
    }
    let mean_lms: Vec<[f64; 3]> = model.landmark_ids().iter().map(|&i| model.mean()[i]).collect();
    let model_box = bbox(&mean_lms.iter().map(|p| [p[0], p[1]]).collect::<Vec<_>>());
    if !(model_box.2 > 0.0 && model_box.3 > 0.0) {
        return Err(Error::DegenerateLandmarks("model landmarks are degenerate".into()));
    }
    // Orthographic guess, then refine against the true perspective projection.
    let size = |b: (f64, f64, f64, f64)| (b.2 * b.3).sqrt();
    let tz = focal * size(model_box) / size(target);
    let mut t = [
        (target.0 - pp[0]) * tz / focal - model_box.0,
        (target.1 - pp[1]) * tz / focal - model_box.1,
        tz,
    ];
    for _ in 0..10 {
        let pose = PoseParams::new([0.0; 3], t, focal, pp)?;
        let proj = Projector::new(&pose);
        let projected = mean_lms.iter().map(|&v| proj.project(v)).collect::<Result<Vec<_>>>()?;
        let b = bbox(&projected);
        let ratio = size(b) / size(target);
        t[0] += (target.0 - b.0) * t[2] / focal;
        t[1] += (target.1 - b.1) * t[2] / focal;
        t[2] *= ratio;
    }
    PoseParams::new([0.0; 3], t, focal, pp)
}

/// `(center x, center y, width, height)`.
fn bbox(points: &[[f64; 2]]) -> (f64, f64, f64, f64) {
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    ((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
}

/// Parameter vector layout: 6 extrinsics, then `f_s`, then `f_exp`.
struct Problem<'a> {
    model: &'a MorphableModel,
    detected: &'a LandmarkSet68,
    config: &'a FitConfig,
    base_pose: PoseParams,
    n_res: usize,
}

impl Problem<'_> {
    fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64], &'x [f64]) {
        let ns = self.model.num_shape();
        (&x[..6], &x[6..6 + ns], &x[6 + ns..])
    }

    fn residuals_with(&self, x: &[f64], verts: &[[f64; 3]]) -> Result<Vec<f64>> {
        let (e, f_s, f_exp) = self.split(x);
        let pose = self.base_pose.with_extrinsics(e);
        let mut r = Vec::with_capacity(self.n_res);
        landmark_terms(self.model, verts, &Projector::new(&pose), self.detected, &mut r)?;
        regularizer_terms(f_s, f_exp, self.config, &mut r);
        Ok(r)
    }
}

impl LeastSquares for Problem<'_> {
    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (_, f_s, f_exp) = self.split(x);
        let verts = self.model.landmark_vertices(f_s, f_exp)?;
        self.residuals_with(x, &verts)
    }

    /// Forward-difference Jacobian, `n_res × n_params`.
    ///
    /// Coefficient columns reuse the base landmark vertices and shift them by
    /// the perturbed basis column, which is exact for the linear model.
    fn jacobian(&self, x: &[f64], r0: &[f64]) -> Result<DMatrix<f64>> {
        let (_, f_s, f_exp) = self.split(x);
        let verts = self.model.landmark_vertices(f_s, f_exp)?;
        let ns = self.model.num_shape();
        let mut jac = DMatrix::zeros(r0.len(), x.len());
        let mut xp = x.to_vec();
        let mut shifted = verts.clone();
        for j in 0..x.len() {
            let h = self.config.numeric_jacobian_step * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            let step = xp[j] - x[j];
            let r = if j < 6 {
                self.residuals_with(&xp, &verts)?
            } else {
                let basis = if j < 6 + ns {
                    self.model.shape_basis(j - 6)
                } else {
                    self.model.expr_basis(j - 6 - ns)
                };
                for (s, (&vid, v)) in shifted.iter_mut().zip(self.model.landmark_ids().iter().zip(&verts)) {
                    for d in 0..3 {
                        s[d] = v[d] + step * basis[vid][d];
                    }
                }
                self.residuals_with(&xp, &shifted)?
            };
            xp[j] = x[j];
            for (i, (a, b)) in r.iter().zip(r0).enumerate() {
                jac[(i, j)] = (a - b) / step;
            }
        }
        ensure_finite(jac.as_slice(), "Jacobian")?;
        Ok(jac)
    }
}

/// Levenberg–Marquardt fit of pose, shape and expression to detected landmarks.
///
/// The starting pose is [`init_pose`] followed by [`rigid_prealign`].
pub fn fit_coefficients(model: &MorphableModel, detected: &LandmarkSet68, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let pose0 = rigid_prealign(model, detected, config, init_pose(model, detected)?)?;
    fit_coefficients_from(model, detected, config, pose0)
}

/// [`fit_coefficients`] from a caller-supplied starting pose and zero coefficients.
pub fn fit_coefficients_from(
    model: &MorphableModel,
    detected: &LandmarkSet68,
    config: &FitConfig,
    pose0: PoseParams,
) -> Result<FitResult> {
    config.validate()?;
    pose0.validate()?;
    let problem = Problem {
        model,
        detected,
        config,
        base_pose: pose0,
        n_res: num_landmark_residuals(model) + model.num_shape() + model.num_expr(),
    };
    let mut x0: Vec<f64> = pose0.extrinsics().to_vec();
    x0.resize(6 + model.num_shape() + model.num_expr(), 0.0);
    let out = levenberg_marquardt(&problem, x0, config, config.lm_max_iters)?;
    let (e, f_s, f_exp) = problem.split(&out.x);
    Ok(FitResult {
        f_s: f_s.to_vec(),
        f_exp: f_exp.to_vec(),
        pose: pose0.with_extrinsics(e),
        initial_cost: out.history[0],
        final_cost: *out.history.last().unwrap(),
        iterations: out.iterations,
        converged: out.converged,
        cost_history: out.history,
    })
}

/// Iteration budget of the rigid pre-alignment.
const RIGID_ITERS: usize = 30;

/// Refines the extrinsics of the undeformed mean face against all 68 detected
/// points (point-to-point), so the joint fit starts from a sensible rotation.
pub fn rigid_prealign(
    model: &MorphableModel,
    detected: &LandmarkSet68,
    config: &FitConfig,
    pose0: PoseParams,
) -> Result<PoseParams> {
    let problem = RigidProblem {
        verts: model.landmark_ids().iter().map(|&i| model.mean()[i]).collect(),
        detected,
        base_pose: pose0,
        step: config.numeric_jacobian_step,
    };
    let out = levenberg_marquardt(&problem, pose0.extrinsics().to_vec(), config, RIGID_ITERS)?;
    Ok(pose0.with_extrinsics(&out.x))
}

struct RigidProblem<'a> {
    verts: Vec<[f64; 3]>,
    detected: &'a LandmarkSet68,
    base_pose: PoseParams,
    step: f64,
}

impl LeastSquares for RigidProblem<'_> {
    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        let proj = Projector::new(&self.base_pose.with_extrinsics(x));
        let mut r = Vec::with_capacity(2 * self.verts.len());
        for (v, p) in self.verts.iter().zip(self.detected.points()) {
            let q = proj.project(*v)?;
            r.push(q[0] - p[0]);
            r.push(q[1] - p[1]);
        }
        Ok(r)
    }

    fn jacobian(&self, x: &[f64], r0: &[f64]) -> Result<DMatrix<f64>> {
        forward_difference(self, x, r0, self.step)
    }
}

trait LeastSquares {
    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn jacobian(&self, x: &[f64], r0: &[f64]) -> Result<DMatrix<f64>>;
}

fn forward_difference(p: &impl LeastSquares, x: &[f64], r0: &[f64], step: f64) -> Result<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        xp[j] = x[j] + step * x[j].abs().max(1.0);
        let h = xp[j] - x[j];
        let r = p.residuals(&xp)?;
        xp[j] = x[j];
        for (i, (a, b)) in r.iter().zip(r0).enumerate() {
            jac[(i, j)] = (a - b) / h;
        }
    }
    ensure_finite(jac.as_slice(), "Jacobian")?;
    Ok(jac)
}

struct LmOutcome {
    x: Vec<f64>,
    iterations: usize,
    converged: bool,
    /// Accepted costs, starting with the initial one.
    history: Vec<f64>,
}

/// Solves `(JᵀJ + μ·diag(JᵀJ))·δ = −Jᵀr`; accepted steps divide `μ` by the
/// down factor, rejected ones multiply it by the up factor.
fn levenberg_marquardt(
    problem: &impl LeastSquares,
    mut x: Vec<f64>,
    config: &FitConfig,
    max_iters: usize,
) -> Result<LmOutcome> {
    let mut r = problem.residuals(&x)?;
    ensure_finite(&r, "initial residuals")?;
    let mut current = cost(&r);
    let mut history = vec![current];
    let mut mu = config.lm_init_damping;
    let mut iterations = 0;
    let mut converged = current == 0.0;
    let mut jac = None;

    while !converged && iterations < max_iters {
        iterations += 1;
        let j = match jac.take() {
            Some(j) => j,
            None => problem.jacobian(&x, &r)?,
        };
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        let mut accepted = false;
        let mut lhs = jtj.clone();
        for k in 0..lhs.nrows() {
            lhs[(k, k)] += mu * jtj[(k, k)];
        }
        if let Some(chol) = lhs.cholesky() {
            let delta = chol.solve(&(-&g));
            let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            if let Ok(rt) = problem.residuals(&trial) {
                let c = cost(&rt);
                if c.is_finite() && c < current {
                    let rel = (current - c) / current;
                    x = trial;
                    r = rt;
                    current = c;
                    history.push(c);
                    mu /= config.lm_damping_down;
                    accepted = true;
                    converged = rel < config.convergence_tol || c == 0.0;
                }
            }
        }
        if !accepted {
            mu *= config.lm_damping_up;
            jac = Some(j);
            if mu > MAX_DAMPING {
                let grad_inf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                converged = grad_inf <= 1e-3 * (1.0 + current);
                break;
            }
        }
    }
    Ok(LmOutcome {
        x,
        iterations,
        converged,
        history,
    })
}

/// `Jᵀr` of the energy at a fitted solution, for stationarity checks.
pub fn residual_gradient(
    model: &MorphableModel,
    detected: &LandmarkSet68,
    config: &FitConfig,
    result: &FitResult,
) -> Result<Vec<f64>> {
    let problem = Problem {
        model,
        detected,
        config,
        base_pose: result.pose,
        n_res: num_landmark_residuals(model) + model.num_shape() + model.num_expr(),
    };
    let mut x = result.pose.extrinsics().to_vec();
    x.extend(&result.f_s);
    x.extend(&result.f_exp);
    let r = problem.residuals(&x)?;
    let j = problem.jacobian(&x, &r)?;
    Ok((j.transpose() * DVector::from_column_slice(&r))
        .iter()
        .copied()
        .collect())
}

/// Forward-difference Jacobian of [`landmark_residuals`](super::landmark_residuals)
/// in the fitting parameter layout (extrinsics, `f_s`, `f_exp`).
pub fn numeric_jacobian(
    model: &MorphableModel,
    detected: &LandmarkSet68,
    config: &FitConfig,
    pose: &PoseParams,
    f_s: &[f64],
    f_exp: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let problem = Problem {
        model,
        detected,
        config,
        base_pose: *pose,
        n_res: num_landmark_residuals(model) + model.num_shape() + model.num_expr(),
    };
    let mut x = pose.extrinsics().to_vec();
    x.extend(f_s);
    x.extend(f_exp);
    let r = problem.residuals(&x)?;
    let j = problem.jacobian(&x, &r)?;
    Ok(j.row_iter().map(|row| row.iter().copied().collect()).collect())
}
