//! Expression coefficients from 2-D landmarks via a linear 3-D face model.

mod camera;
mod fit;
mod model;
mod residuals;
pub mod synthetic;
mod table;

pub use camera::{project_vertex, PoseParams};
pub use fit::{
    fit_coefficients, fit_coefficients_from, init_pose, numeric_jacobian, residual_gradient, rigid_prealign, FitConfig,
    FitResult,
};
pub use model::{ContourGroup, MorphableModel, MODEL_FORMAT_VERSION, NUM_EXPR, NUM_SHAPE};
pub use residuals::{cost, landmark_residuals, num_landmark_residuals};
pub use table::{CoefficientRow, CoefficientTable, FitStatus};
