use nalgebra::{Rotation3, Vector3};

use crate::error::{Error, Result};

/// Rigid head pose plus fixed pinhole intrinsics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseParams {
    /// Axis-angle rotation in radians.
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
    pub focal: f64,
    pub principal_point: [f64; 2],
}

impl PoseParams {
    pub fn new(rotation: [f64; 3], translation: [f64; 3], focal: f64, principal_point: [f64; 2]) -> Result<Self> {
        let pose = PoseParams {
            rotation,
            translation,
            focal,
            principal_point,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) {
            return Err(Error::InvalidInput("focal length must be positive".into()));
        }
        if !(self.translation[2] > 0.0) {
            return Err(Error::InvalidInput("translation z must be positive".into()));
        }
        Ok(())
    }

    /// The six optimized extrinsics: rotation then translation.
    pub fn extrinsics(&self) -> [f64; 6] {
        let [a, b, c] = self.rotation;
        let [x, y, z] = self.translation;
        [a, b, c, x, y, z]
    }

    pub fn with_extrinsics(&self, e: &[f64]) -> PoseParams {
        PoseParams {
            rotation: [e[0], e[1], e[2]],
            translation: [e[3], e[4], e[5]],
            ..*self
        }
    }

    pub fn rotation_matrix(&self) -> Rotation3<f64> {
        Rotation3::from_scaled_axis(Vector3::from(self.rotation))
    }
}

/// Pinhole projection of a single model-space point.
pub fn project_vertex(v: [f64; 3], pose: &PoseParams) -> Result<[f64; 2]> {
    Projector::new(pose).project(v)
}

/// Projection with the rotation matrix computed once.
pub(crate) struct Projector {
    rot: Rotation3<f64>,
    t: Vector3<f64>,
    focal: f64,
    pp: [f64; 2],
}

impl Projector {
    pub fn new(pose: &PoseParams) -> Self {
        Projector {
            rot: pose.rotation_matrix(),
            t: Vector3::from(pose.translation),
            focal: pose.focal,
            pp: pose.principal_point,
        }
    }

    pub fn project(&self, v: [f64; 3]) -> Result<[f64; 2]> {
        let p = self.rot * Vector3::from(v) + self.t;
        if p.z <= 1e-9 {
            return Err(Error::BehindCamera { depth: p.z });
        }
        Ok([self.focal * p.x / p.z + self.pp[0], self.focal * p.y / p.z + self.pp[1]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn behind_camera_is_an_error() {
        let pose = PoseParams::new([0.0; 3], [0.0, 0.0, 1.0], 100.0, [50.0, 50.0]).unwrap();
        assert!(matches!(
            project_vertex([0.0, 0.0, -1.0], &pose),
            Err(Error::BehindCamera { .. })
        ));
        assert!(project_vertex([0.0, 0.0, -0.5], &pose).is_ok());
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(PoseParams::new([0.0; 3], [0.0, 0.0, 1.0], 0.0, [0.0; 2]).is_err());
        assert!(PoseParams::new([0.0; 3], [0.0, 0.0, -1.0], 1.0, [0.0; 2]).is_err());
    }

    #[test]
    fn quarter_turn_about_z() {
        let pose = PoseParams::new(
            [0.0, 0.0, std::f64::consts::FRAC_PI_2],
            [0.0, 0.0, 2.0],
            10.0,
            [0.0, 0.0],
        )
        .unwrap();
        let p = project_vertex([1.0, 0.0, 0.0], &pose).unwrap();
        assert!(p[0].abs() < 1e-12 && (p[1] - 5.0).abs() < 1e-12);
    }
}
