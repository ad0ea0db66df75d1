use serde::{Deserialize, Serialize};

use super::image::RgbImage;
use super::landmarks::LandmarkSet68;
use crate::error::{Error, Result};

/// Canonical face frame: output side length and the five anchor positions
/// (left eye, right eye, nose tip, left and right mouth corner) given as
/// fractions of the side length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub canonical_size: usize,
    pub template: [[f64; 2]; 5],
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            canonical_size: 176,
            template: [[0.33, 0.40], [0.67, 0.40], [0.50, 0.58], [0.37, 0.73], [0.63, 0.73]],
        }
    }
}

impl AlignmentConfig {
    pub fn with_size(canonical_size: usize) -> Self {
        AlignmentConfig {
            canonical_size,
            ..Self::default()
        }
    }

    /// Template anchors in canonical pixel coordinates.
    pub fn template_pixels(&self) -> [[f64; 2]; 5] {
        let s = self.canonical_size as f64;
        self.template.map(|[x, y]| [x * s, y * s])
    }

    pub fn validate(&self) -> Result<()> {
        if self.canonical_size < 4 {
            return Err(Error::Config("canonical_size must be at least 4".into()));
        }
        if self.template.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("alignment template must be finite".into()));
        }
        Ok(())
    }
}

/// `p ↦ s·R·p + t`, stored as `x' = a·x − b·y + tx`, `y' = b·x + a·y + ty`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn rotation(&self) -> f64 {
        self.b.atan2(self.a)
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.a * p[0] - self.b * p[1] + self.tx,
            self.b * p[0] + self.a * p[1] + self.ty,
        ]
    }

    pub fn inverse(&self) -> Similarity {
        let d = self.a * self.a + self.b * self.b;
        let (a, b) = (self.a / d, -self.b / d);
        Similarity {
            a,
            b,
            tx: -(a * self.tx - b * self.ty),
            ty: -(b * self.tx + a * self.ty),
        }
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &Similarity) -> Similarity {
        let t = self.apply([first.tx, first.ty]);
        Similarity {
            a: self.a * first.a - self.b * first.b,
            b: self.b * first.a + self.a * first.b,
            tx: t[0],
            ty: t[1],
        }
    }

    pub fn matrix(&self) -> [[f64; 3]; 2] {
        [[self.a, -self.b, self.tx], [self.b, self.a, self.ty]]
    }

    /// Least-squares similarity taking `src` onto `dst`.
    ///
    /// Fails when the source points are coincident or collinear: the ratio of
    /// the smaller to the larger principal extent must exceed 1e-6.
    pub fn fit(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Similarity> {
        assert_eq!(src.len(), dst.len());
        let n = src.len() as f64;
        let centroid = |pts: &[[f64; 2]]| {
            let (sx, sy) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
            [sx / n, sy / n]
        };
        let (cs, cd) = (centroid(src), centroid(dst));
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        let (mut num_a, mut num_b) = (0.0, 0.0);
        for (p, q) in src.iter().zip(dst) {
            let (x, y) = (p[0] - cs[0], p[1] - cs[1]);
            let (u, v) = (q[0] - cd[0], q[1] - cd[1]);
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
            num_a += x * u + y * v;
            num_b += x * v - y * u;
        }
        let trace = sxx + syy;
        let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
        let (major, minor) = ((trace + disc) / 2.0, ((trace - disc) / 2.0).max(0.0));
        if !(major > 0.0) || (minor / major).sqrt() <= 1e-6 {
            return Err(Error::AlignmentDegenerate);
        }
        let (a, b) = (num_a / trace, num_b / trace);
        Ok(Similarity {
            a,
            b,
            tx: cd[0] - (a * cs[0] - b * cs[1]),
            ty: cd[1] - (b * cs[0] + a * cs[1]),
        })
    }
}

/// A face resampled into the canonical frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedFace {
    pub image: RgbImage,
    /// Maps source-frame pixel coordinates to canonical coordinates.
    pub transform: Similarity,
}

impl AlignedFace {
    pub fn size(&self) -> usize {
        self.image.height()
    }
}

/// Warps `frame` so the landmark anchors land on the configured template.
pub fn align_face(frame: &RgbImage, landmarks: &LandmarkSet68, config: &AlignmentConfig) -> Result<AlignedFace> {
    config.validate()?;
    if landmarks.image_size() != (frame.height(), frame.width()) {
        return Err(Error::InvalidInput(format!(
            "landmarks refer to a {:?} frame but the image is {}x{}",
            landmarks.image_size(),
            frame.height(),
            frame.width()
        )));
    }
    let transform = Similarity::fit(&landmarks.anchors(), &config.template_pixels())?;
    let inv = transform.inverse();
    let s = config.canonical_size;
    let image = RgbImage::from_fn(s, s, |r, c| {
        let p = inv.apply([c as f64 + 0.5, r as f64 + 0.5]);
        frame.sample(p[0], p[1])
    });
    Ok(AlignedFace { image, transform })
}

/// Landmarks mapped into the canonical frame by an alignment transform.
pub fn transform_landmarks(
    landmarks: &LandmarkSet68,
    transform: &Similarity,
    canonical_size: usize,
) -> Result<LandmarkSet68> {
    let pts = landmarks.points().iter().map(|&p| transform.apply(p)).collect();
    LandmarkSet68::new(pts, canonical_size, canonical_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_known_similarity() {
        let truth = Similarity {
            a: 1.3 * 0.4f64.cos(),
            b: 1.3 * 0.4f64.sin(),
            tx: 5.0,
            ty: -2.0,
        };
        let src = [[0.0, 0.0], [3.0, 1.0], [1.0, 4.0], [-2.0, 2.0], [5.0, 5.0]];
        let dst = src.map(|p| truth.apply(p));
        let fit = Similarity::fit(&src, &dst).unwrap();
        assert!((fit.a - truth.a).abs() < 1e-12 && (fit.b - truth.b).abs() < 1e-12);
        assert!((fit.tx - truth.tx).abs() < 1e-12 && (fit.ty - truth.ty).abs() < 1e-12);
    }

    #[test]
    fn collinear_and_coincident_anchors_are_degenerate() {
        let line = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]];
        assert!(matches!(Similarity::fit(&line, &line), Err(Error::AlignmentDegenerate)));
        let point = [[2.0, 2.0]; 5];
        assert!(matches!(
            Similarity::fit(&point, &line),
            Err(Error::AlignmentDegenerate)
        ));
    }

    #[test]
    fn inverse_and_compose() {
        let t = Similarity {
            a: 0.7,
            b: -0.2,
            tx: 3.0,
            ty: 1.0,
        };
        let id = t.compose(&t.inverse());
        assert!((id.a - 1.0).abs() < 1e-12 && id.b.abs() < 1e-12);
        assert!(id.tx.abs() < 1e-12 && id.ty.abs() < 1e-12);
    }

    #[test]
    fn config_rejects_tiny_canvas() {
        assert!(AlignmentConfig::with_size(3).validate().is_err());
        assert!(AlignmentConfig::default().validate().is_ok());
    }
}
