use std::path::Path;

use crate::error::{Error, Result};

pub const NUM_LANDMARKS: usize = 68;

/// 68 facial landmarks in iBUG ordering, in pixel coordinates of an image of
/// known size.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet68 {
    points: Vec<[f64; 2]>,
    height: usize,
    width: usize,
}

impl LandmarkSet68 {
    pub fn new(points: Vec<[f64; 2]>, height: usize, width: usize) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::InvalidInput(format!(
                "expected {NUM_LANDMARKS} landmarks, got {}",
                points.len()
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("landmark image size must be non-zero".into()));
        }
        let (h, w) = (height as f64, width as f64);
        for (i, p) in points.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::InvalidInput(format!("landmark {i} is not finite")));
            }
            if p[0] < -0.25 * w || p[0] > 1.25 * w || p[1] < -0.25 * h || p[1] > 1.25 * h {
                return Err(Error::InvalidInput(format!(
                    "landmark {i} at ({}, {}) is too far outside the {height}x{width} frame",
                    p[0], p[1]
                )));
            }
        }
        Ok(LandmarkSet68 { points, height, width })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        self.points[i]
    }

    /// `(height, width)` of the frame the points refer to.
    pub fn image_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Reads 68 `x y` lines.
    pub fn read(path: &Path, height: usize, width: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut points = Vec::with_capacity(NUM_LANDMARKS);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let mut coord = || -> Result<f64> {
                parts
                    .next()
                    .ok_or_else(|| Error::parse(path, lineno + 1, "expected two coordinates"))?
                    .parse::<f64>()
                    .map_err(|e| Error::parse(path, lineno + 1, e.to_string()))
            };
            let p = [coord()?, coord()?];
            if parts.next().is_some() {
                return Err(Error::parse(path, lineno + 1, "expected two coordinates"));
            }
            points.push(p);
        }
        Self::new(points, height, width).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::parse(path, 0, msg),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::with_capacity(NUM_LANDMARKS * 24);
        for p in &self.points {
            text.push_str(&format!("{} {}\n", p[0], p[1]));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Centers of the two eyes, the nose tip and the two mouth corners.
    pub fn anchors(&self) -> [[f64; 2]; 5] {
        let mean = |range: std::ops::Range<usize>| {
            let n = range.len() as f64;
            let (sx, sy) = self.points[range]
                .iter()
                .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
            [sx / n, sy / n]
        };
        [
            mean(36..42),
            mean(42..48),
            self.points[30],
            self.points[48],
            self.points[54],
        ]
    }
}
