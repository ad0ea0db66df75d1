use std::path::Path;

use crate::error::{Error, Result};

/// Height × width × 3 image with channel-interleaved `f32` values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("image must be non-empty".into()));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{height}x{width}x3 image needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(RgbImage { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        RgbImage { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend(f(r, c));
            }
        }
        RgbImage { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn mean(&self) -> f32 {
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64) as f32
    }

    /// Bilinear sample at continuous coordinates where pixel `(r, c)` has its
    /// center at `(c + 0.5, r + 0.5)`. Coordinates outside the image clamp to
    /// the border pixels.
    pub fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let u = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let v = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let c0 = u.floor() as usize;
        let r0 = v.floor() as usize;
        let c1 = (c0 + 1).min(self.width - 1);
        let r1 = (r0 + 1).min(self.height - 1);
        let fx = (u - c0 as f64) as f32;
        let fy = (v - r0 as f64) as f32;
        let (p00, p01, p10, p11) = (
            self.pixel(r0, c0),
            self.pixel(r0, c1),
            self.pixel(r1, c0),
            self.pixel(r1, c1),
        );
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = p00[k] + (p01[k] - p00[k]) * fx;
            let bottom = p10[k] + (p11[k] - p10[k]) * fx;
            out[k] = top + (bottom - top) * fy;
        }
        out
    }

    /// Bilinearly resamples the half-open pixel rectangle onto a new grid.
    pub fn resize_region(
        &self,
        rows: (usize, usize),
        cols: (usize, usize),
        out_h: usize,
        out_w: usize,
    ) -> Result<RgbImage> {
        if rows.0 >= rows.1 || cols.0 >= cols.1 || rows.1 > self.height || cols.1 > self.width {
            return Err(Error::InvalidInput(format!(
                "region rows {rows:?} cols {cols:?} outside {}x{} image",
                self.height, self.width
            )));
        }
        let sy = (rows.1 - rows.0) as f64 / out_h as f64;
        let sx = (cols.1 - cols.0) as f64 / out_w as f64;
        let mut data = Vec::with_capacity(out_h * out_w * 3);
        for r in 0..out_h {
            let y = rows.0 as f64 + (r as f64 + 0.5) * sy;
            for c in 0..out_w {
                let x = cols.0 as f64 + (c as f64 + 0.5) * sx;
                data.extend(self.sample_within(x, y, rows, cols));
            }
        }
        RgbImage::new(out_h, out_w, data)
    }

    /// Like [`sample`](Self::sample) but clamped to a sub-rectangle so crops
    /// never bleed pixels from outside their region.
    fn sample_within(&self, x: f64, y: f64, rows: (usize, usize), cols: (usize, usize)) -> [f32; 3] {
        let x = x.clamp(cols.0 as f64 + 0.5, cols.1 as f64 - 0.5);
        let y = y.clamp(rows.0 as f64 + 0.5, rows.1 as f64 - 0.5);
        self.sample(x, y)
    }

    pub fn resize(&self, out_h: usize, out_w: usize) -> Result<RgbImage> {
        self.resize_region((0, self.height), (0, self.width), out_h, out_w)
    }

    pub fn mirror_horizontal(&self) -> RgbImage {
        RgbImage::from_fn(self.height, self.width, |r, c| self.pixel(r, self.width - 1 - c))
    }

    /// Channel-planar `[3, H, W]` copy used as network input.
    pub fn to_chw(&self) -> Vec<f32> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; 3 * hw];
        for (i, px) in self.data.chunks(3).enumerate() {
            for k in 0..3 {
                out[k * hw + i] = px[k];
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        RgbImage::new(h as usize, w as usize, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size matches dimensions");
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_at_pixel_centers_is_exact() {
        let img = RgbImage::from_fn(3, 4, |r, c| [r as f32, c as f32, 0.5]);
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(img.sample(c as f64 + 0.5, r as f64 + 0.5), img.pixel(r, c));
            }
        }
        assert_eq!(img.sample(1.0, 0.5), [0.0, 0.5, 0.5]);
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = RgbImage::from_fn(5, 7, |r, c| [(r * 7 + c) as f32 / 35.0, 0.1, 0.9]);
        assert_eq!(img.resize(5, 7).unwrap(), img);
    }

    #[test]
    fn mismatched_buffer_is_rejected() {
        assert!(RgbImage::new(2, 2, vec![0.0; 11]).is_err());
        assert!(RgbImage::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn chw_layout_splits_channels() {
        let img = RgbImage::from_fn(1, 2, |_, c| [c as f32, 10.0 + c as f32, 20.0 + c as f32]);
        assert_eq!(img.to_chw(), vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
    }
}
