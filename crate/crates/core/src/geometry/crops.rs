use std::fmt;
use std::str::FromStr;

use super::align::AlignedFace;
use super::image::RgbImage;
use crate::error::{Error, Result};

pub const CROP_SIZE: usize = 96;

/// The sixteen whole-image sub-regions fed to the local branch.
///
/// `*34` regions keep three quarters of a side, `*12` regions keep half.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CropName {
    L34,
    R34,
    T34,
    B34,
    L12,
    R12,
    T12,
    B12,
    TL34,
    TR34,
    TL12,
    TR12,
    BL34,
    BR34,
    BL12,
    BR12,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Extent {
    Full,
    Start(Frac),
    End(Frac),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Frac {
    ThreeQuarters,
    Half,
}

impl Frac {
    /// `ceil(fraction · len)` in exact integer arithmetic.
    fn of(self, len: usize) -> usize {
        match self {
            Frac::ThreeQuarters => (3 * len).div_ceil(4),
            Frac::Half => len.div_ceil(2),
        }
    }
}

impl Extent {
    fn interval(self, len: usize) -> (usize, usize) {
        match self {
            Extent::Full => (0, len),
            Extent::Start(f) => (0, f.of(len)),
            Extent::End(f) => (len - f.of(len), len),
        }
    }
}

impl CropName {
    pub const ALL: [CropName; 16] = [
        CropName::L34,
        CropName::R34,
        CropName::T34,
        CropName::B34,
        CropName::L12,
        CropName::R12,
        CropName::T12,
        CropName::B12,
        CropName::TL34,
        CropName::TR34,
        CropName::TL12,
        CropName::TR12,
        CropName::BL34,
        CropName::BR34,
        CropName::BL12,
        CropName::BR12,
    ];

    /// Position in [`CropName::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CropName::L34 => "L34",
            CropName::R34 => "R34",
            CropName::T34 => "T34",
            CropName::B34 => "B34",
            CropName::L12 => "L12",
            CropName::R12 => "R12",
            CropName::T12 => "T12",
            CropName::B12 => "B12",
            CropName::TL34 => "TL34",
            CropName::TR34 => "TR34",
            CropName::TL12 => "TL12",
            CropName::TR12 => "TR12",
            CropName::BL34 => "BL34",
            CropName::BR34 => "BR34",
            CropName::BL12 => "BL12",
            CropName::BR12 => "BR12",
        }
    }

    /// The region seen in a horizontally mirrored image.
    pub fn mirrored(self) -> CropName {
        use CropName::*;
        match self {
            L34 => R34,
            R34 => L34,
            L12 => R12,
            R12 => L12,
            TL34 => TR34,
            TR34 => TL34,
            TL12 => TR12,
            TR12 => TL12,
            BL34 => BR34,
            BR34 => BL34,
            BL12 => BR12,
            BR12 => BL12,
            other => other,
        }
    }

    fn extents(self) -> (Extent, Extent) {
        use CropName::*;
        use Extent::*;
        use Frac::*;
        match self {
            L34 => (Full, Start(ThreeQuarters)),
            R34 => (Full, End(ThreeQuarters)),
            T34 => (Start(ThreeQuarters), Full),
            B34 => (End(ThreeQuarters), Full),
            L12 => (Full, Start(Half)),
            R12 => (Full, End(Half)),
            T12 => (Start(Half), Full),
            B12 => (End(Half), Full),
            TL34 => (Start(ThreeQuarters), Start(ThreeQuarters)),
            TR34 => (Start(ThreeQuarters), End(ThreeQuarters)),
            TL12 => (Start(Half), Start(Half)),
            TR12 => (Start(Half), End(Half)),
            BL34 => (End(ThreeQuarters), Start(ThreeQuarters)),
            BR34 => (End(ThreeQuarters), End(ThreeQuarters)),
            BL12 => (End(Half), Start(Half)),
            BR12 => (End(Half), End(Half)),
        }
    }
}

impl fmt::Display for CropName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CropName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CropName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::UnknownCrop(s.to_string()))
    }
}

/// Half-open pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        (self.row_end - self.row_start) * (self.col_end - self.col_start)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_start..self.row_end).contains(&row) && (self.col_start..self.col_end).contains(&col)
    }
}

pub fn crop_region(name: CropName, height: usize, width: usize) -> Result<Rect> {
    if height < 4 || width < 4 {
        return Err(Error::InvalidInput(format!(
            "crop regions need an image of at least 4x4, got {height}x{width}"
        )));
    }
    let (rows, cols) = name.extents();
    let (row_start, row_end) = rows.interval(height);
    let (col_start, col_end) = cols.interval(width);
    Ok(Rect {
        row_start,
        row_end,
        col_start,
        col_end,
    })
}

/// Crop region lookup by textual name.
pub fn crop_region_named(name: &str, height: usize, width: usize) -> Result<Rect> {
    crop_region(name.parse()?, height, width)
}

/// The sixteen crops, always stored in [`CropName::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct CropSet {
    crops: Vec<RgbImage>,
}

impl CropSet {
    /// Builds a set from `(name, crop)` pairs in any order.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (CropName, RgbImage)>) -> Result<Self> {
        let mut slots: Vec<Option<RgbImage>> = vec![None; CropName::ALL.len()];
        for (name, img) in pairs {
            if img.height() != CROP_SIZE || img.width() != CROP_SIZE {
                return Err(Error::Shape(format!(
                    "crop {name} must be {CROP_SIZE}x{CROP_SIZE}, got {}x{}",
                    img.height(),
                    img.width()
                )));
            }
            let slot = &mut slots[name.index()];
            if slot.is_some() {
                return Err(Error::DuplicateCrop(name));
            }
            *slot = Some(img);
        }
        let crops = slots
            .into_iter()
            .zip(CropName::ALL)
            .map(|(s, name)| s.ok_or(Error::MissingCrop(name)))
            .collect::<Result<_>>()?;
        Ok(CropSet { crops })
    }

    pub fn get(&self, name: CropName) -> &RgbImage {
        &self.crops[name.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (CropName, &RgbImage)> {
        CropName::ALL.into_iter().zip(&self.crops)
    }
}

pub fn crop_parts(face: &AlignedFace) -> Result<CropSet> {
    crop_image(&face.image)
}

/// Crops and resizes any image; [`crop_parts`] applies this to an aligned face.
pub fn crop_image(image: &RgbImage) -> Result<CropSet> {
    let (h, w) = (image.height(), image.width());
    CropSet::from_pairs(
        CropName::ALL
            .into_iter()
            .map(|name| {
                let r = crop_region(name, h, w)?;
                let crop =
                    image.resize_region((r.row_start, r.row_end), (r.col_start, r.col_end), CROP_SIZE, CROP_SIZE)?;
                Ok((name, crop))
            })
            .collect::<Result<Vec<_>>>()?,
    )
}
