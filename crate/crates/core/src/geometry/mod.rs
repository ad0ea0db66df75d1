//! Face canonicalization and the sixteen whole-image crops.

mod align;
mod crops;
mod image;
mod landmarks;

pub use align::{align_face, transform_landmarks, AlignedFace, AlignmentConfig, Similarity};
pub use crops::{crop_image, crop_parts, crop_region, crop_region_named, CropName, CropSet, Rect, CROP_SIZE};
pub use image::RgbImage;
pub use landmarks::{LandmarkSet68, NUM_LANDMARKS};
