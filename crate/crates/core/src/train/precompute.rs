use rayon::prelude::*;

use super::manifest::AuManifest;
use crate::error::{Error, Result};
use crate::geometry::LandmarkSet68;
use crate::morphable::{fit_coefficients, CoefficientRow, CoefficientTable, FitConfig, MorphableModel};

/// Fits every `(frame_id, landmarks)` pair. A frame whose fit fails is kept
/// with zero coefficients and a `failed` status.
pub fn fit_landmark_sets(
    frames: &[(String, LandmarkSet68)],
    model: &MorphableModel,
    config: &FitConfig,
) -> Result<CoefficientTable> {
    config.validate()?;
    let rows: Vec<CoefficientRow> = frames
        .par_iter()
        .map(|(_, lms)| match fit_coefficients(model, lms, config) {
            Ok(fit) => CoefficientRow::from_fit(&fit),
            Err(_) => CoefficientRow::failed(model.num_shape(), model.num_expr()),
        })
        .collect();
    let mut table = CoefficientTable::new(model.num_shape(), model.num_expr());
    for ((id, _), row) in frames.iter().zip(rows) {
        table.insert(id.clone(), row)?;
    }
    Ok(table)
}

/// Reads each record's landmarks (sized by its image header) and fits them.
/// Unreadable landmark files are errors; fitting failures are flagged rows.
pub fn precompute_coefficients(
    manifest: &AuManifest,
    model: &MorphableModel,
    config: &FitConfig,
) -> Result<CoefficientTable> {
    let frames = manifest
        .records
        .par_iter()
        .map(|r| {
            let (w, h) = image::image_dimensions(&r.face.image).map_err(|source| Error::Image {
                path: r.face.image.clone(),
                source,
            })?;
            let lms = LandmarkSet68::read(&r.face.landmarks, h as usize, w as usize)?;
            Ok((r.frame_id.clone(), lms))
        })
        .collect::<Result<Vec<_>>>()?;
    fit_landmark_sets(&frames, model, config)
}
