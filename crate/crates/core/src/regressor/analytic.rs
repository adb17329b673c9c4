//! Centroid-based offset estimate, used as a geometric cross-check for the
//! learned policy.

use crate::geometry::{intersect_ray_plane, unproject_pixel};
use crate::image::Image;
use crate::render::{dark_blob, highlight_blob};
use crate::regressor::EstimateError;
use crate::{Intrinsics, OffsetEstimate, Plane, Vec2, Vec3};

/// Luminance (0..=255) below which a pixel belongs to the tag.
pub const DARK_LUMINANCE: f64 = 60.0;
/// Red dominance above which a pixel carries projected light.
pub const RED_DOMINANCE: f64 = 0.3;
/// Pixels each region needs before its centroid is trusted.
pub const MIN_REGION_PIXELS: usize = 20;

/// Camera calibration needed to lift pixel centroids onto the table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticEstimator {
    pub camera: Intrinsics,
    pub plane: Plane,
}

impl AnalyticEstimator {
    pub fn new(camera: Intrinsics, plane: Plane) -> Self {
        Self { camera, plane }
    }

    /// Table displacement from the tag centroid to the highlight centroid.
    ///
    /// Dark pixels count toward the tag even where the highlight covers them,
    /// so a fully covered tag still has a centroid. A positive estimate means
    /// the believed projector translation is too large along that axis.
    pub fn estimate(&self, image: &Image) -> Result<OffsetEstimate, EstimateError> {
        let tag = dark_blob(image, DARK_LUMINANCE)
            .filter(|b| b.count >= MIN_REGION_PIXELS)
            .ok_or(EstimateError::NotFound("tag"))?;
        let light = highlight_blob(image, RED_DOMINANCE)
            .filter(|b| b.count >= MIN_REGION_PIXELS)
            .ok_or(EstimateError::NotFound("highlight"))?;
        let k = self.camera.scaled_to(image.width(), image.height());
        let lift = |px: Vec2| -> Result<Vec3, EstimateError> {
            intersect_ray_plane(Vec3::zeros(), unproject_pixel(&k, px), &self.plane)
                .map_err(EstimateError::Geometry)
        };
        let d = lift(light.centroid)? - lift(tag.centroid)?;
        Ok(OffsetEstimate::new(d.x, d.y))
    }
}
