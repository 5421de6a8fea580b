//! Detection front-end: synthetic one-hot embeddings with bit-flip noise,
//! color-histogram embeddings for raster crops, and bearing-plus-range
//! projection of detections into the map frame.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{D3aError, Result};
use crate::model::{Embedding, ObjectObservation, Point2, RawDetection, Rect, RobotPose, SensorFrame};

pub const DEFAULT_HISTOGRAM_BINS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthDetectorParams {
    pub num_gt_objects: usize,
    pub fpr: f64,
    pub fnr: f64,
    pub rng_seed: u64,
}

impl SynthDetectorParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_gt_objects < 1 {
            return Err(D3aError::Config("num_gt_objects must be >= 1".into()));
        }
        for (name, v) in [("fpr", self.fpr), ("fnr", self.fnr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(D3aError::Config(format!("{name} must be in [0,1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Synthetic detector output for ground-truth object `gt_object_index`.
///
/// Returns `None` with probability `fnr`. Otherwise each bit of the object's
/// one-hot code flips independently with probability `fpr` and the result is
/// L2-normalized; an all-zero result falls back to the clean one-hot code.
/// Draw order is fixed: one miss draw, then one draw per bit.
pub fn synth_embedding<R: Rng + ?Sized>(
    gt_object_index: usize,
    params: &SynthDetectorParams,
    rng: &mut R,
) -> Result<Option<Embedding>> {
    params.validate()?;
    let n = params.num_gt_objects;
    if gt_object_index >= n {
        return Err(D3aError::IndexOutOfRange {
            index: gt_object_index,
            len: n,
        });
    }
    if rng.random_bool(params.fnr) {
        return Ok(None);
    }
    let mut bits = vec![0.0; n];
    bits[gt_object_index] = 1.0;
    for bit in bits.iter_mut() {
        if rng.random_bool(params.fpr) {
            *bit = 1.0 - *bit;
        }
    }
    match Embedding::new(bits) {
        Ok(e) => Ok(Some(e)),
        Err(D3aError::ZeroEmbedding) => Embedding::one_hot(n, gt_object_index).map(Some),
        Err(e) => Err(e),
    }
}

/// Joint RGB histogram of a crop, L2-normalized. Bin layout is
/// `r * bins² + g * bins + b`.
pub fn color_histogram(pixels: &[[u8; 3]], bins_per_channel: usize) -> Result<Embedding> {
    if bins_per_channel < 2 {
        return Err(D3aError::Invalid("bins_per_channel must be >= 2".into()));
    }
    if pixels.is_empty() {
        return Err(D3aError::Invalid("empty crop".into()));
    }
    let bins = bins_per_channel;
    let quantize = |v: u8| (v as usize * bins) / 256;
    let mut counts = vec![0.0; bins * bins * bins];
    for [r, g, b] in pixels {
        counts[quantize(*r) * bins * bins + quantize(*g) * bins + quantize(*b)] += 1.0;
    }
    Embedding::new(counts)
}

/// Extracts the pixels of `bbox` from a row-major RGB raster.
pub fn crop(raster: &[[u8; 3]], width: usize, bbox: &crate::model::BBox) -> Vec<[u8; 3]> {
    if width == 0 {
        return Vec::new();
    }
    let height = raster.len() / width;
    let x0 = bbox.x_min.max(0.0).floor() as usize;
    let y0 = bbox.y_min.max(0.0).floor() as usize;
    let x1 = (bbox.x_max.ceil().max(0.0) as usize).min(width);
    let y1 = (bbox.y_max.ceil().max(0.0) as usize).min(height);
    let mut out = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            out.push(raster[y * width + x]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub horizontal_fov: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub max_range_m: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            horizontal_fov: PI / 2.0,
            image_width: 640,
            image_height: 480,
            max_range_m: 4.5,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizontal_fov > 0.0 && self.horizontal_fov < PI) {
            return Err(D3aError::Config("horizontal_fov must be in (0, π)".into()));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(D3aError::Config("image dimensions must be > 0".into()));
        }
        if !(self.max_range_m > 0.0) {
            return Err(D3aError::Config("max_range_m must be > 0".into()));
        }
        Ok(())
    }

    /// Bearing relative to the optical axis for image column `u`.
    pub fn bearing_of(&self, u: f64) -> f64 {
        (0.5 - u / self.image_width as f64) * self.horizontal_fov
    }

    /// Image column for a bearing; inverse of [`CameraModel::bearing_of`].
    pub fn column_of(&self, bearing: f64) -> f64 {
        (0.5 - bearing / self.horizontal_fov) * self.image_width as f64
    }

    /// Focal length in pixels for the pinhole-equivalent width scaling.
    pub fn focal_px(&self) -> f64 {
        0.5 * self.image_width as f64 / (0.5 * self.horizontal_fov).tan()
    }
}

pub fn project_to_world(det: &RawDetection, pose: &RobotPose, cam: &CameraModel) -> Result<Point2> {
    if !(det.depth_m > 0.0 && det.depth_m <= cam.max_range_m) {
        return Err(D3aError::DepthOutOfRange {
            depth: det.depth_m,
            max_range: cam.max_range_m,
        });
    }
    let bearing = cam.bearing_of(det.bbox.center_u());
    let heading = pose.theta + bearing;
    Ok(Point2::new(
        pose.x + det.depth_m * heading.cos(),
        pose.y + det.depth_m * heading.sin(),
    ))
}

/// Converts a frame's detections into map-frame observations. Positions
/// outside `bounds` are clamped and flagged.
pub fn observe_frame(
    frame: &SensorFrame,
    cam: &CameraModel,
    bounds: Option<&Rect>,
) -> Result<Vec<ObjectObservation>> {
    frame
        .detections
        .iter()
        .map(|det| {
            let raw = project_to_world(det, &frame.pose, cam)?;
            let (world_pos, clamped) = match bounds {
                Some(b) if !b.contains(&raw) => (b.clamp(&raw), true),
                _ => (raw, false),
            };
            Ok(ObjectObservation {
                frame_id: frame.frame_id,
                t: frame.t,
                category: det.category.clone(),
                prob: det.prob,
                bbox: det.bbox,
                pose: frame.pose,
                embedding: det.embedding.clone(),
                world_pos,
                clamped,
            })
        })
        .collect()
}
