//! Shared domain types: poses, frames, detections, observations, cluster
//! aggregates and the engine configuration.
//!
//! Embeddings are unit vectors everywhere. Aggregates additionally carry the
//! mean resultant length of their members so that weighted means of
//! embeddings compose exactly regardless of fold order.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{D3aError, Result};

/// Milliseconds since the Unix epoch.
pub type Timestamp = i64;

pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Wraps `theta` into `[-π, π)`.
pub fn normalize_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(D3aError::NonFinite("theta"));
    }
    let mut wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid may round up to exactly 2π for tiny negative inputs
    if wrapped >= PI {
        wrapped -= 2.0 * PI;
    }
    Ok(wrapped)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Weighted mean of two points.
    pub fn weighted_mean(a: &Point2, wa: f64, b: &Point2, wb: f64) -> Point2 {
        let total = wa + wb;
        Point2 {
            x: (a.x * wa + b.x * wb) / total,
            y: (a.y * wa + b.y * wb) / total,
        }
    }
}

/// Axis-aligned rectangle in map coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point2,
    pub max: Point2,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Rect {
            min: Point2::new(min_x, min_y),
            max: Point2::new(max_x, max_y),
        }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn clamp(&self, p: &Point2) -> Point2 {
        Point2::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    /// Heading in `[-π, π)`.
    pub theta: f64,
    pub t: Timestamp,
}

impl RobotPose {
    pub fn new(x: f64, y: f64, theta: f64, t: Timestamp) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(D3aError::NonFinite("pose position"));
        }
        Ok(RobotPose {
            x,
            y,
            theta: normalize_angle(theta)?,
            t,
        })
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Pixel rectangle. Coordinates are sub-pixel so that bearings survive the
/// trip through the image plane exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.x_min, self.y_min, self.x_max, self.y_max];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(D3aError::NonFinite("bbox"));
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(D3aError::Invalid(format!("malformed bbox {self:?}")));
        }
        Ok(())
    }

    pub fn center_u(&self) -> f64 {
        0.5 * (self.x_min + self.x_max)
    }
}

/// A unit-L2-norm feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values` to unit length.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(D3aError::NonFinite("embedding"));
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return Err(D3aError::ZeroEmbedding);
        }
        Ok(Embedding(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn one_hot(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(D3aError::IndexOutOfRange { index, len: dim });
        }
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Ok(Embedding(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_unit(&self) -> bool {
        (l2_norm(&self.0) - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }

    /// Cosine similarity, which for unit vectors is the dot product.
    pub fn cosine_similarity(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(D3aError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn cosine_distance(&self, other: &Embedding) -> Result<f64> {
        Ok((1.0 - self.cosine_similarity(other)?).max(0.0))
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Weighted directional mean of unit vectors.
///
/// `resultant` is the length of the (unnormalized) weighted mean vector, so
/// `direction * resultant` recovers the mean exactly and merging two means is
/// associative and commutative.
pub(crate) fn merge_directions(
    a: &Embedding,
    a_resultant: f64,
    wa: f64,
    b: &Embedding,
    b_resultant: f64,
    wb: f64,
) -> Result<(Embedding, f64)> {
    if a.dim() != b.dim() {
        return Err(D3aError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let total = wa + wb;
    let ka = wa * a_resultant / total;
    let kb = wb * b_resultant / total;
    let mean: Vec<f64> = a.0.iter().zip(&b.0).map(|(x, y)| ka * x + kb * y).collect();
    let resultant = l2_norm(&mean);
    if resultant == 0.0 {
        // antipodal members cancel; keep the heavier direction
        let keep = if wa >= wb { a.clone() } else { b.clone() };
        return Ok((keep, 0.0));
    }
    Ok((Embedding(mean.into_iter().map(|v| v / resultant).collect()), resultant))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub category: String,
    pub prob: f64,
    pub bbox: BBox,
    pub embedding: Embedding,
    pub depth_m: f64,
}

impl RawDetection {
    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(0.0..=1.0).contains(&self.prob) {
            return Err(D3aError::Invalid(format!("prob {} outside [0,1]", self.prob)));
        }
        if !self.embedding.is_unit() {
            return Err(D3aError::Invalid("embedding is not unit norm".into()));
        }
        if !(self.depth_m > 0.0) || !self.depth_m.is_finite() {
            return Err(D3aError::Invalid(format!("depth {} must be > 0", self.depth_m)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub frame_id: u64,
    pub t: Timestamp,
    pub pose: RobotPose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub detections: Vec<RawDetection>,
}

impl SensorFrame {
    pub fn validate(&self) -> Result<()> {
        if self.t != self.pose.t {
            return Err(D3aError::Invalid(format!(
                "frame {}: t {} != pose.t {}",
                self.frame_id, self.t, self.pose.t
            )));
        }
        for det in &self.detections {
            det.validate()?;
        }
        Ok(())
    }
}

/// Object-centric record for one detection, positioned in the map frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectObservation {
    pub frame_id: u64,
    pub t: Timestamp,
    pub category: String,
    pub prob: f64,
    pub bbox: BBox,
    pub pose: RobotPose,
    pub embedding: Embedding,
    pub world_pos: Point2,
    /// Set when `world_pos` fell outside the map bounds and was clamped.
    #[serde(default)]
    pub clamped: bool,
}

impl ObjectObservation {
    pub fn keyframe(&self) -> KeyframeRef {
        KeyframeRef {
            frame_id: self.frame_id,
            bbox: self.bbox,
            prob: self.prob,
            t: self.t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyframeRef {
    pub frame_id: u64,
    pub bbox: BBox,
    pub prob: f64,
    pub t: Timestamp,
}

/// A unique-instance cluster produced by Tier 1 and refined in Tier 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAggregate {
    pub instance_id: u64,
    pub category: String,
    pub embedding: Embedding,
    /// Length of the weighted mean of member embeddings before normalization.
    pub resultant: f64,
    pub world_pos: Point2,
    pub weight: f64,
    pub keyframe: KeyframeRef,
    pub t_first: Timestamp,
    pub t_last: Timestamp,
    pub member_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub d_thresh_m: f64,
    pub window_len: usize,
    /// Frames the sliding window advances per step.
    pub window_stride: usize,
    pub cos_sim_thresh: f64,
    pub stm_capacity: usize,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub map_diag_m: f64,
    /// Number of most-similar STM entries considered in Tier 2.
    pub near_ids_k: usize,
    pub q2_together_window_ms: i64,
    pub rng_seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            d_thresh_m: 0.5,
            window_len: 10,
            window_stride: 1,
            cos_sim_thresh: 0.4,
            stm_capacity: 400,
            dbscan_eps: 0.5,
            dbscan_min_pts: 2,
            map_diag_m: 20.0,
            near_ids_k: 5,
            q2_together_window_ms: 60_000,
            rng_seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_thresh_m", self.d_thresh_m),
            ("cos_sim_thresh", self.cos_sim_thresh),
            ("dbscan_eps", self.dbscan_eps),
            ("map_diag_m", self.map_diag_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(D3aError::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.stm_capacity < 1 {
            return Err(D3aError::Config("stm_capacity must be >= 1".into()));
        }
        if self.window_len < 2 {
            return Err(D3aError::Config("window_len must be >= 2".into()));
        }
        if self.window_stride < 1 || self.window_stride > self.window_len {
            return Err(D3aError::Config(
                "window_stride must be in [1, window_len]".into(),
            ));
        }
        if self.dbscan_min_pts < 1 {
            return Err(D3aError::Config("dbscan_min_pts must be >= 1".into()));
        }
        if self.near_ids_k < 1 {
            return Err(D3aError::Config("near_ids_k must be >= 1".into()));
        }
        if self.q2_together_window_ms < 0 {
            return Err(D3aError::Config("q2_together_window_ms must be >= 0".into()));
        }
        Ok(())
    }

    /// `d_thresh_m` in the unit used by normalized distance comparisons.
    pub fn normalized_d_thresh(&self) -> f64 {
        self.d_thresh_m / self.map_diag_m
    }
}

/// Equal-weight blend of cosine distance and map-normalized Euclidean
/// distance. Observations of different categories are infinitely far apart.
pub fn combined_distance(
    a: &ObjectObservation,
    b: &ObjectObservation,
    cfg: &EngineConfig,
) -> Result<f64> {
    if a.category != b.category {
        return Ok(f64::INFINITY);
    }
    let cos = a.embedding.cosine_distance(&b.embedding)?;
    let euclid = a.world_pos.distance(&b.world_pos) / cfg.map_diag_m;
    Ok(0.5 * cos + 0.5 * euclid)
}

/// Embedding-only distance used by the non-spatial ablation.
pub fn embedding_distance(a: &ObjectObservation, b: &ObjectObservation) -> Result<f64> {
    if a.category != b.category {
        return Ok(f64::INFINITY);
    }
    a.embedding.cosine_distance(&b.embedding)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn obs(category: &str, embedding: Vec<f64>, x: f64, y: f64) -> ObjectObservation {
        obs_at(0, 0, category, embedding, x, y, 0.9)
    }

    pub fn obs_at(
        frame_id: u64,
        t: Timestamp,
        category: &str,
        embedding: Vec<f64>,
        x: f64,
        y: f64,
        prob: f64,
    ) -> ObjectObservation {
        ObjectObservation {
            frame_id,
            t,
            category: category.to_string(),
            prob,
            bbox: BBox::new(10.0, 10.0, 20.0, 20.0).unwrap(),
            pose: RobotPose::new(0.0, 0.0, 0.0, t).unwrap(),
            embedding: Embedding::new(embedding).unwrap(),
            world_pos: Point2::new(x, y),
            clamped: false,
        }
    }
}
