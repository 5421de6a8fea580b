//! Seeded ground-truth worlds and patrol streams.
//!
//! The robot loops over a 3x2 grid of waypoints. At each waypoint it spins
//! through twelve 30° headings, then drives to the next waypoint at about a
//! meter per frame. Objects hold a placement for at least
//! `min_placement_ms` and only change placement between frames.

mod io;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{D3aError, Result};
use crate::model::{normalize_angle, BBox, Point2, RawDetection, Rect, RobotPose, SensorFrame, Timestamp};
use crate::perception::{synth_embedding, CameraModel, SynthDetectorParams};
use crate::rng::{substream, Stream};

pub use io::{read_ground_truth, read_stream, write_stream, GtLine, SimData, StreamManifest, FRAMES_FILE, GT_FILE, STREAM_MANIFEST_FILE};

pub const CATEGORIES: [&str; 20] = [
    "cup", "bowl", "bottle", "book", "chair", "laptop", "backpack", "umbrella", "handbag", "vase",
    "clock", "scissors", "teddy bear", "keyboard", "mouse", "remote", "cell phone", "potted plant",
    "sports ball", "banana",
];

/// Latent normal behind the move count. Rounded and clipped to
/// `1..=dynamic_moves_max` it has mean 2.1 and sd 1.3 for a max of 5.
const MOVES_LATENT_MEAN: f64 = 1.61;
const MOVES_LATENT_SD: f64 = 2.01;

const MAX_ATTEMPTS: usize = 10_000;
const SPIN_STEPS: usize = 12;
const TRAVEL_STEP_M: f64 = 1.0;
const EDGE_MARGIN_M: f64 = 0.2;
const WAYPOINT_CLEARANCE_M: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub bounds: Rect,
    pub n_static: usize,
    pub n_dynamic: usize,
    /// Fixes every dynamic object's move count instead of sampling it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forced_moves: Option<usize>,
    pub dynamic_moves_max: usize,
    pub min_separation_m: f64,
    /// Minimum distance between two placements of one object.
    pub min_move_m: f64,
    pub min_placement_ms: i64,
    pub duration_ms: i64,
    pub start_t: Timestamp,
    pub frame_rate_per_min: f64,
    pub pose_noise_sd_m: f64,
    pub depth_noise_sd_m: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub n_categories: usize,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            bounds: Rect::new(0.0, 0.0, 16.0, 12.0),
            n_static: 49,
            n_dynamic: 10,
            forced_moves: None,
            dynamic_moves_max: 5,
            min_separation_m: 0.5,
            min_move_m: 1.0,
            min_placement_ms: 30 * 60_000,
            duration_ms: 3 * 3_600_000,
            start_t: 1_700_000_000_000,
            frame_rate_per_min: 7.67,
            pose_noise_sd_m: 0.1,
            depth_noise_sd_m: 0.05,
            fpr: 0.1,
            fnr: 0.05,
            n_categories: CATEGORIES.len(),
            seed: 0,
        }
    }
}

impl WorldSpec {
    /// Perfect detector and localization.
    pub fn noiseless(self) -> Self {
        WorldSpec {
            pose_noise_sd_m: 0.0,
            depth_noise_sd_m: 0.0,
            fpr: 0.0,
            fnr: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bounds.width() > 0.0 && self.bounds.height() > 0.0) {
            return Err(D3aError::Config("map bounds must have positive area".into()));
        }
        if !(self.frame_rate_per_min > 0.0) {
            return Err(D3aError::Config("frame_rate_per_min must be > 0".into()));
        }
        if self.duration_ms <= 0 {
            return Err(D3aError::Config("duration must be > 0".into()));
        }
        if self.n_categories == 0 || self.n_categories > CATEGORIES.len() {
            return Err(D3aError::Config(format!("n_categories must be in 1..={}", CATEGORIES.len())));
        }
        if self.dynamic_moves_max < 1 {
            return Err(D3aError::Config("dynamic_moves_max must be >= 1".into()));
        }
        if self.forced_moves == Some(0) {
            return Err(D3aError::Config("dynamic objects need at least one move".into()));
        }
        for (name, v) in [
            ("pose_noise_sd_m", self.pose_noise_sd_m),
            ("depth_noise_sd_m", self.depth_noise_sd_m),
            ("min_separation_m", self.min_separation_m),
            ("min_move_m", self.min_move_m),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(D3aError::Config(format!("{name} must be >= 0")));
            }
        }
        for (name, v) in [("fpr", self.fpr), ("fnr", self.fnr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(D3aError::Config(format!("{name} must be in [0,1]")));
            }
        }
        Ok(())
    }

    pub fn frame_interval_ms(&self) -> f64 {
        60_000.0 / self.frame_rate_per_min
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration_ms as f64 * self.frame_rate_per_min / 60_000.0).floor() as u64
    }

    pub fn end_t(&self) -> Timestamp {
        self.start_t + self.duration_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub position: Point2,
    pub t_start: Timestamp,
    /// Exclusive except for the final placement, which also covers `end_t`.
    pub t_end: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub gt_id: u64,
    pub category: String,
    pub true_embedding_index: usize,
    pub size_m: f64,
    pub placements: Vec<Placement>,
}

impl GroundTruthObject {
    pub fn is_dynamic(&self) -> bool {
        self.placements.len() > 1
    }

    /// Index of the placement in effect at `t`.
    pub fn placement_at(&self, t: Timestamp) -> Option<usize> {
        let last = self.placements.len().checked_sub(1)?;
        self.placements
            .iter()
            .position(|p| p.t_start <= t && t < p.t_end)
            .or_else(|| {
                let p = &self.placements[last];
                (p.t_start <= t && t <= p.t_end).then_some(last)
            })
    }
}

/// Waypoints of the patrol loop, in visiting order.
pub fn waypoints(bounds: &Rect) -> Vec<Point2> {
    let (w, h) = (bounds.width(), bounds.height());
    let at = |fx: f64, fy: f64| Point2::new(bounds.min.x + fx * w, bounds.min.y + fy * h);
    vec![
        at(1.0 / 6.0, 0.25),
        at(0.5, 0.25),
        at(5.0 / 6.0, 0.25),
        at(5.0 / 6.0, 0.75),
        at(0.5, 0.75),
        at(1.0 / 6.0, 0.75),
    ]
}

/// One lap of true poses (without timestamps).
pub fn patrol_loop(bounds: &Rect) -> Vec<(Point2, f64)> {
    let wps = waypoints(bounds);
    let mut out = Vec::new();
    let mut heading = 0.0;
    for (i, &wp) in wps.iter().enumerate() {
        for k in 0..SPIN_STEPS {
            out.push((wp, heading + k as f64 * 2.0 * PI / SPIN_STEPS as f64));
        }
        let next = wps[(i + 1) % wps.len()];
        let (dx, dy) = (next.x - wp.x, next.y - wp.y);
        let len = dx.hypot(dy);
        heading = dy.atan2(dx);
        let steps = (len / TRAVEL_STEP_M).ceil() as usize;
        for j in 1..steps {
            let f = j as f64 / steps as f64;
            out.push((Point2::new(wp.x + f * dx, wp.y + f * dy), heading));
        }
    }
    out
}

/// Splits `total` into `parts` spans of at least `min_len` each.
fn split_duration<R: Rng>(total: i64, parts: usize, min_len: i64, rng: &mut R) -> Vec<i64> {
    let min_len = min_len.min(total / parts as i64);
    let spare = (total - min_len * parts as i64) as f64;
    let draws: Vec<f64> = (0..parts).map(|_| Exp1.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    let mut out: Vec<i64> = draws.iter().map(|d| min_len + (spare * d / sum).floor() as i64).collect();
    let used: i64 = out.iter().sum();
    *out.last_mut().unwrap() += total - used;
    out
}

fn sample_moves<R: Rng>(spec: &WorldSpec, rng: &mut R) -> Result<usize> {
    if let Some(m) = spec.forced_moves {
        return Ok(m);
    }
    let latent = Normal::new(MOVES_LATENT_MEAN, MOVES_LATENT_SD).map_err(|e| D3aError::Config(e.to_string()))?;
    let v: f64 = latent.sample(rng);
    Ok((v.round().max(1.0) as usize).min(spec.dynamic_moves_max))
}

fn overlaps(a: &Placement, b: &Placement) -> bool {
    a.t_start <= b.t_end && b.t_start <= a.t_end
}

/// Deterministic world for `(spec, seed)`. Static objects come first, then
/// dynamic ones; `gt_id` is the position in that order.
pub fn gen_world(spec: &WorldSpec) -> Result<Vec<GroundTruthObject>> {
    spec.validate()?;
    let mut rng = substream(spec.seed, Stream::World, 0);
    let wps = waypoints(&spec.bounds);
    let inner = Rect::new(
        spec.bounds.min.x + EDGE_MARGIN_M,
        spec.bounds.min.y + EDGE_MARGIN_M,
        spec.bounds.max.x - EDGE_MARGIN_M,
        spec.bounds.max.y - EDGE_MARGIN_M,
    );
    if !(inner.width() > 0.0 && inner.height() > 0.0) {
        return Err(D3aError::Infeasible("map too small".into()));
    }
    let total = spec.n_static + spec.n_dynamic;
    let mut objects: Vec<GroundTruthObject> = Vec::with_capacity(total);
    for gt in 0..total {
        let dynamic = gt >= spec.n_static;
        let spans = if dynamic {
            let moves = sample_moves(spec, &mut rng)?;
            split_duration(spec.duration_ms, moves + 1, spec.min_placement_ms, &mut rng)
        } else {
            vec![spec.duration_ms]
        };
        let category = CATEGORIES[rng.random_range(0..spec.n_categories)].to_string();
        let size_m = rng.random_range(0.1..0.5);

        let mut placements: Vec<Placement> = Vec::with_capacity(spans.len());
        let mut t = spec.start_t;
        for (k, span) in spans.iter().enumerate() {
            let t_end = if k + 1 == spans.len() { spec.end_t() } else { t + span };
            let mut candidate = Placement {
                position: Point2::default(),
                t_start: t,
                t_end,
            };
            let mut attempts = 0;
            loop {
                attempts += 1;
                if attempts > MAX_ATTEMPTS {
                    return Err(D3aError::Infeasible(format!(
                        "no position for object {gt} placement {k} after {MAX_ATTEMPTS} attempts"
                    )));
                }
                candidate.position = Point2::new(
                    rng.random_range(inner.min.x..inner.max.x),
                    rng.random_range(inner.min.y..inner.max.y),
                );
                let p = candidate.position;
                let clear_of_route = wps.iter().all(|w| w.distance(&p) >= WAYPOINT_CLEARANCE_M);
                let separated = objects
                    .iter()
                    .flat_map(|o| o.placements.iter())
                    .filter(|q| overlaps(q, &candidate))
                    .all(|q| q.position.distance(&p) > spec.min_separation_m);
                let moved = placements.iter().all(|q| q.position.distance(&p) > spec.min_move_m);
                if clear_of_route && separated && moved {
                    break;
                }
            }
            placements.push(candidate);
            t = t_end;
        }
        objects.push(GroundTruthObject {
            gt_id: gt as u64,
            category,
            true_embedding_index: gt,
            size_m,
            placements,
        });
    }
    Ok(objects)
}

/// Ground-truth identity of one generated detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtDetection {
    pub frame_id: u64,
    pub index: usize,
    pub gt_id: u64,
    pub placement: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatrolStream {
    pub frames: Vec<SensorFrame>,
    pub gt: Vec<GtDetection>,
    pub embedding_dim: usize,
}

impl PatrolStream {
    pub fn detection_count(&self) -> usize {
        self.gt.len()
    }
}

/// Embedding dimension for a world: one slot per object, widened if an
/// object references a higher index.
pub fn embedding_dim(world: &[GroundTruthObject]) -> usize {
    world
        .iter()
        .map(|o| o.true_embedding_index + 1)
        .max()
        .unwrap_or(1)
        .max(world.len())
}

/// Renders the patrol. Frame `k` draws from its own substream, so any frame
/// can be regenerated on its own.
pub fn gen_patrol(world: &[GroundTruthObject], spec: &WorldSpec, cam: &CameraModel) -> Result<PatrolStream> {
    spec.validate()?;
    cam.validate()?;
    let lap = patrol_loop(&spec.bounds);
    let dim = embedding_dim(world);
    let detector = SynthDetectorParams {
        num_gt_objects: dim,
        fpr: spec.fpr,
        fnr: spec.fnr,
        rng_seed: spec.seed,
    };
    let pose_noise = Normal::new(0.0, spec.pose_noise_sd_m).map_err(|e| D3aError::Config(e.to_string()))?;
    let depth_noise = Normal::new(0.0, spec.depth_noise_sd_m).map_err(|e| D3aError::Config(e.to_string()))?;
    let half_fov = 0.5 * cam.horizontal_fov;
    let mut frames = Vec::with_capacity(spec.frame_count() as usize);
    let mut gt = Vec::new();

    for k in 0..spec.frame_count() {
        let mut rng = substream(spec.seed, Stream::Frame, k);
        let t = spec.start_t + (k as f64 * spec.frame_interval_ms()).round() as i64;
        let (pos, heading) = lap[k as usize % lap.len()];
        let theta = normalize_angle(heading)?;
        let dx: f64 = pose_noise.sample(&mut rng);
        let dy: f64 = pose_noise.sample(&mut rng);
        let pose = RobotPose::new(pos.x + dx, pos.y + dy, theta, t)?;

        let mut detections = Vec::new();
        for obj in world {
            let Some(pi) = obj.placement_at(t) else { continue };
            let target = obj.placements[pi].position;
            let range = pos.distance(&target);
            if !(range > 0.0 && range <= cam.max_range_m) {
                continue;
            }
            let bearing = normalize_angle((target.y - pos.y).atan2(target.x - pos.x) - theta)?;
            if bearing.abs() > half_fov {
                continue;
            }
            let Some(embedding) = synth_embedding(obj.true_embedding_index, &detector, &mut rng)? else {
                continue;
            };
            let prob = rng.random_range(0.5..=1.0);
            let noise: f64 = depth_noise.sample(&mut rng);
            let depth_m = (range + noise).clamp(1e-3, cam.max_range_m);
            let u = cam.column_of(bearing);
            let half_w = 0.5 * cam.focal_px() * obj.size_m / range;
            let v = 0.5 * cam.image_height as f64;
            let bbox = BBox::new(u - half_w, v - half_w, u + half_w, v + half_w)?;
            gt.push(GtDetection {
                frame_id: k,
                index: detections.len(),
                gt_id: obj.gt_id,
                placement: pi,
                bbox,
            });
            detections.push(RawDetection {
                category: obj.category.clone(),
                prob,
                bbox,
                embedding,
                depth_m,
            });
        }
        frames.push(SensorFrame {
            frame_id: k,
            t,
            pose,
            image_ref: None,
            detections,
        });
    }
    Ok(PatrolStream {
        frames,
        gt,
        embedding_dim: dim,
    })
}

/// `(gt_id, placement)` pairs seen in fewer than `min_frames` frames.
pub fn under_observed_placements(world: &[GroundTruthObject], stream: &PatrolStream, min_frames: usize) -> Vec<(u64, usize)> {
    let mut counts = std::collections::BTreeMap::new();
    for d in &stream.gt {
        *counts.entry((d.gt_id, d.placement)).or_insert(0usize) += 1;
    }
    world
        .iter()
        .flat_map(|o| (0..o.placements.len()).map(move |p| (o.gt_id, p)))
        .filter(|key| counts.get(key).copied().unwrap_or(0) < min_frames)
        .collect()
}
