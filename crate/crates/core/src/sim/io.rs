//! Stream files: `frames.jsonl` (one frame per line), `gt.jsonl` (objects,
//! then one line per detection) and `stream.json`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GroundTruthObject, GtDetection, PatrolStream, WorldSpec};
use crate::error::{D3aError, Result};
use crate::model::SensorFrame;
use crate::perception::CameraModel;
use crate::store::persist_support::read_jsonl;

pub const FRAMES_FILE: &str = "frames.jsonl";
pub const GT_FILE: &str = "gt.jsonl";
pub const STREAM_MANIFEST_FILE: &str = "stream.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub schema: u32,
    pub spec: WorldSpec,
    pub camera: CameraModel,
    pub embedding_dim: usize,
    pub object_count: usize,
    pub frame_count: usize,
    pub detection_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GtLine {
    Object(GroundTruthObject),
    Detection(GtDetection),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub manifest: StreamManifest,
    pub world: Vec<GroundTruthObject>,
    pub frames: Vec<SensorFrame>,
    pub gt: Vec<GtDetection>,
}

impl SimData {
    pub fn new(spec: &WorldSpec, camera: &CameraModel, world: Vec<GroundTruthObject>, stream: PatrolStream) -> Self {
        SimData {
            manifest: StreamManifest {
                schema: 1,
                spec: spec.clone(),
                camera: *camera,
                embedding_dim: stream.embedding_dim,
                object_count: world.len(),
                frame_count: stream.frames.len(),
                detection_count: stream.gt.len(),
            },
            world,
            frames: stream.frames,
            gt: stream.gt,
        }
    }

    /// Every detection has exactly one ground-truth line and vice versa.
    pub fn check_consistency(&self) -> Result<()> {
        let total: usize = self.frames.iter().map(|f| f.detections.len()).sum();
        if total != self.gt.len() {
            return Err(D3aError::Invalid(format!(
                "stream has {total} detections but ground truth covers {}",
                self.gt.len()
            )));
        }
        for g in &self.gt {
            let frame = self
                .frames
                .get(g.frame_id as usize)
                .filter(|f| f.frame_id == g.frame_id)
                .ok_or_else(|| D3aError::Invalid(format!("ground truth references unknown frame {}", g.frame_id)))?;
            let det = frame.detections.get(g.index).ok_or_else(|| {
                D3aError::Invalid(format!("frame {} has no detection {}", g.frame_id, g.index))
            })?;
            if det.bbox != g.bbox {
                return Err(D3aError::Invalid(format!(
                    "frame {} detection {}: bbox differs from ground truth",
                    g.frame_id, g.index
                )));
            }
            if self.world.get(g.gt_id as usize).is_none_or(|o| o.gt_id != g.gt_id) {
                return Err(D3aError::Invalid(format!("unknown gt object {}", g.gt_id)));
            }
        }
        Ok(())
    }
}

fn write_lines<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| D3aError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| D3aError::io(path, e))?;
    }
    w.flush().map_err(|e| D3aError::io(path, e))
}

pub fn write_stream(dir: &Path, data: &SimData) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| D3aError::io(dir, e))?;
    write_lines(&dir.join(FRAMES_FILE), data.frames.iter())?;
    let objects = data.world.iter().cloned().map(GtLine::Object);
    let detections = data.gt.iter().copied().map(GtLine::Detection);
    write_lines(&dir.join(GT_FILE), objects.chain(detections))?;
    let path = dir.join(STREAM_MANIFEST_FILE);
    let mut bytes = serde_json::to_vec_pretty(&data.manifest)?;
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|e| D3aError::io(&path, e))
}

/// Objects and per-detection labels from a `gt.jsonl` file.
pub fn read_ground_truth(path: &Path) -> Result<(Vec<GroundTruthObject>, Vec<GtDetection>)> {
    let mut world = Vec::new();
    let mut gt = Vec::new();
    for line in read_jsonl::<GtLine>(path)? {
        match line {
            GtLine::Object(o) => world.push(o),
            GtLine::Detection(d) => gt.push(d),
        }
    }
    Ok((world, gt))
}

/// Reads a stream written by [`write_stream`]. `gt.jsonl` is optional for
/// ingestion; without it the world and ground truth come back empty.
pub fn read_stream(dir: &Path) -> Result<SimData> {
    let path = dir.join(STREAM_MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| D3aError::io(&path, e))?;
    let manifest: StreamManifest = serde_json::from_str(&text).map_err(|e| D3aError::Corrupt {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let frames: Vec<SensorFrame> = read_jsonl(&dir.join(FRAMES_FILE))?;
    let gt_path = dir.join(GT_FILE);
    let (world, gt) = if gt_path.exists() {
        read_ground_truth(&gt_path)?
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(SimData {
        manifest,
        world,
        frames,
        gt,
    })
}
