//! The three-tier association pipeline and its single-writer driver.

pub mod aggregate;
pub mod stm;
pub mod tier1;
pub mod tier3;

use serde::{Deserialize, Serialize};

use crate::error::{D3aError, Result};
use crate::model::{EngineConfig, ObjectObservation, Rect, SensorFrame, Timestamp};
use crate::perception::{observe_frame, CameraModel};
use crate::store::{SpatialTemporalStore, StoreMeta};

pub use aggregate::{aggregate_members, merge_aggregates, select_aggregate_keyframe, select_keyframe};
pub use stm::{tier2_update, ShortTermMemory, StmEntry, Tier2Case};
pub use tier1::{tier1_cluster, InstanceIds, SlidingWindow, WindowClusterBatch};
pub use tier3::{flush, tier3_merge, MergeOutcome};

/// Whether position takes part in association. `NonSpatial` is the
/// embedding-only ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssociationMode {
    Spatial,
    NonSpatial,
}

impl AssociationMode {
    pub fn engine_name(self) -> &'static str {
        match self {
            AssociationMode::Spatial => "d3a",
            AssociationMode::NonSpatial => "nonspatial",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub frames: u64,
    pub detections: u64,
    pub clamped: u64,
    pub windows_clustered: u64,
    pub tier2_aggregated: u64,
    pub tier2_moved: u64,
    pub tier2_unseen: u64,
    pub tier3_new: u64,
    pub tier3_moved: u64,
    pub tier3_aggregated: u64,
}

impl PipelineStats {
    fn count_merge(&mut self, outcome: MergeOutcome) {
        match outcome {
            MergeOutcome::NewObject => self.tier3_new += 1,
            MergeOutcome::Moved => self.tier3_moved += 1,
            MergeOutcome::Aggregated => self.tier3_aggregated += 1,
        }
    }
}

pub struct Pipeline {
    cfg: EngineConfig,
    mode: AssociationMode,
    cam: CameraModel,
    bounds: Option<Rect>,
    window: SlidingWindow,
    stm: ShortTermMemory,
    store: SpatialTemporalStore,
    ids: InstanceIds,
    since_cluster: usize,
    last_t: Option<Timestamp>,
    last_frame_id: Option<u64>,
    embedding_dim: Option<usize>,
    stats: PipelineStats,
}

impl Pipeline {
    pub fn new(cfg: EngineConfig, mode: AssociationMode, cam: CameraModel, bounds: Option<Rect>) -> Result<Self> {
        cfg.validate()?;
        cam.validate()?;
        let store = SpatialTemporalStore::new(StoreMeta {
            engine: mode.engine_name().into(),
            config: cfg.clone(),
            origin_t: None,
        });
        Ok(Pipeline {
            window: SlidingWindow::new(cfg.window_len),
            stm: ShortTermMemory::new(cfg.stm_capacity),
            cfg,
            mode,
            cam,
            bounds,
            store,
            ids: InstanceIds::default(),
            since_cluster: 0,
            last_t: None,
            last_frame_id: None,
            embedding_dim: None,
            stats: PipelineStats::default(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn store(&self) -> &SpatialTemporalStore {
        &self.store
    }

    pub fn stm(&self) -> &ShortTermMemory {
        &self.stm
    }

    pub fn stats(&self) -> &PipelineStats {
        &self.stats
    }

    pub fn push_frame(&mut self, frame: &SensorFrame) -> Result<()> {
        frame.validate()?;
        if let Some(prev) = self.last_frame_id {
            if frame.frame_id <= prev {
                return Err(D3aError::Invalid(format!(
                    "frame_id {} not greater than previous {prev}",
                    frame.frame_id
                )));
            }
        }
        self.last_frame_id = Some(frame.frame_id);
        let observations = observe_frame(frame, &self.cam, self.bounds.as_ref())?;
        self.push_observations(frame.t, observations)
    }

    /// Advances the window by one frame of already-projected observations.
    pub fn push_observations(&mut self, t: Timestamp, observations: Vec<ObjectObservation>) -> Result<()> {
        if let Some(prev) = self.last_t {
            if t < prev {
                return Err(D3aError::Invalid(format!("timestamp {t} precedes {prev}")));
            }
        }
        for o in &observations {
            let dim = *self.embedding_dim.get_or_insert(o.embedding.dim());
            if o.embedding.dim() != dim {
                return Err(D3aError::DimensionMismatch {
                    expected: dim,
                    got: o.embedding.dim(),
                });
            }
        }
        self.last_t = Some(t);
        self.store.set_origin(t);
        self.stats.frames += 1;
        self.stats.detections += observations.len() as u64;
        self.stats.clamped += observations.iter().filter(|o| o.clamped).count() as u64;
        self.window.push(t, observations);

        self.since_cluster += 1;
        if self.since_cluster < self.cfg.window_stride {
            return Ok(());
        }
        self.since_cluster = 0;
        let batch = tier1_cluster(&self.window, &self.cfg, self.mode, &mut self.ids)?;
        self.stats.windows_clustered += 1;
        let (evicted, cases) = tier2_update(batch, &mut self.stm, &self.cfg, self.mode, t)?;
        for case in cases {
            match case {
                Tier2Case::Aggregated => self.stats.tier2_aggregated += 1,
                Tier2Case::Moved => self.stats.tier2_moved += 1,
                Tier2Case::Unseen => self.stats.tier2_unseen += 1,
            }
        }
        for lrv in &evicted {
            let (_, outcome) = tier3_merge(lrv, &mut self.store, &self.cfg, self.mode, t)?;
            self.stats.count_merge(outcome);
        }
        Ok(())
    }

    /// Merges what is left in short-term memory and hands back the store.
    pub fn finish(mut self) -> Result<(SpatialTemporalStore, PipelineStats)> {
        let now = self.last_t.unwrap_or(0);
        for lrv in self.stm.drain_lrv_order() {
            let (_, outcome) = tier3_merge(&lrv, &mut self.store, &self.cfg, self.mode, now)?;
            self.stats.count_merge(outcome);
        }
        self.store.check_integrity()?;
        Ok((self.store, self.stats))
    }
}

/// Runs a whole stream through a fresh pipeline.
pub fn run_stream<'a>(
    frames: impl IntoIterator<Item = &'a SensorFrame>,
    cfg: &EngineConfig,
    mode: AssociationMode,
    cam: &CameraModel,
    bounds: Option<&Rect>,
) -> Result<(SpatialTemporalStore, PipelineStats)> {
    let mut p = Pipeline::new(cfg.clone(), mode, *cam, bounds.copied())?;
    for f in frames {
        p.push_frame(f)?;
    }
    p.finish()
}
