//! Baselines and the benchmark harness.

mod report;
mod suite;
mod sweep;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{D3aError, Result};
use crate::model::{BBox, EngineConfig, Point2, Rect, SensorFrame, Timestamp};
use crate::perception::{observe_frame, CameraModel};
use crate::pipeline::{run_stream, AssociationMode};
use crate::sim::{GroundTruthObject, SimData};
use crate::store::{ObjectId, SpatialTemporalStore, StoreMeta};

pub use report::{
    run_benchmark, run_benchmark_with_suite, BenchOutput, CellReport, CellTiming, Duplicates, EngineReport, EngineTiming, MetricsReport, Q3Positions,
    TimingReport,
};
pub use suite::{gen_query_suite, materialize, SuiteQuery, SuiteSpec};
pub use sweep::{fpr_sweep, sweep_csv, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    D3a,
    Naive,
    NonSpatial,
}

impl Engine {
    pub const ALL: [Engine; 3] = [Engine::D3a, Engine::Naive, Engine::NonSpatial];

    pub fn name(self) -> &'static str {
        match self {
            Engine::D3a => "d3a",
            Engine::Naive => "naive",
            Engine::NonSpatial => "nonspatial",
        }
    }

    pub fn parse(s: &str) -> Result<Engine> {
        match s {
            "d3a" => Ok(Engine::D3a),
            "naive" => Ok(Engine::Naive),
            "nonspatial" => Ok(Engine::NonSpatial),
            other => Err(D3aError::Config(format!("unknown engine {other:?}"))),
        }
    }
}

/// Every detection becomes its own object (weight 1) with one occurrence.
pub fn naive_ingest<'a>(
    frames: impl IntoIterator<Item = &'a SensorFrame>,
    cfg: &EngineConfig,
    cam: &CameraModel,
    bounds: Option<&Rect>,
) -> Result<SpatialTemporalStore> {
    let mut store = SpatialTemporalStore::new(StoreMeta {
        engine: Engine::Naive.name().into(),
        config: cfg.clone(),
        origin_t: None,
    });
    for frame in frames {
        frame.validate()?;
        store.set_origin(frame.t);
        for o in observe_frame(frame, cam, bounds)? {
            let id = store.insert_object(&o.category, o.embedding.clone(), 1.0, 1.0);
            store.insert_record(id, o.world_pos, o.t, o.t, o.keyframe(), 1.0, o.t)?;
        }
    }
    Ok(store)
}

/// The pipeline with every position term removed.
pub fn nonspatial_pipeline<'a>(
    frames: impl IntoIterator<Item = &'a SensorFrame>,
    cfg: &EngineConfig,
    cam: &CameraModel,
    bounds: Option<&Rect>,
) -> Result<SpatialTemporalStore> {
    Ok(run_stream(frames, cfg, AssociationMode::NonSpatial, cam, bounds)?.0)
}

/// Builds the store for `engine` over the stream; returns it with the
/// wall-clock processing time in milliseconds.
pub fn build_store(engine: Engine, data: &SimData, cfg: &EngineConfig) -> Result<(SpatialTemporalStore, f64)> {
    let cam = &data.manifest.camera;
    let bounds = Some(&data.manifest.spec.bounds);
    let start = Instant::now();
    let store = match engine {
        Engine::D3a => run_stream(&data.frames, cfg, AssociationMode::Spatial, cam, bounds)?.0,
        Engine::NonSpatial => nonspatial_pipeline(&data.frames, cfg, cam, bounds)?,
        Engine::Naive => naive_ingest(&data.frames, cfg, cam, bounds)?,
    };
    Ok((store, start.elapsed().as_secs_f64() * 1e3))
}

type KeyframeKey = (u64, [u64; 4]);

fn keyframe_key(frame_id: u64, b: &BBox) -> KeyframeKey {
    (frame_id, [b.x_min.to_bits(), b.y_min.to_bits(), b.x_max.to_bits(), b.y_max.to_bits()])
}

/// Lookup tables over the ground-truth association of a stream.
#[derive(Debug, Clone)]
pub struct GroundTruthIndex {
    by_keyframe: HashMap<KeyframeKey, u64>,
    frame_objects: HashMap<u64, BTreeSet<u64>>,
    /// Detection times per gt object, ascending.
    sightings: BTreeMap<u64, Vec<Timestamp>>,
    objects: BTreeMap<u64, GroundTruthObject>,
}

impl GroundTruthIndex {
    pub fn new(data: &SimData) -> Result<Self> {
        data.check_consistency()?;
        let mut idx = GroundTruthIndex {
            by_keyframe: HashMap::new(),
            frame_objects: HashMap::new(),
            sightings: BTreeMap::new(),
            objects: data.world.iter().map(|o| (o.gt_id, o.clone())).collect(),
        };
        for g in &data.gt {
            idx.by_keyframe.insert(keyframe_key(g.frame_id, &g.bbox), g.gt_id);
            idx.frame_objects.entry(g.frame_id).or_default().insert(g.gt_id);
            idx.sightings
                .entry(g.gt_id)
                .or_default()
                .push(data.frames[g.frame_id as usize].t);
        }
        Ok(idx)
    }

    /// The gt object a detection `(frame_id, bbox)` belongs to.
    pub fn gt_of(&self, frame_id: u64, bbox: &BBox) -> Option<u64> {
        self.by_keyframe.get(&keyframe_key(frame_id, bbox)).copied()
    }

    pub fn frame_contains(&self, frame_id: u64, gt_id: u64) -> bool {
        self.frame_objects.get(&frame_id).is_some_and(|s| s.contains(&gt_id))
    }

    pub fn sightings(&self, gt_id: u64) -> &[Timestamp] {
        self.sightings.get(&gt_id).map_or(&[], Vec::as_slice)
    }

    pub fn object(&self, gt_id: u64) -> Option<&GroundTruthObject> {
        self.objects.get(&gt_id)
    }

    pub fn observed_objects(&self) -> impl Iterator<Item = u64> + '_ {
        self.sightings.keys().copied()
    }

    /// True position of `gt_id` at time `t`.
    pub fn position_at(&self, gt_id: u64, t: Timestamp) -> Option<Point2> {
        let o = self.objects.get(&gt_id)?;
        o.placements.get(o.placement_at(t)?).map(|p| p.position)
    }

    /// Per gt object: ObjectId -> number of that object's STc keyframes
    /// showing the gt object.
    pub fn keyframe_votes(&self, store: &SpatialTemporalStore) -> BTreeMap<u64, BTreeMap<ObjectId, usize>> {
        let mut votes: BTreeMap<u64, BTreeMap<ObjectId, usize>> = BTreeMap::new();
        for r in store.records() {
            if let Some(gt) = self.gt_of(r.keyframe.frame_id, &r.keyframe.bbox) {
                *votes.entry(gt).or_default().entry(r.object_id).or_default() += 1;
            }
        }
        votes
    }

    /// The ObjectId standing for each gt object: most keyframes of it, then
    /// larger weight, then the more confident best keyframe, then lower id.
    pub fn perfect_mapping(&self, store: &SpatialTemporalStore) -> BTreeMap<u64, ObjectId> {
        let mut best_prob: HashMap<ObjectId, f64> = HashMap::new();
        for r in store.records() {
            let e = best_prob.entry(r.object_id).or_insert(0.0);
            *e = e.max(r.keyframe.prob);
        }
        self.keyframe_votes(store)
            .into_iter()
            .filter_map(|(gt, votes)| {
                votes
                    .into_iter()
                    .max_by(|(ia, ca), (ib, cb)| {
                        let wa = store.object(*ia).map_or(0.0, |o| o.weight);
                        let wb = store.object(*ib).map_or(0.0, |o| o.weight);
                        ca.cmp(cb)
                            .then(wa.total_cmp(&wb))
                            .then(best_prob[ia].total_cmp(&best_prob[ib]))
                            .then(ib.cmp(ia))
                    })
                    .map(|(id, _)| (gt, id))
            })
            .collect()
    }
}
