//! Tier 1: density clustering of the observations inside a sliding window of
//! recent frames.

use std::collections::{BTreeMap, VecDeque};

use crate::dbscan::{dbscan, Label};
use crate::error::Result;
use crate::model::{combined_distance, embedding_distance, ClusterAggregate, EngineConfig, ObjectObservation, Timestamp};

use super::aggregate::aggregate_members;
use super::AssociationMode;

/// The most recent `window_len` frames of observations, oldest first.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    capacity: usize,
    frames: VecDeque<(Timestamp, Vec<ObjectObservation>)>,
}

impl SlidingWindow {
    pub fn new(capacity: usize) -> Self {
        SlidingWindow {
            capacity,
            frames: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, t: Timestamp, observations: Vec<ObjectObservation>) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back((t, observations));
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn latest_t(&self) -> Option<Timestamp> {
        self.frames.back().map(|f| f.0)
    }

    pub fn observations(&self) -> impl Iterator<Item = &ObjectObservation> {
        self.frames.iter().flat_map(|f| f.1.iter())
    }
}

/// Clusters produced from one window, keyed by freshly allocated instance id.
pub type WindowClusterBatch = BTreeMap<u64, ClusterAggregate>;

/// Hands out instance ids; never reuses one within a run.
#[derive(Debug, Clone, Default)]
pub struct InstanceIds {
    next: u64,
}

impl InstanceIds {
    pub fn next_id(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }
}

/// Runs per-category DBSCAN over the window and aggregates each cluster.
/// Noise points are dropped. In spatial mode two observations are only
/// neighbors when they also lie within `d_thresh_m` of each other.
pub fn tier1_cluster(
    window: &SlidingWindow,
    cfg: &EngineConfig,
    mode: AssociationMode,
    ids: &mut InstanceIds,
) -> Result<WindowClusterBatch> {
    let mut by_category: BTreeMap<&str, Vec<&ObjectObservation>> = BTreeMap::new();
    for o in window.observations() {
        by_category.entry(o.category.as_str()).or_default().push(o);
    }

    let mut batch = WindowClusterBatch::new();
    for points in by_category.values() {
        let n = points.len();
        let mut dist = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = match mode {
                    AssociationMode::Spatial => {
                        if points[i].world_pos.distance(&points[j].world_pos) > cfg.d_thresh_m {
                            f64::INFINITY
                        } else {
                            combined_distance(points[i], points[j], cfg)?
                        }
                    }
                    AssociationMode::NonSpatial => embedding_distance(points[i], points[j])?,
                };
                dist[i][j] = d;
                dist[j][i] = d;
            }
        }
        let labels = dbscan(n, |i, j| dist[i][j], cfg.dbscan_eps, cfg.dbscan_min_pts);
        let clusters = labels.iter().filter_map(|l| l.cluster()).max().map_or(0, |m| m + 1);
        for c in 0..clusters {
            let members: Vec<&ObjectObservation> = points
                .iter()
                .zip(&labels)
                .filter(|(_, l)| **l == Label::Cluster(c))
                .map(|(p, _)| *p)
                .collect();
            let id = ids.next_id();
            batch.insert(id, aggregate_members(id, &members)?);
        }
    }
    Ok(batch)
}
