//! Tier 2: a bounded short-term memory of recently viewed aggregates.
//!
//! Each incoming cluster is compared against the `near_ids_k` most similar
//! entries of its category. Among those, the spatially nearest one decides
//! between aggregation (same place) and a fresh entry (moved or unseen).
//! Inserting into a full memory first evicts the least recently viewed
//! entry.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::model::{ClusterAggregate, EngineConfig, Timestamp};

use super::aggregate::merge_aggregates;
use super::tier1::WindowClusterBatch;
use super::AssociationMode;

#[derive(Debug, Clone, PartialEq)]
pub struct StmEntry {
    pub aggregate: ClusterAggregate,
    pub last_viewed_t: Timestamp,
}

/// Which of the three Tier 2 cases an incoming cluster hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier2Case {
    Aggregated,
    Moved,
    Unseen,
}

#[derive(Debug, Clone)]
pub struct ShortTermMemory {
    capacity: usize,
    entries: BTreeMap<u64, StmEntry>,
    /// `(last_viewed_t, instance_id)`; the first element is the LRV entry.
    recency: BTreeSet<(Timestamp, u64)>,
}

impl ShortTermMemory {
    pub fn new(capacity: usize) -> Self {
        ShortTermMemory {
            capacity,
            entries: BTreeMap::new(),
            recency: BTreeSet::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, instance_id: u64) -> Option<&StmEntry> {
        self.entries.get(&instance_id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &StmEntry> {
        self.entries.values()
    }

    fn evict_lrv(&mut self) -> Option<ClusterAggregate> {
        let (_, id) = self.recency.pop_first()?;
        self.entries.remove(&id).map(|e| e.aggregate)
    }

    fn insert(&mut self, aggregate: ClusterAggregate, now: Timestamp, evicted: &mut Vec<ClusterAggregate>) {
        if self.entries.len() >= self.capacity {
            evicted.extend(self.evict_lrv());
        }
        let id = aggregate.instance_id;
        self.recency.insert((now, id));
        self.entries.insert(
            id,
            StmEntry {
                aggregate,
                last_viewed_t: now,
            },
        );
    }

    fn replace(&mut self, aggregate: ClusterAggregate, now: Timestamp) {
        let id = aggregate.instance_id;
        if let Some(old) = self.entries.get(&id) {
            self.recency.remove(&(old.last_viewed_t, id));
        }
        self.recency.insert((now, id));
        self.entries.insert(
            id,
            StmEntry {
                aggregate,
                last_viewed_t: now,
            },
        );
    }

    /// Removes every entry, least recently viewed first.
    pub fn drain_lrv_order(&mut self) -> Vec<ClusterAggregate> {
        let mut out = Vec::with_capacity(self.entries.len());
        while let Some(a) = self.evict_lrv() {
            out.push(a);
        }
        out
    }

    /// The `k` most similar same-category entries with similarity at least
    /// `min_sim`, most similar first, ties by ascending instance id.
    fn near_ids(&self, incoming: &ClusterAggregate, min_sim: f64, k: usize) -> Result<Vec<(u64, f64)>> {
        let mut near = Vec::new();
        for (id, e) in &self.entries {
            if e.aggregate.category != incoming.category {
                continue;
            }
            let sim = e.aggregate.embedding.cosine_similarity(&incoming.embedding)?;
            if sim >= min_sim {
                near.push((*id, sim));
            }
        }
        near.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        near.truncate(k);
        Ok(near)
    }
}

/// Folds one window's clusters into the memory. Returns the entries evicted
/// to make room, in eviction order, together with the case taken for each
/// incoming cluster.
pub fn tier2_update(
    batch: WindowClusterBatch,
    stm: &mut ShortTermMemory,
    cfg: &EngineConfig,
    mode: AssociationMode,
    now: Timestamp,
) -> Result<(Vec<ClusterAggregate>, Vec<Tier2Case>)> {
    let mut evicted = Vec::new();
    let mut cases = Vec::with_capacity(batch.len());
    for (_, incoming) in batch {
        let near = stm.near_ids(&incoming, cfg.cos_sim_thresh, cfg.near_ids_k)?;
        let case = match mode {
            _ if near.is_empty() => Tier2Case::Unseen,
            AssociationMode::NonSpatial => Tier2Case::Aggregated,
            AssociationMode::Spatial => {
                let nearest = near
                    .iter()
                    .map(|(id, _)| {
                        let pos = stm.entries[id].aggregate.world_pos;
                        (pos.distance(&incoming.world_pos), *id)
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .map(|(d, _)| d)
                    .unwrap_or(f64::INFINITY);
                if nearest < cfg.d_thresh_m {
                    Tier2Case::Aggregated
                } else {
                    Tier2Case::Moved
                }
            }
        };
        match case {
            Tier2Case::Aggregated => {
                let target_id = match mode {
                    AssociationMode::NonSpatial => near[0].0,
                    AssociationMode::Spatial => {
                        // first minimum in similarity order wins ties
                        let mut best = (f64::INFINITY, near[0].0);
                        for (id, _) in &near {
                            let d = stm.entries[id].aggregate.world_pos.distance(&incoming.world_pos);
                            if d < best.0 {
                                best = (d, *id);
                            }
                        }
                        best.1
                    }
                };
                let merged = merge_aggregates(&stm.entries[&target_id].aggregate, &incoming)?;
                stm.replace(merged, now);
            }
            Tier2Case::Moved | Tier2Case::Unseen => stm.insert(incoming, now, &mut evicted),
        }
        cases.push(case);
    }
    Ok((evicted, cases))
}
