//! Tier 3: merge evicted short-term entries into the persistent store.
//!
//! Candidate identities are the same-category OIc records whose embedding
//! similarity clears `cos_sim_thresh`, most similar first. For a candidate:
//!
//! * if its nearest STc occurrence lies within the (map-normalized)
//!   distance threshold, the entry is folded into that occurrence and into
//!   the identity;
//! * otherwise, if none of its occurrences overlaps the entry in time, the
//!   object has moved and a new occurrence is recorded under the same id;
//! * otherwise the candidate was seen elsewhere at the same time, so it is
//!   a different object and the next candidate is tried.
//!
//! With no acceptable candidate a new identity is created.

use crate::error::{D3aError, Result};
use crate::model::{merge_directions, ClusterAggregate, EngineConfig, Point2, Timestamp};
use crate::store::{ObjectId, SpatialTemporalStore};

use super::aggregate::select_keyframe;
use super::stm::ShortTermMemory;
use super::AssociationMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeOutcome {
    NewObject,
    Moved,
    Aggregated,
}

pub fn tier3_merge(
    lrv: &ClusterAggregate,
    store: &mut SpatialTemporalStore,
    cfg: &EngineConfig,
    mode: AssociationMode,
    now: Timestamp,
) -> Result<(ObjectId, MergeOutcome)> {
    let candidates: Vec<ObjectId> = store
        .oic_find_similar(&lrv.embedding, &lrv.category, cfg.cos_sim_thresh)?
        .into_iter()
        .map(|(rec, _)| rec.object_id)
        .collect();

    for object_id in candidates {
        let mut nearest: Option<(f64, u64)> = None;
        let mut concurrent = false;
        for rec in store.records_of(object_id) {
            let d = rec.position.distance(&lrv.world_pos) / cfg.map_diag_m;
            if nearest.is_none_or(|(best, _)| d < best) {
                nearest = Some((d, rec.record_id));
            }
            concurrent |= rec.t_first <= lrv.t_last && lrv.t_first <= rec.t_last;
        }
        let Some((dist, record_id)) = nearest else {
            return Err(D3aError::Integrity(format!("object {object_id} has no STc record")));
        };
        match mode {
            AssociationMode::NonSpatial => {
                aggregate_into(store, object_id, record_id, lrv)?;
                return Ok((object_id, MergeOutcome::Aggregated));
            }
            AssociationMode::Spatial if dist < cfg.normalized_d_thresh() => {
                aggregate_into(store, object_id, record_id, lrv)?;
                return Ok((object_id, MergeOutcome::Aggregated));
            }
            AssociationMode::Spatial if !concurrent => {
                store.insert_record(object_id, lrv.world_pos, lrv.t_first, lrv.t_last, lrv.keyframe, lrv.weight, now)?;
                return Ok((object_id, MergeOutcome::Moved));
            }
            AssociationMode::Spatial => continue,
        }
    }

    let object_id = store.insert_object(&lrv.category, lrv.embedding.clone(), lrv.resultant, lrv.weight);
    store.insert_record(object_id, lrv.world_pos, lrv.t_first, lrv.t_last, lrv.keyframe, lrv.weight, now)?;
    Ok((object_id, MergeOutcome::NewObject))
}

/// Merges every remaining short-term entry, least recently viewed first,
/// leaving the memory empty. Returns the number of merges.
pub fn flush(
    stm: &mut ShortTermMemory,
    store: &mut SpatialTemporalStore,
    cfg: &EngineConfig,
    mode: AssociationMode,
    now: Timestamp,
) -> Result<usize> {
    let drained = stm.drain_lrv_order();
    for entry in &drained {
        tier3_merge(entry, store, cfg, mode, now)?;
    }
    Ok(drained.len())
}

fn aggregate_into(
    store: &mut SpatialTemporalStore,
    object_id: ObjectId,
    record_id: u64,
    lrv: &ClusterAggregate,
) -> Result<()> {
    let oic = store
        .object_mut(object_id)
        .ok_or_else(|| D3aError::Integrity(format!("missing object {object_id}")))?;
    let (embedding, resultant) =
        merge_directions(&oic.embedding, oic.resultant, oic.weight, &lrv.embedding, lrv.resultant, lrv.weight)?;
    oic.embedding = embedding;
    oic.resultant = resultant;
    oic.weight += lrv.weight;

    let rec = store
        .record_mut(record_id)
        .ok_or_else(|| D3aError::Integrity(format!("missing STc record {record_id}")))?;
    rec.position = Point2::weighted_mean(&rec.position, rec.obs_weight, &lrv.world_pos, lrv.weight);
    rec.obs_weight += lrv.weight;
    rec.t_first = rec.t_first.min(lrv.t_first);
    rec.t_last = rec.t_last.max(lrv.t_last);
    rec.keyframe = select_keyframe(&rec.keyframe, &lrv.keyframe);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, Embedding, KeyframeRef};
    use crate::store::StoreMeta;

    fn lrv(id: u64, emb: Vec<f64>, x: f64, w: f64, t0: Timestamp, t1: Timestamp, prob: f64) -> ClusterAggregate {
        ClusterAggregate {
            instance_id: id,
            category: "cup".into(),
            embedding: Embedding::new(emb).unwrap(),
            resultant: 1.0,
            world_pos: Point2::new(x, 1.0),
            weight: w,
            keyframe: KeyframeRef {
                frame_id: id,
                bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
                prob,
                t: t0,
            },
            t_first: t0,
            t_last: t1,
            member_count: w as u64,
        }
    }

    fn store() -> SpatialTemporalStore {
        SpatialTemporalStore::new(StoreMeta::default())
    }

    const SPATIAL: AssociationMode = AssociationMode::Spatial;

    #[test]
    fn first_eviction_creates_object_and_record() {
        let mut s = store();
        let (_, outcome) = tier3_merge(&lrv(1, vec![1.0, 0.0], 1.0, 3.0, 0, 10, 0.8), &mut s, &EngineConfig::default(), SPATIAL, 10).unwrap();
        assert_eq!(outcome, MergeOutcome::NewObject);
        assert_eq!((s.oic_len(), s.stc_len()), (1, 1));
        s.check_integrity().unwrap();
    }

    #[test]
    fn static_object_evicted_twice_aggregates() {
        let mut s = store();
        let cfg = EngineConfig::default();
        let (a, _) = tier3_merge(&lrv(1, vec![1.0, 0.0], 1.0, 3.0, 0, 10, 0.8), &mut s, &cfg, SPATIAL, 10).unwrap();
        let (b, outcome) = tier3_merge(&lrv(2, vec![1.0, 0.0], 1.0, 2.0, 20, 30, 0.95), &mut s, &cfg, SPATIAL, 30).unwrap();
        assert_eq!(a, b);
        assert_eq!(outcome, MergeOutcome::Aggregated);
        assert_eq!((s.oic_len(), s.stc_len()), (1, 1));
        assert_eq!(s.object(a).unwrap().weight, 5.0);
        let rec = &s.records()[0];
        assert_eq!((rec.t_first, rec.t_last), (0, 30));
        assert_eq!(rec.keyframe.frame_id, 2);
        assert_eq!(rec.obs_weight, 5.0);
    }

    #[test]
    fn object_seen_later_elsewhere_moved() {
        let mut s = store();
        let cfg = EngineConfig::default();
        let (a, _) = tier3_merge(&lrv(1, vec![1.0, 0.0], 1.0, 3.0, 0, 10, 0.8), &mut s, &cfg, SPATIAL, 10).unwrap();
        let (b, outcome) = tier3_merge(&lrv(2, vec![1.0, 0.0], 3.0, 3.0, 20, 30, 0.8), &mut s, &cfg, SPATIAL, 30).unwrap();
        assert_eq!(a, b);
        assert_eq!(outcome, MergeOutcome::Moved);
        assert_eq!((s.oic_len(), s.stc_len()), (1, 2));
        s.check_integrity().unwrap();
    }

    #[test]
    fn concurrent_lookalike_is_a_distinct_object() {
        let mut s = store();
        let cfg = EngineConfig::default();
        let (a, _) = tier3_merge(&lrv(1, vec![1.0, 0.0], 1.0, 3.0, 0, 100, 0.8), &mut s, &cfg, SPATIAL, 100).unwrap();
        let (b, outcome) = tier3_merge(&lrv(2, vec![1.0, 0.0], 6.0, 3.0, 50, 150, 0.8), &mut s, &cfg, SPATIAL, 150).unwrap();
        assert_ne!(a, b);
        assert_eq!(outcome, MergeOutcome::NewObject);
        assert_eq!((s.oic_len(), s.stc_len()), (2, 2));
    }

    #[test]
    fn dissimilar_embedding_is_a_new_object() {
        let mut s = store();
        let cfg = EngineConfig::default();
        tier3_merge(&lrv(1, vec![1.0, 0.0], 1.0, 3.0, 0, 10, 0.8), &mut s, &cfg, SPATIAL, 10).unwrap();
        let (_, outcome) = tier3_merge(&lrv(2, vec![0.0, 1.0], 1.0, 3.0, 20, 30, 0.8), &mut s, &cfg, SPATIAL, 30).unwrap();
        assert_eq!(outcome, MergeOutcome::NewObject);
        assert_eq!(s.oic_len(), 2);
    }

    #[test]
    fn nonspatial_merges_across_locations() {
        let mut s = store();
        let cfg = EngineConfig::default();
        let m = AssociationMode::NonSpatial;
        tier3_merge(&lrv(1, vec![1.0, 0.0], 1.0, 1.0, 0, 100, 0.8), &mut s, &cfg, m, 100).unwrap();
        tier3_merge(&lrv(2, vec![1.0, 0.0], 6.0, 1.0, 50, 150, 0.8), &mut s, &cfg, m, 150).unwrap();
        assert_eq!((s.oic_len(), s.stc_len()), (1, 1));
        assert_eq!(s.records()[0].position, Point2::new(3.5, 1.0));
    }

    #[test]
    fn flush_empty_memory() {
        let mut stm = ShortTermMemory::new(4);
        assert_eq!(flush(&mut stm, &mut store(), &EngineConfig::default(), SPATIAL, 0).unwrap(), 0);
    }
}
