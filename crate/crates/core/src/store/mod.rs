//! The persistent representation: an object-identity collection (OIc) and a
//! spatial-temporal occurrence collection (STc) keyed by `ObjectId`.

mod index;
mod persist;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{D3aError, Result};
use crate::model::{Embedding, EngineConfig, KeyframeRef, Point2, Rect, Timestamp};
use index::{GridIndex, TimeIndex};

pub(crate) mod persist_support {
    pub(crate) use super::persist::read_jsonl;
}

pub use persist::{load, persist, StoreManifest, MANIFEST_FILE, OIC_FILE, SCHEMA_VERSION, STC_FILE};

pub type ObjectId = u64;

pub const HOUR_MS: i64 = 3_600_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OicRecord {
    pub object_id: ObjectId,
    pub category: String,
    pub embedding: Embedding,
    /// Mean resultant length of everything aggregated into `embedding`.
    pub resultant: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StcRecord {
    pub record_id: u64,
    pub object_id: ObjectId,
    pub position: Point2,
    pub t_first: Timestamp,
    pub t_last: Timestamp,
    pub keyframe: KeyframeRef,
    pub obs_weight: f64,
    /// Stream time at which the record was first written.
    pub inserted_t: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreStats {
    pub oic_count: usize,
    pub stc_count: usize,
    pub insertions_per_hour: Vec<u64>,
    pub bytes_on_disk: u64,
}

/// Provenance carried into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub engine: String,
    pub config: EngineConfig,
    /// Stream start; insertion-rate bins are measured from here.
    pub origin_t: Option<Timestamp>,
}

impl Default for StoreMeta {
    fn default() -> Self {
        StoreMeta {
            engine: "d3a".into(),
            config: EngineConfig::default(),
            origin_t: None,
        }
    }
}

#[derive(Debug, Default)]
struct Indexes {
    time: TimeIndex,
    grid: Option<GridIndex>,
}

#[derive(Debug, Default)]
pub struct SpatialTemporalStore {
    meta: StoreMeta,
    oic: BTreeMap<ObjectId, OicRecord>,
    stc: Vec<StcRecord>,
    by_object: BTreeMap<ObjectId, Vec<usize>>,
    by_category: BTreeMap<String, BTreeSet<ObjectId>>,
    next_object_id: ObjectId,
    indexes: OnceLock<Indexes>,
}

impl Clone for SpatialTemporalStore {
    fn clone(&self) -> Self {
        SpatialTemporalStore {
            meta: self.meta.clone(),
            oic: self.oic.clone(),
            stc: self.stc.clone(),
            by_object: self.by_object.clone(),
            by_category: self.by_category.clone(),
            next_object_id: self.next_object_id,
            indexes: OnceLock::new(),
        }
    }
}

impl SpatialTemporalStore {
    pub fn new(meta: StoreMeta) -> Self {
        SpatialTemporalStore {
            meta,
            next_object_id: 1,
            ..Default::default()
        }
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.meta
    }

    pub fn set_origin(&mut self, t: Timestamp) {
        if self.meta.origin_t.is_none() {
            self.meta.origin_t = Some(t);
        }
    }

    pub fn oic_len(&self) -> usize {
        self.oic.len()
    }

    pub fn stc_len(&self) -> usize {
        self.stc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oic.is_empty() && self.stc.is_empty()
    }

    pub fn next_object_id(&self) -> ObjectId {
        self.next_object_id
    }

    pub fn object(&self, id: ObjectId) -> Option<&OicRecord> {
        self.oic.get(&id)
    }

    pub fn objects(&self) -> impl Iterator<Item = &OicRecord> {
        self.oic.values()
    }

    pub fn records(&self) -> &[StcRecord] {
        &self.stc
    }

    pub fn record(&self, record_id: u64) -> Option<&StcRecord> {
        self.stc.get(record_id as usize)
    }

    pub fn records_of(&self, id: ObjectId) -> impl Iterator<Item = &StcRecord> {
        self.by_object
            .get(&id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.stc[i])
    }

    pub fn object_ids(&self) -> BTreeSet<ObjectId> {
        self.oic.keys().copied().collect()
    }

    pub fn object_ids_in_category(&self, category: &str) -> BTreeSet<ObjectId> {
        self.by_category.get(category).cloned().unwrap_or_default()
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.by_category.keys().map(String::as_str)
    }

    fn invalidate(&mut self) {
        self.indexes = OnceLock::new();
    }

    pub fn insert_object(
        &mut self,
        category: &str,
        embedding: Embedding,
        resultant: f64,
        weight: f64,
    ) -> ObjectId {
        let id = self.next_object_id;
        self.next_object_id += 1;
        self.oic.insert(
            id,
            OicRecord {
                object_id: id,
                category: category.to_string(),
                embedding,
                resultant,
                weight,
            },
        );
        self.by_category
            .entry(category.to_string())
            .or_default()
            .insert(id);
        id
    }

    #[allow(clippy::too_many_arguments)]
    pub fn insert_record(
        &mut self,
        object_id: ObjectId,
        position: Point2,
        t_first: Timestamp,
        t_last: Timestamp,
        keyframe: KeyframeRef,
        obs_weight: f64,
        inserted_t: Timestamp,
    ) -> Result<u64> {
        if !self.oic.contains_key(&object_id) {
            return Err(D3aError::Integrity(format!(
                "STc insert references unknown object {object_id}"
            )));
        }
        let idx = self.stc.len();
        self.stc.push(StcRecord {
            record_id: idx as u64,
            object_id,
            position,
            t_first,
            t_last,
            keyframe,
            obs_weight,
            inserted_t,
        });
        self.by_object.entry(object_id).or_default().push(idx);
        self.invalidate();
        Ok(idx as u64)
    }

    pub(crate) fn object_mut(&mut self, id: ObjectId) -> Option<&mut OicRecord> {
        self.oic.get_mut(&id)
    }

    pub(crate) fn record_mut(&mut self, record_id: u64) -> Option<&mut StcRecord> {
        self.invalidate();
        self.stc.get_mut(record_id as usize)
    }

    /// OIc records of `category` with cosine similarity at least
    /// `min_cos_sim`, most similar first, ties by ascending id.
    pub fn oic_find_similar(
        &self,
        embedding: &Embedding,
        category: &str,
        min_cos_sim: f64,
    ) -> Result<Vec<(&OicRecord, f64)>> {
        let mut hits = Vec::new();
        for id in self.by_category.get(category).into_iter().flatten() {
            let rec = &self.oic[id];
            let sim = rec.embedding.cosine_similarity(embedding)?;
            if sim >= min_cos_sim {
                hits.push((rec, sim));
            }
        }
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.object_id.cmp(&b.0.object_id)));
        Ok(hits)
    }

    fn indexes(&self) -> &Indexes {
        self.indexes.get_or_init(|| {
            let time = TimeIndex::build(self.stc.iter().map(|r| (r.t_first, r.t_last, r.record_id as usize)));
            let cell = self.meta.config.d_thresh_m;
            let grid = (cell > 0.0)
                .then(|| GridIndex::build(cell, self.stc.iter().map(|r| (r.position, r.record_id as usize))));
            Indexes { time, grid }
        })
    }

    /// Records matching every supplied predicate, ordered by `t_first`, then
    /// `object_id`, then `record_id`. `None` predicates match everything.
    pub fn stc_find(
        &self,
        object_ids: Option<&BTreeSet<ObjectId>>,
        time_range: Option<(Timestamp, Timestamp)>,
        region: Option<&Rect>,
    ) -> Vec<&StcRecord> {
        let mut candidates: Vec<usize> = Vec::new();
        let by_id_count: Option<usize> = object_ids.map(|ids| {
            ids.iter()
                .map(|id| self.by_object.get(id).map_or(0, Vec::len))
                .sum()
        });
        match (by_id_count, time_range, region) {
            (Some(n), _, _) if n <= self.stc.len() / 8 || (time_range.is_none() && region.is_none()) => {
                for id in object_ids.into_iter().flatten() {
                    candidates.extend(self.by_object.get(id).into_iter().flatten());
                }
            }
            (_, Some((t0, t1)), _) => self.indexes().time.overlapping(t0, t1, &mut candidates),
            (_, None, Some(rect)) => match &self.indexes().grid {
                Some(grid) => grid.candidates(rect, &mut candidates),
                None => candidates.extend(0..self.stc.len()),
            },
            _ => candidates.extend(0..self.stc.len()),
        }
        let mut out: Vec<&StcRecord> = candidates
            .into_iter()
            .map(|i| &self.stc[i])
            .filter(|r| matches_predicates(r, object_ids, time_range, region))
            .collect();
        out.sort_by(|a, b| {
            (a.t_first, a.object_id, a.record_id).cmp(&(b.t_first, b.object_id, b.record_id))
        });
        out
    }

    /// Checks that every STc record resolves in OIc and every object has at
    /// least one record.
    pub fn check_integrity(&self) -> Result<()> {
        for r in &self.stc {
            if !self.oic.contains_key(&r.object_id) {
                return Err(D3aError::Integrity(format!(
                    "STc record {} references missing object {}",
                    r.record_id, r.object_id
                )));
            }
            if r.t_first > r.t_last {
                return Err(D3aError::Integrity(format!(
                    "STc record {} has t_first > t_last",
                    r.record_id
                )));
            }
        }
        for id in self.oic.keys() {
            if self.by_object.get(id).is_none_or(Vec::is_empty) {
                return Err(D3aError::Integrity(format!("object {id} has no STc record")));
            }
        }
        Ok(())
    }

    /// STc insertions per hour since `origin_t`; the series runs through
    /// `until` when given.
    pub fn insertions_per_hour(&self, until: Option<Timestamp>) -> Vec<u64> {
        let Some(origin) = self.meta.origin_t else {
            return Vec::new();
        };
        let last = self
            .stc
            .iter()
            .map(|r| r.inserted_t)
            .chain(until)
            .max()
            .unwrap_or(origin);
        let hours = ((last - origin).max(0) / HOUR_MS + 1) as usize;
        let mut series = vec![0u64; hours];
        for r in &self.stc {
            let h = ((r.inserted_t - origin).max(0) / HOUR_MS) as usize;
            series[h.min(hours - 1)] += 1;
        }
        series
    }

    pub fn stats(&self) -> Result<StoreStats> {
        Ok(StoreStats {
            oic_count: self.oic.len(),
            stc_count: self.stc.len(),
            insertions_per_hour: self.insertions_per_hour(None),
            bytes_on_disk: persist::serialized_size(self)?,
        })
    }

    pub(crate) fn from_parts(meta: StoreMeta, next_object_id: ObjectId, oic: Vec<OicRecord>, stc: Vec<StcRecord>) -> Result<Self> {
        let mut store = SpatialTemporalStore::new(meta);
        store.next_object_id = next_object_id;
        for rec in oic {
            if rec.object_id >= next_object_id {
                return Err(D3aError::Integrity(format!(
                    "object id {} not below counter {next_object_id}",
                    rec.object_id
                )));
            }
            store
                .by_category
                .entry(rec.category.clone())
                .or_default()
                .insert(rec.object_id);
            if store.oic.insert(rec.object_id, rec).is_some() {
                return Err(D3aError::Integrity("duplicate object id".into()));
            }
        }
        for (i, rec) in stc.into_iter().enumerate() {
            if rec.record_id != i as u64 {
                return Err(D3aError::Integrity(format!(
                    "STc record ids not dense: expected {i}, found {}",
                    rec.record_id
                )));
            }
            store.by_object.entry(rec.object_id).or_default().push(i);
            store.stc.push(rec);
        }
        store.check_integrity()?;
        Ok(store)
    }
}

pub(crate) fn matches_predicates(
    r: &StcRecord,
    object_ids: Option<&BTreeSet<ObjectId>>,
    time_range: Option<(Timestamp, Timestamp)>,
    region: Option<&Rect>,
) -> bool {
    object_ids.is_none_or(|ids| ids.contains(&r.object_id))
        && time_range.is_none_or(|(t0, t1)| r.t_first <= t1 && r.t_last >= t0)
        && region.is_none_or(|rect| rect.contains(&r.position))
}
