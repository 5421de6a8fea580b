//! Q1 (was it seen), Q2 (seen together) and Q3 (where during an interval)
//! over the store, at three target-precision levels.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{D3aError, Result};
use crate::model::{Embedding, KeyframeRef, Point2, Timestamp};
use crate::store::{ObjectId, SpatialTemporalStore, StcRecord};

pub const MRR_CUTOFF: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QueryKind {
    Q1,
    Q2,
    Q3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Perfect,
    Category,
    Any,
}

impl QueryKind {
    pub const ALL: [QueryKind; 3] = [QueryKind::Q1, QueryKind::Q2, QueryKind::Q3];
}

impl Precision {
    pub const ALL: [Precision; 3] = [Precision::Perfect, Precision::Category, Precision::Any];
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<ObjectId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Attribute vector matched by cosine similarity; need not be normalized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub kind: QueryKind,
    pub precision: Precision,
    pub targets: Vec<TargetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<[Timestamp; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub together_window_ms: Option<i64>,
}

impl Query {
    pub fn validate(&self) -> Result<()> {
        let want = match self.kind {
            QueryKind::Q2 => 2,
            QueryKind::Q1 | QueryKind::Q3 => 1,
        };
        if self.targets.len() != want {
            return Err(D3aError::Invalid(format!(
                "targets: {:?} takes {want} target(s), got {}",
                self.kind,
                self.targets.len()
            )));
        }
        match (self.kind, self.time_range) {
            (QueryKind::Q3, None) => return Err(D3aError::Invalid("time_range: required for Q3".into())),
            (_, Some([t0, t1])) if t0 > t1 => {
                return Err(D3aError::Invalid(format!("time_range: t0 {t0} > t1 {t1}")))
            }
            _ => {}
        }
        if let Some(w) = self.together_window_ms {
            if w < 0 {
                return Err(D3aError::Invalid("together_window_ms: must be >= 0".into()));
            }
        }
        for (i, t) in self.targets.iter().enumerate() {
            match self.precision {
                Precision::Perfect if t.object_id.is_none() => {
                    return Err(D3aError::Invalid(format!("targets[{i}].object_id: required for perfect precision")))
                }
                Precision::Category if t.category.is_none() => {
                    return Err(D3aError::Invalid(format!("targets[{i}].category: required for category precision")))
                }
                _ => {}
            }
            if let Some(e) = &t.embedding {
                Embedding::new(e.clone())
                    .map_err(|err| D3aError::Invalid(format!("targets[{i}].embedding: {err}")))?;
            }
        }
        Ok(())
    }
}

/// One stored occurrence referenced by an answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occurrence {
    pub object_id: ObjectId,
    pub record_id: u64,
    pub keyframe: KeyframeRef,
    pub position: Point2,
    pub t_first: Timestamp,
    pub t_last: Timestamp,
}

impl Occurrence {
    fn of(r: &StcRecord) -> Self {
        Occurrence {
            object_id: r.object_id,
            record_id: r.record_id,
            keyframe: r.keyframe,
            position: r.position,
            t_first: r.t_first,
            t_last: r.t_last,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    #[serde(flatten)]
    pub occurrence: Occurrence,
    pub score: f64,
    /// Second occurrence of a Q2 pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<Occurrence>,
    /// Q2 co-occurrence interval; when the raw intervals only meet after
    /// dilation this is the gap between them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub together: Option<[Timestamp; 2]>,
}

impl Answer {
    pub fn keyframes(&self) -> impl Iterator<Item = &KeyframeRef> {
        std::iter::once(&self.occurrence.keyframe).chain(self.partner.as_ref().map(|p| &p.keyframe))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub answers: Vec<Answer>,
}

impl QueryResult {
    /// Distinct `(frame_id, bbox)` keyframes over all answers.
    pub fn distinct_keyframes(&self) -> usize {
        let mut seen = BTreeSet::new();
        for a in &self.answers {
            for k in a.keyframes() {
                seen.insert((k.frame_id, k.bbox.x_min.to_bits(), k.bbox.y_min.to_bits(), k.bbox.x_max.to_bits(), k.bbox.y_max.to_bits()));
            }
        }
        seen.len()
    }

    pub fn distinct_object_ids(&self) -> usize {
        let mut seen = BTreeSet::new();
        for a in &self.answers {
            seen.insert(a.occurrence.object_id);
            if let Some(p) = &a.partner {
                seen.insert(p.object_id);
            }
        }
        seen.len()
    }
}

/// Resolved target ids, each with the similarity factor applied to its
/// score (1 unless an attribute embedding was matched).
pub type TargetSet = BTreeMap<ObjectId, f64>;

pub fn resolve_targets(
    spec: &TargetSpec,
    precision: Precision,
    store: &SpatialTemporalStore,
    min_cos_sim: f64,
) -> Result<TargetSet> {
    let mut out = TargetSet::new();
    match precision {
        Precision::Perfect => {
            if let Some(id) = spec.object_id.filter(|id| store.object(*id).is_some()) {
                out.insert(id, 1.0);
            }
        }
        Precision::Category => {
            let category = spec.category.as_deref().unwrap_or_default();
            match &spec.embedding {
                Some(v) => {
                    let e = Embedding::new(v.clone())?;
                    for (rec, sim) in store.oic_find_similar(&e, category, min_cos_sim)? {
                        out.insert(rec.object_id, sim);
                    }
                }
                None => out.extend(store.object_ids_in_category(category).into_iter().map(|id| (id, 1.0))),
            }
        }
        Precision::Any => out.extend(store.object_ids().into_iter().map(|id| (id, 1.0))),
    }
    Ok(out)
}

fn record_score(store: &SpatialTemporalStore, r: &StcRecord, factor: f64) -> f64 {
    let weight = store.object(r.object_id).map_or(0.0, |o| o.weight);
    weight * r.keyframe.prob * factor
}

fn rank(mut answers: Vec<Answer>) -> QueryResult {
    answers.sort_by(|a, b| {
        b.score.total_cmp(&a.score).then_with(|| {
            let ka = (a.occurrence.record_id, a.partner.as_ref().map(|p| p.record_id));
            let kb = (b.occurrence.record_id, b.partner.as_ref().map(|p| p.record_id));
            ka.cmp(&kb)
        })
    });
    QueryResult { answers }
}

fn single(store: &SpatialTemporalStore, x: &TargetSet, records: Vec<&StcRecord>) -> QueryResult {
    rank(
        records
            .into_iter()
            .map(|r| Answer {
                occurrence: Occurrence::of(r),
                score: record_score(store, r, x[&r.object_id]),
                partner: None,
                together: None,
            })
            .collect(),
    )
}

fn ids(x: &TargetSet) -> BTreeSet<ObjectId> {
    x.keys().copied().collect()
}

/// Every occurrence of every target, best score first.
pub fn answer_q1(x: &TargetSet, store: &SpatialTemporalStore) -> QueryResult {
    if x.is_empty() {
        return QueryResult::default();
    }
    single(store, x, store.stc_find(Some(&ids(x)), None, None))
}

/// Occurrences of the targets whose interval meets `[t0, t1]`.
pub fn answer_q3(x: &TargetSet, time_range: (Timestamp, Timestamp), store: &SpatialTemporalStore) -> QueryResult {
    if x.is_empty() {
        return QueryResult::default();
    }
    single(store, x, store.stc_find(Some(&ids(x)), Some(time_range), None))
}

pub(crate) fn together_interval(a: &StcRecord, b: &StcRecord) -> [Timestamp; 2] {
    let lo = a.t_first.max(b.t_first);
    let hi = a.t_last.min(b.t_last);
    if lo <= hi {
        [lo, hi]
    } else {
        [hi, lo]
    }
}

/// Pairs of occurrences of distinct objects, one from each target set,
/// whose intervals meet once widened by `window_ms` on both sides. A pair
/// reachable in both orientations is reported once.
pub fn answer_q2(xa: &TargetSet, xb: &TargetSet, store: &SpatialTemporalStore, window_ms: i64) -> QueryResult {
    if xa.is_empty() || xb.is_empty() {
        return QueryResult::default();
    }
    // B-side records sorted by start; a sweep bounded by the longest B
    // interval replaces one indexed lookup per A-side record.
    let recs_b = store.stc_find(Some(&ids(xb)), None, None);
    let max_len_b = recs_b.iter().map(|r| r.t_last - r.t_first).max().unwrap_or(0);
    let mut answers = Vec::new();
    for ra in store.stc_find(Some(&ids(xa)), None, None) {
        let (lo, hi) = (ra.t_first.saturating_sub(2 * window_ms), ra.t_last.saturating_add(2 * window_ms));
        let start = recs_b.partition_point(|r| r.t_first < lo.saturating_sub(max_len_b));
        for rb in recs_b[start..].iter().take_while(|r| r.t_first <= hi) {
            if rb.t_last < lo || rb.object_id == ra.object_id {
                continue;
            }
            let mirrored = xa.contains_key(&rb.object_id) && xb.contains_key(&ra.object_id);
            if mirrored && rb.record_id < ra.record_id {
                continue;
            }
            let score = record_score(store, ra, xa[&ra.object_id]).min(record_score(store, rb, xb[&rb.object_id]));
            answers.push(Answer {
                occurrence: Occurrence::of(ra),
                score,
                partner: Some(Occurrence::of(rb)),
                together: Some(together_interval(ra, rb)),
            });
        }
    }
    rank(answers)
}

/// Resolves the targets and runs the query.
pub fn execute(query: &Query, store: &SpatialTemporalStore, min_cos_sim: f64, default_window_ms: i64) -> Result<QueryResult> {
    query.validate()?;
    let x = resolve_targets(&query.targets[0], query.precision, store, min_cos_sim)?;
    Ok(match query.kind {
        QueryKind::Q1 => answer_q1(&x, store),
        QueryKind::Q2 => {
            let xb = resolve_targets(&query.targets[1], query.precision, store, min_cos_sim)?;
            answer_q2(&x, &xb, store, query.together_window_ms.unwrap_or(default_window_ms))
        }
        QueryKind::Q3 => {
            let [t0, t1] = query.time_range.unwrap_or_default();
            answer_q3(&x, (t0, t1), store)
        }
    })
}

/// Reciprocal rank of the first correct answer within the top `cutoff`;
/// zero when none qualifies.
pub fn evaluate_rank(result: &QueryResult, cutoff: usize, is_correct: impl Fn(&Answer) -> bool) -> f64 {
    result
        .answers
        .iter()
        .take(cutoff)
        .position(is_correct)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}
