//! The seeded query suite. Queries name ground-truth objects; each engine
//! turns them into formal queries against its own store.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GroundTruthIndex;
use crate::model::Timestamp;
use crate::query::{Answer, Precision, Query, QueryKind, TargetSpec};
use crate::rng::{substream, Stream};
use crate::store::ObjectId;

/// Labels the simulator never generates, used for negative queries.
const ABSENT_CATEGORIES: [&str; 5] = ["giraffe", "toaster", "kite", "skis", "surfboard"];

/// Half-width of a Q3 interval around a sighting.
const Q3_HALF_SPAN_MS: i64 = 10 * 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub per_cell: usize,
    pub negatives: usize,
    pub seed: u64,
    pub together_window_ms: i64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            per_cell: 15,
            negatives: 15,
            seed: 0,
            together_window_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteQuery {
    pub id: usize,
    pub kind: QueryKind,
    pub precision: Precision,
    /// Ground-truth targets; empty for negative queries.
    pub gt_targets: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<[Timestamp; 2]>,
    /// Category asked about by a negative query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absent_category: Option<String>,
    /// Attribute vector added to category targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<Vec<f64>>,
}

impl SuiteQuery {
    pub fn is_negative(&self) -> bool {
        self.gt_targets.is_empty()
    }

    /// Whether an answer's keyframe is a detection of the queried object;
    /// for Q2 both keyframes, in either order.
    pub fn is_correct(&self, gt: &GroundTruthIndex, a: &Answer) -> bool {
        let shows = |o: &crate::query::Occurrence| gt.gt_of(o.keyframe.frame_id, &o.keyframe.bbox);
        let first = shows(&a.occurrence);
        match (self.kind, self.gt_targets.as_slice(), &a.partner) {
            (QueryKind::Q2, [ga, gb], Some(p)) => {
                let second = shows(p);
                (first == Some(*ga) && second == Some(*gb)) || (first == Some(*gb) && second == Some(*ga))
            }
            (QueryKind::Q1 | QueryKind::Q3, [g], _) => first == Some(*g),
            _ => false,
        }
    }
}

/// Pairs of gt objects sighted within `window_ms` of each other.
fn co_observed_pairs(gt: &GroundTruthIndex, window_ms: i64) -> Vec<(u64, u64)> {
    let ids: Vec<u64> = gt.observed_objects().collect();
    let mut out = Vec::new();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            let (sa, sb) = (gt.sightings(a), gt.sightings(b));
            let (mut x, mut y) = (0, 0);
            let mut together = false;
            while x < sa.len() && y < sb.len() {
                if (sa[x] - sb[y]).abs() <= window_ms {
                    together = true;
                    break;
                }
                if sa[x] < sb[y] {
                    x += 1;
                } else {
                    y += 1;
                }
            }
            if together {
                out.push((a, b));
            }
        }
    }
    out
}

/// `n` draws from `pool`: a shuffled pass, repeated if the pool is short.
fn sample<T: Clone, R: Rng>(pool: &[T], n: usize, rng: &mut R) -> Vec<T> {
    if pool.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut pass = pool.to_vec();
        pass.shuffle(rng);
        out.extend(pass.into_iter().take(n - out.len()));
    }
    out
}

/// `per_cell` queries for each kind x precision, then `negatives` Q1
/// queries for absent categories.
pub fn gen_query_suite(gt: &GroundTruthIndex, spec: &SuiteSpec) -> Vec<SuiteQuery> {
    let observed: Vec<u64> = gt.observed_objects().collect();
    let pairs = co_observed_pairs(gt, spec.together_window_ms);
    let mut out = Vec::new();
    for (cell, (kind, precision)) in QueryKind::ALL
        .iter()
        .flat_map(|k| Precision::ALL.iter().map(move |p| (*k, *p)))
        .enumerate()
    {
        let mut rng = substream(spec.seed, Stream::Queries, cell as u64);
        let targets: Vec<Vec<u64>> = match kind {
            QueryKind::Q2 => sample(&pairs, spec.per_cell, &mut rng).into_iter().map(|(a, b)| vec![a, b]).collect(),
            _ => sample(&observed, spec.per_cell, &mut rng).into_iter().map(|g| vec![g]).collect(),
        };
        for gt_targets in targets {
            let time_range = (kind == QueryKind::Q3).then(|| {
                let t = *gt.sightings(gt_targets[0]).choose(&mut rng).expect("observed object has sightings");
                [t - Q3_HALF_SPAN_MS, t + Q3_HALF_SPAN_MS]
            });
            out.push(SuiteQuery {
                id: out.len(),
                kind,
                precision,
                gt_targets,
                time_range,
                absent_category: None,
                attribute: None,
            });
        }
    }
    let mut rng = substream(spec.seed, Stream::Queries, 1_000);
    for _ in 0..spec.negatives {
        out.push(SuiteQuery {
            id: out.len(),
            kind: QueryKind::Q1,
            precision: Precision::Category,
            gt_targets: Vec::new(),
            time_range: None,
            absent_category: ABSENT_CATEGORIES.choose(&mut rng).map(|s| s.to_string()),
            attribute: None,
        });
    }
    out
}

/// Ids no store ever hands out; a Perfect query for an unmapped object
/// resolves to nothing.
const UNMAPPED_ID: ObjectId = 0;

/// The formal query an engine runs for a suite entry.
pub fn materialize(q: &SuiteQuery, gt: &GroundTruthIndex, mapping: &BTreeMap<u64, ObjectId>, window_ms: i64) -> Query {
    let targets = if q.is_negative() {
        vec![TargetSpec {
            category: q.absent_category.clone(),
            ..TargetSpec::default()
        }]
    } else {
        q.gt_targets
            .iter()
            .map(|g| match q.precision {
                Precision::Perfect => TargetSpec {
                    object_id: Some(mapping.get(g).copied().unwrap_or(UNMAPPED_ID)),
                    ..TargetSpec::default()
                },
                Precision::Category => TargetSpec {
                    category: gt.object(*g).map(|o| o.category.clone()),
                    embedding: q.attribute.clone(),
                    ..TargetSpec::default()
                },
                Precision::Any => TargetSpec::default(),
            })
            .collect()
    };
    Query {
        kind: q.kind,
        precision: q.precision,
        targets,
        time_range: q.time_range,
        together_window_ms: (q.kind == QueryKind::Q2).then_some(window_ms),
    }
}
