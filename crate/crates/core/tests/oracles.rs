//! Indexed and incremental code paths against brute-force references.

use std::collections::BTreeSet;

use d3a::dbscan::{dbscan, Label};
use d3a::model::{BBox, Embedding, KeyframeRef, Point2, Rect};
use d3a::query::{answer_q2, TargetSet};
use d3a::store::{SpatialTemporalStore, StcRecord, StoreMeta};
use proptest::prelude::*;

/// Textbook DBSCAN from the closure of the core graph. Clusters are
/// numbered by their smallest core point; a border point takes the
/// lowest-numbered cluster with a core point in reach.
fn brute_dbscan(d: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Label> {
    let n = d.len();
    let near = |i: usize, j: usize| i == j || d[i][j] <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(p) = stack.pop() {
            for q in 0..n {
                if core[q] && comp[q] == usize::MAX && near(p, q) {
                    comp[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    (0..n)
        .map(|i| {
            if core[i] {
                return Label::Cluster(comp[i]);
            }
            (0..n)
                .filter(|&j| core[j] && near(i, j))
                .map(|j| comp[j])
                .min()
                .map_or(Label::Noise, Label::Cluster)
        })
        .collect()
}

fn points() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..10.0f64, 0.0..10.0f64), 0..=50)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dbscan_matches_brute_force(pts in points(), eps in 0.1..3.0f64, min_pts in 1usize..5) {
        let d: Vec<Vec<f64>> = pts
            .iter()
            .map(|a| pts.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect())
            .collect();
        let got = dbscan(pts.len(), |i, j| d[i][j], eps, min_pts);
        prop_assert_eq!(got, brute_dbscan(&d, eps, min_pts));
    }
}

#[derive(Debug, Clone)]
struct Rec {
    object: usize,
    x: f64,
    y: f64,
    t0: i64,
    len: i64,
}

fn records() -> impl Strategy<Value = Vec<Rec>> {
    prop::collection::vec(
        (0usize..12, 0.0..20.0f64, 0.0..15.0f64, 0i64..10_000, 0i64..2_000).prop_map(|(object, x, y, t0, len)| Rec {
            object,
            x,
            y,
            t0,
            len,
        }),
        1..150,
    )
}

fn build(recs: &[Rec]) -> SpatialTemporalStore {
    let mut store = SpatialTemporalStore::new(StoreMeta::default());
    let ids: Vec<u64> = (0..12)
        .map(|i| store.insert_object(if i % 2 == 0 { "cup" } else { "bowl" }, Embedding::one_hot(12, i).unwrap(), 1.0, 1.0 + i as f64))
        .collect();
    for (k, r) in recs.iter().enumerate() {
        let kf = KeyframeRef {
            frame_id: k as u64,
            bbox: BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            prob: 0.5 + (k % 5) as f64 * 0.1,
            t: r.t0,
        };
        store
            .insert_record(ids[r.object], Point2::new(r.x, r.y), r.t0, r.t0 + r.len, kf, 1.0, r.t0)
            .unwrap();
    }
    store
}

fn scan<'a>(
    store: &'a SpatialTemporalStore,
    ids: Option<&BTreeSet<u64>>,
    range: Option<(i64, i64)>,
    region: Option<&Rect>,
) -> Vec<&'a StcRecord> {
    let mut out: Vec<&StcRecord> = store
        .records()
        .iter()
        .filter(|r| ids.is_none_or(|s| s.contains(&r.object_id)))
        .filter(|r| range.is_none_or(|(a, b)| r.t_first <= b && r.t_last >= a))
        .filter(|r| region.is_none_or(|g| g.contains(&r.position)))
        .collect();
    out.sort_by_key(|r| (r.t_first, r.object_id, r.record_id));
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn stc_find_matches_scan(
        recs in records(),
        ids in prop::option::of(prop::collection::btree_set(1u64..14, 0..6)),
        range in prop::option::of((0i64..12_000, 0i64..4_000)),
        region in prop::option::of((0.0..20.0f64, 0.0..15.0f64, 0.0..10.0f64, 0.0..8.0f64)),
    ) {
        let store = build(&recs);
        let range = range.map(|(a, l)| (a, a + l));
        let region = region.map(|(x, y, w, h)| Rect::new(x, y, x + w, y + h));
        let got: Vec<u64> = store.stc_find(ids.as_ref(), range, region.as_ref()).iter().map(|r| r.record_id).collect();
        let want: Vec<u64> = scan(&store, ids.as_ref(), range, region.as_ref()).iter().map(|r| r.record_id).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn q2_pairs_match_quadratic_scan(
        recs in records(),
        a in prop::collection::btree_set(1u64..13, 1..5),
        b in prop::collection::btree_set(1u64..13, 1..5),
        w in 0i64..1_000,
    ) {
        let store = build(&recs);
        let xa: TargetSet = a.iter().map(|i| (*i, 1.0)).collect();
        let xb: TargetSet = b.iter().map(|i| (*i, 1.0)).collect();
        let mut got: Vec<(u64, u64)> = answer_q2(&xa, &xb, &store, w)
            .answers
            .iter()
            .map(|x| (x.occurrence.record_id, x.partner.as_ref().unwrap().record_id))
            .collect();
        got.sort();
        let mut want = BTreeSet::new();
        for ra in store.records() {
            for rb in store.records() {
                let meets = ra.t_first - w <= rb.t_last + w && rb.t_first - w <= ra.t_last + w;
                if !meets || ra.object_id == rb.object_id {
                    continue;
                }
                if a.contains(&ra.object_id) && b.contains(&rb.object_id) {
                    // a pair reachable both ways is reported once, lower record first
                    let mirrored = a.contains(&rb.object_id) && b.contains(&ra.object_id);
                    want.insert(if mirrored { (ra.record_id.min(rb.record_id), ra.record_id.max(rb.record_id)) } else { (ra.record_id, rb.record_id) });
                }
            }
        }
        prop_assert_eq!(got, want.into_iter().collect::<Vec<_>>());
    }
}
