//! Invariants checked after every step of randomized pipeline runs.

use std::collections::HashMap;

use approx::assert_abs_diff_eq;
use d3a::model::{BBox, ClusterAggregate, Embedding, EngineConfig, ObjectObservation, Point2, RobotPose};
use d3a::perception::CameraModel;
use d3a::pipeline::{aggregate_members, merge_aggregates, AssociationMode, Pipeline};
use d3a::store::{load, persist, SpatialTemporalStore};
use proptest::prelude::*;
use rand::seq::{IndexedMutRandom, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 8;
const CATEGORIES: [&str; 3] = ["cup", "bowl", "chair"];

struct Obj {
    category: &'static str,
    code: Vec<f64>,
    pos: Point2,
}

type KeyframeIndex = HashMap<(u64, [u64; 4]), (f64, &'static str)>;

fn bbox_key(frame_id: u64, b: &BBox) -> (u64, [u64; 4]) {
    (frame_id, [b.x_min.to_bits(), b.y_min.to_bits(), b.x_max.to_bits(), b.y_max.to_bits()])
}

fn check_store(store: &SpatialTemporalStore, seen: &KeyframeIndex) {
    store.check_integrity().unwrap();
    for o in store.objects() {
        assert!(o.embedding.is_unit());
        assert!(o.weight > 0.0);
    }
    for r in store.records() {
        let k = &r.keyframe;
        assert!(r.t_first <= k.t && k.t <= r.t_last, "keyframe outside record interval");
        let (prob, category) = seen[&bbox_key(k.frame_id, &k.bbox)];
        assert_eq!(prob, k.prob);
        assert_eq!(store.object(r.object_id).unwrap().category, category);
    }
}

/// Runs `steps` random frames through a pipeline; returns the step count.
fn run_case(seed: u64, steps: usize, mode: AssociationMode, dir: &std::path::Path) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let window_len = rng.random_range(2..12);
    let cfg = EngineConfig {
        window_len,
        window_stride: rng.random_range(1..=window_len),
        stm_capacity: rng.random_range(1..10),
        ..EngineConfig::default()
    };
    let mut objects: Vec<Obj> = (0..rng.random_range(1..10))
        .map(|_| Obj {
            category: CATEGORIES[rng.random_range(0..CATEGORIES.len())],
            code: (0..DIM).map(|_| rng.random_range(0.0..1.0)).collect(),
            pos: Point2::new(rng.random_range(0.0..16.0), rng.random_range(0.0..12.0)),
        })
        .collect();
    let mut p = Pipeline::new(cfg.clone(), mode, CameraModel::default(), None).unwrap();
    let mut seen = KeyframeIndex::new();
    let mut t = 0i64;
    for step in 0..steps {
        t += rng.random_range(0..3_000);
        if rng.random_bool(0.01) {
            let o = objects.choose_mut(&mut rng).unwrap();
            o.pos = Point2::new(rng.random_range(0.0..16.0), rng.random_range(0.0..12.0));
        }
        let n = rng.random_range(0..4);
        let obs: Vec<ObjectObservation> = (0..n)
            .map(|i| {
                let o = objects.choose(&mut rng).unwrap();
                let code: Vec<f64> = o.code.iter().map(|v| (v + rng.random_range(-0.1..0.1f64)).max(1e-3)).collect();
                let x0 = 10.0 * i as f64 + rng.random_range(0.0..5.0);
                let bbox = BBox::new(x0, 0.0, x0 + 5.0, 5.0).unwrap();
                let prob = rng.random_range(0.5..=1.0);
                seen.insert(bbox_key(step as u64, &bbox), (prob, o.category));
                ObjectObservation {
                    frame_id: step as u64,
                    t,
                    category: o.category.to_string(),
                    prob,
                    bbox,
                    pose: RobotPose::new(0.0, 0.0, 0.0, t).unwrap(),
                    embedding: Embedding::new(code).unwrap(),
                    world_pos: Point2::new(o.pos.x + rng.random_range(-0.1..0.1), o.pos.y + rng.random_range(-0.1..0.1)),
                    clamped: false,
                }
            })
            .collect();
        p.push_observations(t, obs).unwrap();

        assert!(p.stm().len() <= cfg.stm_capacity, "STM over capacity");
        for e in p.stm().entries() {
            assert!(e.aggregate.embedding.is_unit());
        }
        check_store(p.store(), &seen);
        if step % 250 == 249 {
            persist(p.store(), dir).unwrap();
            let back = load(dir).unwrap();
            assert_eq!(back.records(), p.store().records());
            assert!(back.objects().eq(p.store().objects()));
        }
    }
    let (store, _) = p.finish().unwrap();
    check_store(&store, &seen);
    persist(&store, dir).unwrap();
    assert_eq!(load(dir).unwrap().records(), store.records());
    steps
}

#[test]
fn hundred_thousand_random_steps() {
    let dir = tempfile::tempdir().unwrap();
    let mut steps = 0;
    for seed in 0..100 {
        let mode = if seed % 4 == 3 { AssociationMode::NonSpatial } else { AssociationMode::Spatial };
        steps += run_case(seed, 1_000, mode, dir.path());
    }
    assert_eq!(steps, 100_000);
}

fn observation(i: u64, code: &[f64], x: f64, y: f64, prob: f64) -> ObjectObservation {
    ObjectObservation {
        frame_id: i,
        t: i as i64 * 100,
        category: "cup".into(),
        prob,
        bbox: BBox::new(0.0, 0.0, 1.0 + i as f64, 1.0).unwrap(),
        pose: RobotPose::new(0.0, 0.0, 0.0, 0).unwrap(),
        embedding: Embedding::new(code.to_vec()).unwrap(),
        world_pos: Point2::new(x, y),
        clamped: false,
    }
}

fn members() -> impl Strategy<Value = Vec<(Vec<f64>, f64, f64, f64)>> {
    prop::collection::vec(
        (prop::collection::vec(0.01..1.0f64, DIM), 0.0..10.0f64, 0.0..10.0f64, 0.5..=1.0f64),
        2..12,
    )
}

fn assert_same(a: &ClusterAggregate, b: &ClusterAggregate) {
    assert_abs_diff_eq!(a.weight, b.weight, epsilon = 1e-9);
    assert_abs_diff_eq!(a.world_pos.x, b.world_pos.x, epsilon = 1e-9);
    assert_abs_diff_eq!(a.world_pos.y, b.world_pos.y, epsilon = 1e-9);
    assert_abs_diff_eq!(a.resultant, b.resultant, epsilon = 1e-9);
    for (x, y) in a.embedding.as_slice().iter().zip(b.embedding.as_slice()) {
        assert_abs_diff_eq!(x, y, epsilon = 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn merge_order_does_not_matter(ms in members(), order_seed in any::<u64>()) {
        let obs: Vec<ObjectObservation> = ms
            .iter()
            .enumerate()
            .map(|(i, (c, x, y, p))| observation(i as u64, c, *x, *y, *p))
            .collect();
        let refs: Vec<&ObjectObservation> = obs.iter().collect();
        let direct = aggregate_members(0, &refs).unwrap();

        let mut singles: Vec<ClusterAggregate> = obs.iter().map(|o| aggregate_members(0, &[o]).unwrap()).collect();
        singles.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
        let folded = singles[1..].iter().fold(singles[0].clone(), |acc, s| merge_aggregates(&acc, s).unwrap());
        assert_same(&direct, &folded);

        // split into two halves merged separately, then together
        let mid = singles.len() / 2;
        let left = singles[1..mid.max(1)].iter().fold(singles[0].clone(), |acc, s| merge_aggregates(&acc, s).unwrap());
        let right = singles[mid.max(1) + 1..]
            .iter()
            .fold(singles[mid.max(1)].clone(), |acc, s| merge_aggregates(&acc, s).unwrap());
        assert_same(&direct, &merge_aggregates(&right, &left).unwrap());

        let best = obs.iter().map(|o| o.prob).fold(f64::MIN, f64::max);
        prop_assert_eq!(direct.keyframe.prob, best);
        prop_assert_eq!(folded.keyframe.prob, best);
        prop_assert!(direct.embedding.is_unit());
    }
}
