//! Simulator -> engines -> query suite, on small worlds.

use d3a::eval::{build_store, run_benchmark, run_benchmark_with_suite, Engine, SuiteQuery, SuiteSpec};
use d3a::model::{EngineConfig, Point2};
use d3a::perception::CameraModel;
use d3a::query::{Precision, QueryKind};
use d3a::sim::{gen_patrol, gen_world, read_stream, write_stream, GroundTruthObject, Placement, SimData, WorldSpec};

fn sim(spec: &WorldSpec) -> SimData {
    let cam = CameraModel::default();
    let world = gen_world(spec).unwrap();
    let stream = gen_patrol(&world, spec, &cam).unwrap();
    SimData::new(spec, &cam, world, stream)
}

fn small(seed: u64) -> WorldSpec {
    WorldSpec {
        n_static: 10,
        n_dynamic: 3,
        duration_ms: 2 * 3_600_000,
        seed,
        ..WorldSpec::default()
    }
}

#[test]
fn noiseless_world_is_recovered_exactly() {
    let spec = small(11).noiseless();
    let data = sim(&spec);
    let (store, _) = build_store(Engine::D3a, &data, &EngineConfig::default()).unwrap();
    let placements: usize = data.world.iter().map(|o| o.placements.len()).sum();
    assert_eq!(store.oic_len(), data.world.len());
    assert_eq!(store.stc_len(), placements);

    let out = run_benchmark(&data, &EngineConfig::default(), &[Engine::D3a], &SuiteSpec::default()).unwrap();
    let r = out.report.engine(Engine::D3a).unwrap();
    for kind in QueryKind::ALL {
        let c = r.cell(kind, Precision::Perfect).unwrap();
        assert_eq!((c.miss_rate, c.mrr_at_50), (0.0, 1.0), "{kind:?}");
    }
    assert_eq!(r.negative_empty, r.negative_queries);
    assert_eq!(r.duplicates_per_object.mean, 1.0);
}

#[test]
fn naive_any_returns_whole_store() {
    let data = sim(&WorldSpec {
        duration_ms: 3_600_000,
        ..small(12)
    });
    let suite = SuiteSpec {
        per_cell: 3,
        negatives: 2,
        ..SuiteSpec::default()
    };
    let out = run_benchmark(&data, &EngineConfig::default(), &[Engine::Naive], &suite).unwrap();
    let r = out.report.engine(Engine::Naive).unwrap();
    assert_eq!(r.oic_count, data.gt.len());
    assert_eq!(r.cell(QueryKind::Q1, Precision::Any).unwrap().mean_frames_returned, data.gt.len() as f64);
    assert_eq!(out.report.suite_size, 9 * 3 + 2);
}

#[test]
fn noisy_world_stays_compact() {
    let data = sim(&small(13));
    let cfg = EngineConfig::default();
    let (d3a, _) = build_store(Engine::D3a, &data, &cfg).unwrap();
    let (naive, _) = build_store(Engine::Naive, &data, &cfg).unwrap();
    let entries = |s: &d3a::store::SpatialTemporalStore| s.oic_len() + s.stc_len();
    assert!(entries(&d3a) * 10 <= entries(&naive));
}

#[test]
fn stream_files_round_trip_and_bench_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim(&WorldSpec {
        duration_ms: 3_600_000,
        ..small(14)
    });
    write_stream(dir.path(), &data).unwrap();
    let back = read_stream(dir.path()).unwrap();
    assert_eq!(back, data);

    let suite = SuiteSpec {
        per_cell: 4,
        negatives: 2,
        ..SuiteSpec::default()
    };
    let a = run_benchmark(&back, &EngineConfig::default(), &Engine::ALL, &suite).unwrap();
    let b = run_benchmark_with_suite(&back, &EngineConfig::default(), &Engine::ALL, a.suite.clone()).unwrap();
    assert_eq!(a.report, b.report);
    a.write(&dir.path().join("a")).unwrap();
    b.write(&dir.path().join("b")).unwrap();
    for f in ["report.json", "queries_table.csv", "store_table.csv", "insertions.csv", "queries.jsonl"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

/// Two look-alike cups 5 m apart, both seen from the patrol.
fn twin_cups() -> SimData {
    let spec = WorldSpec {
        n_static: 2,
        n_dynamic: 0,
        duration_ms: 3_600_000,
        seed: 5,
        ..WorldSpec::default().noiseless()
    };
    let cup = |gt_id: u64, x: f64| GroundTruthObject {
        gt_id,
        category: "cup".into(),
        true_embedding_index: 0,
        size_m: 0.3,
        placements: vec![Placement {
            position: Point2::new(x, 6.0),
            t_start: spec.start_t,
            t_end: spec.end_t(),
        }],
    };
    let world = vec![cup(0, 5.5), cup(1, 10.5)];
    let cam = CameraModel::default();
    let stream = gen_patrol(&world, &spec, &cam).unwrap();
    SimData::new(&spec, &cam, world, stream)
}

#[test]
fn nonspatial_merges_look_alikes_and_conflates_positions() {
    let data = twin_cups();
    let cfg = EngineConfig::default();
    let (d3a, _) = build_store(Engine::D3a, &data, &cfg).unwrap();
    let (flat, _) = build_store(Engine::NonSpatial, &data, &cfg).unwrap();
    assert_eq!(d3a.oic_len(), 2);
    assert_eq!(flat.oic_len(), 1);

    let t_mid = data.frames[data.frames.len() / 2].t;
    let suite: Vec<SuiteQuery> = (0..2)
        .map(|g| SuiteQuery {
            id: g as usize,
            kind: QueryKind::Q3,
            precision: Precision::Perfect,
            gt_targets: vec![g],
            time_range: Some([data.manifest.spec.start_t, t_mid]),
            absent_category: None,
            attribute: None,
        })
        .collect();
    let out = run_benchmark_with_suite(&data, &cfg, &[Engine::D3a, Engine::NonSpatial], suite).unwrap();
    let d = &out.report.engine(Engine::D3a).unwrap().q3_positions;
    let n = &out.report.engine(Engine::NonSpatial).unwrap().q3_positions;
    assert_eq!((d.checked, d.conflated, d.flagged), (2, 0, false));
    assert!(n.flagged && n.conflated >= 1, "{n:?}");
    assert!(n.mean_error_m > 2.0);
}
