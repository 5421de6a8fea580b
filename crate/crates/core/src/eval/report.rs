//! Benchmark execution and the report files.
//!
//! `report.json` and the CSV tables hold only quantities that are fixed by
//! the seed; wall-clock figures go to `timing.json` and `timing.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::suite::{gen_query_suite, materialize, SuiteQuery, SuiteSpec};
use super::{build_store, Engine, GroundTruthIndex};
use crate::error::{D3aError, Result};
use crate::model::EngineConfig;
use crate::query::{evaluate_rank, execute, Precision, QueryKind, QueryResult, MRR_CUTOFF};
use crate::sim::SimData;
use crate::store::{persist, SpatialTemporalStore};

const TIMING_REPS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Duplicates {
    pub mean: f64,
    pub sd: f64,
    pub max: usize,
}

/// Position error of the first correct Q3 answer per query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Q3Positions {
    pub checked: usize,
    pub mean_error_m: f64,
    /// Answers placed more than twice `d_thresh_m` from the true position.
    pub conflated: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub kind: QueryKind,
    pub precision: Precision,
    pub queries: usize,
    pub miss_rate: f64,
    pub mrr_at_50: f64,
    pub mean_frames_returned: f64,
    pub mean_object_ids: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineReport {
    pub engine: Engine,
    pub detections: usize,
    pub oic_count: usize,
    pub stc_count: usize,
    pub store_entries: usize,
    pub db_size_bytes: u64,
    pub unique_object_ids: usize,
    pub duplicates_per_object: Duplicates,
    /// Observed gt objects no stored keyframe shows.
    pub unmapped_gt_objects: usize,
    /// Share of positive queries with the target in the top 50, in percent.
    pub mean_accuracy_pct: f64,
    pub negative_queries: usize,
    pub negative_empty: usize,
    pub insertions_per_hour: Vec<u64>,
    pub cumulative_insertions: Vec<u64>,
    pub q3_positions: Q3Positions,
    pub cells: Vec<CellReport>,
}

impl EngineReport {
    pub fn cell(&self, kind: QueryKind, precision: Precision) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.kind == kind && c.precision == precision)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub suite_size: usize,
    pub engines: Vec<EngineReport>,
}

impl MetricsReport {
    pub fn engine(&self, engine: Engine) -> Option<&EngineReport> {
        self.engines.iter().find(|e| e.engine == engine)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub kind: QueryKind,
    pub precision: Precision,
    pub median_retrieval_ms: f64,
    pub mean_retrieval_ms: f64,
    pub total_evaluation_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineTiming {
    pub engine: Engine,
    pub total_processing_ms: f64,
    pub cells: Vec<CellTiming>,
}

impl EngineTiming {
    pub fn cell(&self, kind: QueryKind, precision: Precision) -> Option<&CellTiming> {
        self.cells.iter().find(|c| c.kind == kind && c.precision == precision)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub engines: Vec<EngineTiming>,
}

impl TimingReport {
    pub fn engine(&self, engine: Engine) -> Option<&EngineTiming> {
        self.engines.iter().find(|e| e.engine == engine)
    }
}

pub struct BenchOutput {
    pub report: MetricsReport,
    pub timing: TimingReport,
    pub suite: Vec<SuiteQuery>,
    pub stores: Vec<(Engine, SpatialTemporalStore)>,
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn duplicates(gt: &GroundTruthIndex, store: &SpatialTemporalStore) -> (Duplicates, usize) {
    let votes = gt.keyframe_votes(store);
    let counts: Vec<f64> = votes.values().map(|v| v.len() as f64).collect();
    let m = mean(&counts);
    let var = mean(&counts.iter().map(|c| (c - m) * (c - m)).collect::<Vec<_>>());
    let unmapped = gt.observed_objects().filter(|g| !votes.contains_key(g)).count();
    (
        Duplicates {
            mean: m,
            sd: var.sqrt(),
            max: counts.iter().fold(0.0f64, |a, &b| a.max(b)) as usize,
        },
        unmapped,
    )
}

struct Executed {
    result: QueryResult,
    retrieval_ms: f64,
}

fn timed_execute(query: &crate::query::Query, store: &SpatialTemporalStore, cfg: &EngineConfig) -> Result<Executed> {
    let mut times = Vec::with_capacity(TIMING_REPS);
    let mut result = QueryResult::default();
    for _ in 0..TIMING_REPS {
        let start = Instant::now();
        result = execute(query, store, cfg.cos_sim_thresh, cfg.q2_together_window_ms)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(Executed {
        result,
        retrieval_ms: median(&mut times),
    })
}

/// Runs the suite against one store.
pub(crate) fn evaluate_engine(
    engine: Engine,
    store: &SpatialTemporalStore,
    gt: &GroundTruthIndex,
    suite: &[SuiteQuery],
    cfg: &EngineConfig,
    detections: usize,
    end_t: i64,
) -> Result<(EngineReport, Vec<CellTiming>)> {
    let mapping = gt.perfect_mapping(store);

    #[derive(Default)]
    struct Acc {
        rr: Vec<f64>,
        frames: Vec<f64>,
        ids: Vec<f64>,
        retrieval: Vec<f64>,
        evaluation_ms: f64,
    }
    let mut cells: BTreeMap<(QueryKind, Precision), Acc> = BTreeMap::new();
    let (mut negative_queries, mut negative_empty) = (0, 0);
    let (mut q3_errors, mut conflated) = (Vec::new(), 0);

    for q in suite {
        let formal = materialize(q, gt, &mapping, cfg.q2_together_window_ms);
        let ex = timed_execute(&formal, store, cfg)?;
        if q.is_negative() {
            negative_queries += 1;
            negative_empty += usize::from(ex.result.answers.is_empty());
            continue;
        }
        let start = Instant::now();
        let rr = evaluate_rank(&ex.result, MRR_CUTOFF, |a| q.is_correct(gt, a));
        let evaluation_ms = start.elapsed().as_secs_f64() * 1e3;

        if q.kind == QueryKind::Q3 {
            let target = q.gt_targets[0];
            let own = ex.result.answers.iter().take(MRR_CUTOFF).find(|a| q.is_correct(gt, a));
            if let Some(a) = own {
                if let Some(truth) = gt.position_at(target, a.occurrence.keyframe.t) {
                    let err = a.occurrence.position.distance(&truth);
                    q3_errors.push(err);
                    conflated += usize::from(err > 2.0 * cfg.d_thresh_m);
                }
            }
        }

        let acc = cells.entry((q.kind, q.precision)).or_default();
        acc.rr.push(rr);
        acc.frames.push(ex.result.distinct_keyframes() as f64);
        acc.ids.push(ex.result.distinct_object_ids() as f64);
        acc.retrieval.push(ex.retrieval_ms);
        acc.evaluation_ms += evaluation_ms;
    }

    let mut reports = Vec::new();
    let mut timings = Vec::new();
    let (mut hits, mut positives) = (0usize, 0usize);
    for ((kind, precision), mut acc) in cells {
        let misses = acc.rr.iter().filter(|r| **r == 0.0).count();
        hits += acc.rr.len() - misses;
        positives += acc.rr.len();
        reports.push(CellReport {
            kind,
            precision,
            queries: acc.rr.len(),
            miss_rate: misses as f64 / acc.rr.len() as f64,
            mrr_at_50: mean(&acc.rr),
            mean_frames_returned: mean(&acc.frames),
            mean_object_ids: mean(&acc.ids),
        });
        timings.push(CellTiming {
            kind,
            precision,
            mean_retrieval_ms: mean(&acc.retrieval),
            median_retrieval_ms: median(&mut acc.retrieval),
            total_evaluation_ms: acc.evaluation_ms,
        });
    }

    let (dups, unmapped) = duplicates(gt, store);
    let insertions = store.insertions_per_hour(Some(end_t));
    let cumulative = insertions
        .iter()
        .scan(0u64, |s, x| {
            *s += x;
            Some(*s)
        })
        .collect();
    let stats = store.stats()?;
    Ok((
        EngineReport {
            engine,
            detections,
            oic_count: stats.oic_count,
            stc_count: stats.stc_count,
            store_entries: stats.oic_count + stats.stc_count,
            db_size_bytes: stats.bytes_on_disk,
            unique_object_ids: stats.oic_count,
            duplicates_per_object: dups,
            unmapped_gt_objects: unmapped,
            mean_accuracy_pct: if positives == 0 { 0.0 } else { 100.0 * hits as f64 / positives as f64 },
            negative_queries,
            negative_empty,
            insertions_per_hour: insertions,
            cumulative_insertions: cumulative,
            q3_positions: Q3Positions {
                checked: q3_errors.len(),
                mean_error_m: mean(&q3_errors),
                conflated,
                flagged: conflated > 0,
            },
            cells: reports,
        },
        timings,
    ))
}

/// Builds each engine's store over the stream and runs a generated suite on
/// it. Engines run one after another.
pub fn run_benchmark(data: &SimData, cfg: &EngineConfig, engines: &[Engine], suite_spec: &SuiteSpec) -> Result<BenchOutput> {
    let gt = GroundTruthIndex::new(data)?;
    let suite = gen_query_suite(&gt, suite_spec);
    run_suite(data, &gt, cfg, engines, suite)
}

/// As [`run_benchmark`] with a given suite, e.g. a replayed query log.
pub fn run_benchmark_with_suite(data: &SimData, cfg: &EngineConfig, engines: &[Engine], suite: Vec<SuiteQuery>) -> Result<BenchOutput> {
    let gt = GroundTruthIndex::new(data)?;
    for q in &suite {
        if let Some(g) = q.gt_targets.iter().find(|g| gt.sightings(**g).is_empty()) {
            return Err(D3aError::Invalid(format!("query {} targets unobserved object {g}", q.id)));
        }
    }
    run_suite(data, &gt, cfg, engines, suite)
}

fn run_suite(
    data: &SimData,
    gt: &GroundTruthIndex,
    cfg: &EngineConfig,
    engines: &[Engine],
    suite: Vec<SuiteQuery>,
) -> Result<BenchOutput> {
    cfg.validate()?;
    let end_t = data.frames.last().map_or(data.manifest.spec.start_t, |f| f.t);
    let mut report = MetricsReport {
        suite_size: suite.len(),
        engines: Vec::new(),
    };
    let mut timing = TimingReport { engines: Vec::new() };
    let mut stores = Vec::new();
    for &engine in engines {
        let (store, processing_ms) = build_store(engine, data, cfg)?;
        let (r, cells) = evaluate_engine(engine, &store, gt, &suite, cfg, data.gt.len(), end_t)?;
        report.engines.push(r);
        timing.engines.push(EngineTiming {
            engine,
            total_processing_ms: processing_ms,
            cells,
        });
        stores.push((engine, store));
    }
    Ok(BenchOutput {
        report,
        timing,
        suite,
        stores,
    })
}

fn kind_name(k: QueryKind) -> &'static str {
    match k {
        QueryKind::Q1 => "Q1",
        QueryKind::Q2 => "Q2",
        QueryKind::Q3 => "Q3",
    }
}

fn precision_name(p: Precision) -> &'static str {
    match p {
        Precision::Perfect => "perfect",
        Precision::Category => "category",
        Precision::Any => "any",
    }
}

impl MetricsReport {
    /// Per engine x kind x precision rows.
    pub fn query_table_csv(&self) -> String {
        let mut s = String::from("engine,kind,precision,queries,miss_rate,mrr_at_50,mean_frames_returned,mean_object_ids\n");
        for e in &self.engines {
            for c in &e.cells {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    e.engine.name(),
                    kind_name(c.kind),
                    precision_name(c.precision),
                    c.queries,
                    c.miss_rate,
                    c.mrr_at_50,
                    c.mean_frames_returned,
                    c.mean_object_ids
                );
            }
        }
        s
    }

    /// One row per engine with the store-level figures.
    pub fn store_table_csv(&self) -> String {
        let mut s = String::from(
            "engine,detections,unique_object_ids,stc_count,db_size_bytes,duplicates_mean,duplicates_sd,duplicates_max,mean_accuracy_pct\n",
        );
        for e in &self.engines {
            let d = &e.duplicates_per_object;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                e.engine.name(),
                e.detections,
                e.unique_object_ids,
                e.stc_count,
                e.db_size_bytes,
                d.mean,
                d.sd,
                d.max,
                e.mean_accuracy_pct
            );
        }
        s
    }

    pub fn insertions_csv(&self) -> String {
        let mut s = String::from("engine,hour,insertions,cumulative\n");
        for e in &self.engines {
            for (h, (n, c)) in e.insertions_per_hour.iter().zip(&e.cumulative_insertions).enumerate() {
                let _ = writeln!(s, "{},{h},{n},{c}", e.engine.name());
            }
        }
        s
    }
}

impl TimingReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("engine,kind,precision,median_retrieval_ms,mean_retrieval_ms,total_evaluation_ms\n");
        for e in &self.engines {
            for c in &e.cells {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    e.engine.name(),
                    kind_name(c.kind),
                    precision_name(c.precision),
                    c.median_retrieval_ms,
                    c.mean_retrieval_ms,
                    c.total_evaluation_ms
                );
            }
        }
        s
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| D3aError::io(path, e))
}

fn pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

impl BenchOutput {
    /// Writes reports, the query log and each engine's store under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| D3aError::io(dir, e))?;
        write(&dir.join("report.json"), &pretty(&self.report)?)?;
        write(&dir.join("queries_table.csv"), self.report.query_table_csv().as_bytes())?;
        write(&dir.join("store_table.csv"), self.report.store_table_csv().as_bytes())?;
        write(&dir.join("insertions.csv"), self.report.insertions_csv().as_bytes())?;
        write(&dir.join("timing.json"), &pretty(&self.timing)?)?;
        write(&dir.join("timing.csv"), self.timing.csv().as_bytes())?;
        let mut log = Vec::new();
        for q in &self.suite {
            serde_json::to_writer(&mut log, q)?;
            log.push(b'\n');
        }
        write(&dir.join("queries.jsonl"), &log)?;
        for (engine, store) in &self.stores {
            persist(store, &dir.join("stores").join(engine.name()))?;
        }
        Ok(())
    }
}
