mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use d3a::eval::{build_store, fpr_sweep, run_benchmark, run_benchmark_with_suite, sweep_csv, Engine, SuiteQuery, SuiteSpec};
use d3a::model::EngineConfig;
use d3a::perception::CameraModel;
use d3a::query::{evaluate_rank, execute, Query, QueryResult, MRR_CUTOFF};
use d3a::sim::{gen_patrol, gen_world, read_ground_truth, read_stream, write_stream, SimData, WorldSpec};
use d3a::store::{load, persist};
use serde::Serialize;

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "d3a", version, about = "Detection aggregation store: simulate, ingest, query, bench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded world and patrol stream.
    Simulate(SimulateArgs),
    /// Build a store from a stream.
    Ingest(IngestArgs),
    /// Run one query against a persisted store.
    Query(QueryArgs),
    /// Run the query suite (and optionally the fpr sweep) for several engines.
    Bench(BenchArgs),
    /// Print statistics of a persisted store.
    Stats(StatsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long = "static", default_value_t = WorldSpec::default().n_static)]
    n_static: usize,
    #[arg(long = "dynamic", default_value_t = WorldSpec::default().n_dynamic)]
    n_dynamic: usize,
    #[arg(long, default_value_t = 3.0)]
    hours: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = WorldSpec::default().fpr)]
    fpr: f64,
    #[arg(long, default_value_t = WorldSpec::default().fnr)]
    fnr: f64,
    #[arg(long, default_value_t = WorldSpec::default().pose_noise_sd_m)]
    pose_noise: f64,
    /// Perfect detector and localization; overrides the noise flags.
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Engine parameters; names follow `EngineConfig` fields.
#[derive(Args, Clone)]
struct ConfigArgs {
    #[arg(long)]
    d_thresh: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    cos_thresh: Option<f64>,
    #[arg(long)]
    stm_cap: Option<usize>,
    #[arg(long)]
    together_window_ms: Option<i64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<EngineConfig> {
        let d = EngineConfig::default();
        let cfg = EngineConfig {
            d_thresh_m: self.d_thresh.unwrap_or(d.d_thresh_m),
            window_len: self.window.unwrap_or(d.window_len),
            cos_sim_thresh: self.cos_thresh.unwrap_or(d.cos_sim_thresh),
            stm_capacity: self.stm_cap.unwrap_or(d.stm_capacity),
            q2_together_window_ms: self.together_window_ms.unwrap_or(d.q2_together_window_ms),
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, value_parser = parse_engine)]
    engine: Engine,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    store: PathBuf,
    /// Path to a query JSON file, or the JSON itself.
    #[arg(long)]
    query: String,
    /// Object id whose first answer rank is evaluated.
    #[arg(long)]
    expect: Option<u64>,
    /// Where to write the run manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Stream directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Ground-truth file; defaults to the one in the stream directory.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_engine, default_value = "d3a,naive,nonspatial")]
    engines: Vec<Engine>,
    /// Replay a query log written by an earlier bench.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = SuiteSpec::default().per_cell)]
    per_cell: usize,
    #[arg(long, default_value_t = SuiteSpec::default().negatives)]
    negatives: usize,
    /// Suite seed; defaults to the stream's world seed.
    #[arg(long)]
    suite_seed: Option<u64>,
    /// Comma-separated fpr levels for the noise sweep.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

fn parse_engine(s: &str) -> Result<Engine, String> {
    Engine::parse(s).map_err(|e| e.to_string())
}

fn echo_config(cfg: &EngineConfig) {
    println!(
        "d_thresh={} window={} cos={} stm={}",
        cfg.d_thresh_m, cfg.window_len, cfg.cos_sim_thresh, cfg.stm_capacity
    );
}

fn simulate(a: &SimulateArgs, run: &mut RunManifest) -> Result<()> {
    if !(a.hours > 0.0 && a.hours.is_finite()) {
        bail!("--hours must be > 0");
    }
    let mut spec = WorldSpec {
        n_static: a.n_static,
        n_dynamic: a.n_dynamic,
        duration_ms: (a.hours * 3_600_000.0).round() as i64,
        seed: a.seed,
        fpr: a.fpr,
        fnr: a.fnr,
        pose_noise_sd_m: a.pose_noise,
        ..WorldSpec::default()
    };
    if a.noiseless {
        spec = spec.noiseless();
    }
    let cam = CameraModel::default();
    let world = gen_world(&spec)?;
    let stream = gen_patrol(&world, &spec, &cam)?;
    let data = SimData::new(&spec, &cam, world, stream);
    write_stream(&a.out, &data)?;
    println!(
        "frames={} detections={} objects={}",
        data.manifest.frame_count, data.manifest.detection_count, data.manifest.object_count
    );
    run.seed = Some(spec.seed);
    run.world_spec = Some(spec);
    run.outputs.push(a.out.clone());
    run.write(&a.out)
}

fn ingest(a: &IngestArgs, run: &mut RunManifest) -> Result<()> {
    let cfg = a.config.resolve()?;
    echo_config(&cfg);
    let data = read_stream(&a.input).with_context(|| format!("reading stream {}", a.input.display()))?;
    let (store, ms) = build_store(a.engine, &data, &cfg)?;
    persist(&store, &a.out)?;
    let stats = store.stats()?;
    println!("engine={}", a.engine.name());
    println!("oic_count={}", stats.oic_count);
    println!("stc_count={}", stats.stc_count);
    println!("bytes_on_disk={}", stats.bytes_on_disk);
    println!("insertions_per_hour={:?}", stats.insertions_per_hour);
    log::info!("ingest took {ms:.1} ms");
    run.seed = Some(data.manifest.spec.seed);
    run.world_spec = Some(data.manifest.spec);
    run.engine_config = Some(cfg);
    run.inputs.push(a.input.clone());
    run.outputs.push(a.out.clone());
    run.write(&a.out)
}

#[derive(Serialize)]
struct QueryOutput<'a> {
    #[serde(flatten)]
    result: &'a QueryResult,
    retrieval_ms: f64,
    evaluation_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reciprocal_rank: Option<f64>,
}

fn read_query(arg: &str) -> Result<Query> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading query file {arg}"))?
    };
    let q: Query = serde_json::from_str(&text).context("malformed query")?;
    q.validate().context("invalid query")?;
    Ok(q)
}

fn query(a: &QueryArgs, run: &mut RunManifest) -> Result<()> {
    let q = read_query(&a.query)?;
    let store = load(&a.store)?;
    let cfg = store.meta().config.clone();
    let start = Instant::now();
    let result = execute(&q, &store, cfg.cos_sim_thresh, cfg.q2_together_window_ms)?;
    let retrieval_ms = start.elapsed().as_secs_f64() * 1e3;
    let (reciprocal_rank, evaluation_ms) = match a.expect {
        Some(id) => {
            let start = Instant::now();
            let rr = evaluate_rank(&result, MRR_CUTOFF, |ans| ans.occurrence.object_id == id);
            (Some(rr), Some(start.elapsed().as_secs_f64() * 1e3))
        }
        None => (None, None),
    };
    let out = QueryOutput {
        result: &result,
        retrieval_ms,
        evaluation_ms,
        reciprocal_rank,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    run.engine_config = Some(cfg);
    run.inputs.push(a.store.clone());
    match &a.manifest {
        Some(p) => run.write_to(p),
        None => Ok(()),
    }
}

fn read_suite(path: &Path) -> Result<Vec<SuiteQuery>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn bench(a: &BenchArgs, run: &mut RunManifest) -> Result<()> {
    let cfg = a.config.resolve()?;
    echo_config(&cfg);
    let mut data = read_stream(&a.input).with_context(|| format!("reading stream {}", a.input.display()))?;
    if let Some(gt) = &a.gt {
        (data.world, data.gt) = read_ground_truth(gt).with_context(|| format!("reading {}", gt.display()))?;
        run.inputs.push(gt.clone());
    }
    if data.gt.is_empty() && data.manifest.detection_count > 0 {
        bail!("no ground truth for stream {}", a.input.display());
    }
    data.check_consistency().context("ground truth does not match the stream")?;
    let suite_spec = SuiteSpec {
        per_cell: a.per_cell,
        negatives: a.negatives,
        seed: a.suite_seed.unwrap_or(data.manifest.spec.seed),
        together_window_ms: cfg.q2_together_window_ms,
    };
    let out = match &a.queries {
        Some(path) => {
            run.inputs.push(path.clone());
            run_benchmark_with_suite(&data, &cfg, &a.engines, read_suite(path)?)?
        }
        None => run_benchmark(&data, &cfg, &a.engines, &suite_spec)?,
    };
    out.write(&a.out)?;
    for e in &out.report.engines {
        println!(
            "engine={} oic_count={} stc_count={} accuracy_pct={:.2} duplicates_mean={:.3}",
            e.engine.name(),
            e.oic_count,
            e.stc_count,
            e.mean_accuracy_pct,
            e.duplicates_per_object.mean
        );
    }
    if let Some(levels) = &a.sweep {
        let rows = fpr_sweep(levels, &data.manifest.spec, &data.manifest.camera, &cfg, &a.engines)?;
        fs::write(a.out.join("sweep.csv"), sweep_csv(&rows)).context("writing sweep.csv")?;
        println!("sweep rows={}", rows.len());
    }
    run.seed = Some(suite_spec.seed);
    run.world_spec = Some(data.manifest.spec);
    run.engine_config = Some(cfg);
    run.inputs.push(a.input.clone());
    run.outputs.push(a.out.clone());
    run.write(&a.out)
}

fn stats(a: &StatsArgs, run: &mut RunManifest) -> Result<()> {
    let store = load(&a.store)?;
    let stats = store.stats()?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    run.engine_config = Some(store.meta().config.clone());
    run.inputs.push(a.store.clone());
    match &a.manifest {
        Some(p) => run.write_to(p),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut run = RunManifest::start(std::env::args().collect());
    let res = match &cli.command {
        Command::Simulate(a) => simulate(a, &mut run),
        Command::Ingest(a) => ingest(a, &mut run),
        Command::Query(a) => query(a, &mut run),
        Command::Bench(a) => bench(a, &mut run),
        Command::Stats(a) => stats(a, &mut run),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
