use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use agentsim::metrics::{write_points_csv, write_programs_csv};
use agentsim::predictor::{evaluate_predictors, write_report_csv};
use agentsim::workload::{
    dataset_preset, generate_arrivals, load_trace, load_trace_for_pool, synthesize_trace,
    write_trace, ArrivalProcess, SynthConfig,
};
use agentsim::{
    frontier, load_pool, run, summarize, trace_arrivals, AgingConfig, BalancerConfig, ModelId,
    OperatingPoint, Policy, Pool, PredictorKind, QuantileTable, RouterKind, SimConfig,
    TableRouter, TraceRecord,
};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "sim", about = "Simulate multi-stage LLM workflows on a model pool")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace as JSON lines.
    Synth(SynthArgs),
    /// Run one policy and write its metrics and event log.
    Run(RunArgs),
    /// Run a policy x rps x slack grid in parallel.
    Sweep(SweepArgs),
    /// Kendall-tau distance of each length estimator.
    EvalPredictor(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Built-in preset: apps or math.
    #[arg(long, default_value = "apps")]
    dataset: String,
    /// TOML generator config; overrides --dataset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    rps: Option<f64>,
    /// Print the generator config as TOML instead of generating.
    #[arg(long)]
    print_config: bool,
    #[arg(long, required_unless_present = "print_config")]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SimArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    /// Regenerate Poisson arrivals at this rate instead of the trace's own.
    #[arg(long)]
    rps: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// oracle, constant:<q>, noisy:<flip probability>, or table:<path>.
    #[arg(long, default_value = "oracle")]
    router: String,
    /// oracle, input, noisy:<sigma>, or quantile:<training trace>.
    #[arg(long, default_value = "oracle")]
    predictor: String,
    #[arg(long, default_value_t = 0.5)]
    quantile_level: f64,
    /// Iterations a request may be skipped before promotion; 0 disables aging.
    #[arg(long, default_value_t = 64)]
    starvation_threshold: u32,
    #[arg(long, default_value_t = 8)]
    running_quantum: u32,
    #[arg(long, default_value_t = 3)]
    mlfq_levels: u32,
    #[arg(long, default_value_t = 512)]
    mlfq_quantum: u64,
    #[arg(long, default_value_t = 0.0)]
    router_latency_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    predictor_latency_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    think_time_ms: f64,
    #[arg(long)]
    snapshot_interval_ms: Option<f64>,
    /// Shrink in-flight estimates as running requests produce tokens.
    #[arg(long)]
    decay_in_flight: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// predictive, fcfs, sjf, stjf_oracle, mlfq, or least_loaded.
    #[arg(long, default_value = "predictive")]
    policy: String,
    #[arg(long, default_value_t = 0.5)]
    latency_slack: f64,
    #[arg(long, default_value_t = 0.1)]
    confidence_margin: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, value_delimiter = ',', default_value = "predictive,fcfs,sjf,stjf_oracle,mlfq,least_loaded")]
    policies: Vec<String>,
    /// Arrival rates; empty keeps the trace's arrivals.
    #[arg(long, value_delimiter = ',')]
    rps_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1,2")]
    slack_grid: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    confidence_margin: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Training trace; synthesized from --dataset when absent.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, default_value = "apps")]
    dataset: String,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    quantile_level: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_router(spec: &str, seed: u64) -> Result<RouterKind> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    let router = match kind {
        "oracle" => RouterKind::Oracle,
        "constant" => RouterKind::Constant { value: arg.parse().context("constant router score")? },
        "noisy" => RouterKind::NoisyOracle {
            flip_probability: arg.parse().context("noisy router flip probability")?,
            seed,
        },
        "table" => RouterKind::Table(TableRouter::load(arg)?),
        other => bail!("unknown router {other:?}"),
    };
    router.validate()?;
    Ok(router)
}

fn parse_predictor(spec: &str, level: f64, seed: u64) -> Result<PredictorKind> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    Ok(match kind {
        "oracle" => PredictorKind::Oracle,
        "input" => PredictorKind::InputLengthProxy,
        "noisy" => PredictorKind::NoisyOracle {
            sigma: arg.parse().context("predictor noise sigma")?,
            seed,
        },
        "quantile" => {
            let train = load_trace(arg).with_context(|| format!("training trace {arg}"))?;
            PredictorKind::EmpiricalQuantile(QuantileTable::train(&train, level)?)
        }
        other => bail!("unknown predictor {other:?}"),
    })
}

struct Loaded {
    trace: Vec<TraceRecord>,
    pool: Pool,
    router: RouterKind,
    predictor: PredictorKind,
}

fn load(args: &SimArgs) -> Result<Loaded> {
    let pool = load_pool(&args.pool).with_context(|| format!("pool {}", args.pool.display()))?;
    let trace = load_trace_for_pool(&args.trace, pool.models())
        .with_context(|| format!("trace {}", args.trace.display()))?;
    Ok(Loaded {
        trace,
        router: parse_router(&args.router, args.seed)?,
        predictor: parse_predictor(&args.predictor, args.quantile_level, args.seed)?,
        pool,
    })
}

fn arrivals(trace: &[TraceRecord], rps: Option<f64>, seed: u64) -> Result<Vec<(String, f64)>> {
    match rps {
        None => Ok(trace_arrivals(trace)),
        Some(rps) => {
            let ids: Vec<String> = trace.iter().map(|r| r.program_id.clone()).collect();
            Ok(generate_arrivals(&ArrivalProcess { rps, seed, horizon_ms: None }, &ids)?)
        }
    }
}

fn policy(name: &str, args: &SimArgs, loaded: &Loaded, slack: f64, margin: f64) -> Result<Policy> {
    Ok(match name {
        "predictive" => Policy::Predictive {
            balancer: BalancerConfig::new(slack, margin)?,
            router: loaded.router.clone(),
            predictor: loaded.predictor.clone(),
            aging: if args.starvation_threshold == 0 {
                AgingConfig::disabled()
            } else {
                AgingConfig::new(args.starvation_threshold, args.running_quantum.max(1))
            },
        },
        "fcfs" => Policy::Fcfs,
        "sjf" => Policy::Sjf,
        "stjf_oracle" | "stjf" => Policy::StjfOracle,
        "mlfq" => Policy::Mlfq { levels: args.mlfq_levels.max(1), quantum_tokens: args.mlfq_quantum },
        "least_loaded" => Policy::LeastLoaded { weight_waiting: 1.0, weight_running: 1.0 },
        other => bail!("unknown policy {other:?}"),
    })
}

fn sim_config(args: &SimArgs) -> SimConfig {
    SimConfig {
        seed: args.seed,
        think_time_ms: args.think_time_ms,
        router_latency_ms: args.router_latency_ms,
        predictor_latency_ms: args.predictor_latency_ms,
        snapshot_interval_ms: args.snapshot_interval_ms,
        dispatch_weights: (1.0, 1.0),
        decay_in_flight: args.decay_in_flight,
    }
}

fn label(point: &mut OperatingPoint, policy: &Policy, rps: Option<f64>) {
    point.rps = rps;
    if let Policy::Predictive { balancer, .. } = policy {
        point.latency_slack = Some(balancer.latency_slack);
        point.confidence_margin = Some(balancer.confidence_margin);
        point.label = format!("{}(tau={},ds={})", point.policy, balancer.latency_slack, balancer.confidence_margin);
    }
    if let Some(r) = rps {
        point.label = format!("{}@{r}rps", point.label);
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("create {}", path.display()))?))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &args.config {
        Some(path) => toml::from_str(&fs::read_to_string(path)?)
            .with_context(|| format!("synth config {}", path.display()))?,
        None => dataset_preset(&args.dataset)
            .with_context(|| format!("unknown dataset {:?} (apps, math)", args.dataset))?,
    };
    if let Some(rps) = args.rps {
        cfg.arrival_rps = rps;
    }
    if args.print_config {
        print!("{}", toml::to_string(&cfg)?);
        return Ok(());
    }
    let out = args.out.context("--out is required")?;
    let trace = synthesize_trace(&cfg, args.n, args.seed)?;
    write_trace(File::create(&out)?, &trace)?;
    eprintln!("wrote {} programs to {}", trace.len(), out.display());
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let loaded = load(&args.sim)?;
    let policy = policy(&args.policy, &args.sim, &loaded, args.latency_slack, args.confidence_margin)?;
    let arrivals = arrivals(&loaded.trace, args.sim.rps, args.sim.seed)?;
    let result = run(&loaded.trace, &loaded.pool, &policy, &arrivals, &sim_config(&args.sim))?;
    let mut point = summarize(&result)?;
    label(&mut point, &policy, args.sim.rps);

    fs::create_dir_all(&args.out)?;
    serde_json::to_writer_pretty(create(&args.out, "summary.json")?, &point)?;
    write_points_csv(std::slice::from_ref(&point), create(&args.out, "points.csv")?)?;
    write_programs_csv(&result, create(&args.out, "programs.csv")?)?;
    result.log.write_ndjson(create(&args.out, "events.ndjson")?)?;
    println!(
        "{}: {} programs, {:.3} ms/token, makespan {:.1} ms, score {:.3}, queue {:.1} ms, overhead {:.4}",
        point.label,
        point.programs,
        point.mean_latency_per_token,
        point.mean_makespan_ms,
        point.mean_score,
        point.mean_queue_ms,
        point.overhead_fraction
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let loaded = load(&args.sim)?;
    let rps_grid: Vec<Option<f64>> = if args.rps_grid.is_empty() {
        vec![None]
    } else {
        args.rps_grid.iter().map(|r| Some(*r)).collect()
    };
    let mut jobs = Vec::new();
    for name in &args.policies {
        let slacks: &[f64] = if name == "predictive" { &args.slack_grid } else { &[0.0] };
        for rps in &rps_grid {
            for slack in slacks {
                jobs.push((policy(name, &args.sim, &loaded, *slack, args.confidence_margin)?, *rps));
            }
        }
    }
    let cfg = sim_config(&args.sim);
    let points = jobs
        .par_iter()
        .map(|(policy, rps)| -> Result<OperatingPoint> {
            let arrivals = arrivals(&loaded.trace, *rps, args.sim.seed)?;
            let result = run(&loaded.trace, &loaded.pool, policy, &arrivals, &cfg)?;
            let mut point = summarize(&result)?;
            label(&mut point, policy, *rps);
            Ok(point)
        })
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(&args.out)?;
    write_points_csv(&points, create(&args.out, "points.csv")?)?;
    let front = frontier(&points);
    write_points_csv(&front, create(&args.out, "frontier.csv")?)?;
    for p in &points {
        let mark = if front.contains(p) { "*" } else { " " };
        println!(
            "{mark} {:<40} {:>9.3} ms/token  score {:.3}",
            p.label, p.mean_latency_per_token, p.mean_score
        );
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let preset = || {
        dataset_preset(&args.dataset).with_context(|| format!("unknown dataset {:?}", args.dataset))
    };
    let train = match &args.train {
        Some(p) => load_trace(p)?,
        None => synthesize_trace(&preset()?, args.n, args.seed)?,
    };
    let test = match &args.test {
        Some(p) => load_trace(p)?,
        None => synthesize_trace(&preset()?, args.n, args.seed.wrapping_add(1))?,
    };
    let mut models: Vec<ModelId> = test
        .first()
        .context("empty test trace")?
        .models()
        .cloned()
        .collect();
    models.sort();
    let report = evaluate_predictors(&train, &test, &models, &args.dataset, args.quantile_level)?;
    match &args.out {
        Some(path) => write_report_csv(&report, File::create(path)?)?,
        None => write_report_csv(&report, std::io::stdout())?,
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(a) => cmd_synth(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::EvalPredictor(a) => cmd_eval(a),
    }
}
