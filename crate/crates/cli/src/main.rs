use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use dpmeb::dp::{dp_meb_with, dp_mmeb_with, DpSolveParams, RunOptions};
use dpmeb::harness::{generate, load_csv, run_experiment, write_csv, CsvOptions, ExperimentConfig, GenKind, GenSpec};
use dpmeb::init::{good_center, ldp_good_center, InitParams};
use dpmeb::ldp::{ldp_meb_with, ldp_mmeb_with, TranscriptMode};
use dpmeb::meb::{meb_search, SolveConfig};
use dpmeb::privacy::BudgetLedger;
use dpmeb::trace::{write_jsonl, TraceRecord};
use dpmeb::{Dataset, Point};

type CliResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "dpmeb", version, about = "Private and non-private minimum enclosing ball solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic point cloud as CSV.
    Gen(GenArgs),
    /// Non-private radius search.
    Solve(SolveArgs),
    /// Curator-model private solver.
    DpSolve(PrivateArgs),
    /// Local-model private solver.
    LdpSolve(PrivateArgs),
    /// Private initial ball.
    Init(InitArgs),
    /// Run an experiment described by a JSON config.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    SphericalGaussian,
    ProductBernoulli,
    ConditionalGaussian,
}

impl From<Kind> for GenKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::SphericalGaussian => GenKind::SphericalGaussian,
            Kind::ProductBernoulli => GenKind::ProductBernoulli,
            Kind::ConditionalGaussian => GenKind::ConditionalGaussian,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "spherical-gaussian")]
    kind: Kind,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated shift; random in the box when absent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    shift: Option<Vec<f64>>,
    /// Output directory; `points.csv` is written there.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated column indices to keep.
    #[arg(long, value_delimiter = ',')]
    cols: Option<Vec<usize>>,
    #[arg(long)]
    clip_box: Option<f64>,
    /// Seed of a random shift applied after clipping.
    #[arg(long)]
    shift_random: Option<u64>,
}

impl InputArgs {
    fn load(&self) -> CliResult<Dataset> {
        let mut o = CsvOptions::new(&self.input);
        o.cols.clone_from(&self.cols);
        o.clip_box = self.clip_box;
        o.shift_random = self.shift_random;
        Ok(load_csv(&o)?.data)
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 0.2)]
    gamma: f64,
    #[arg(long)]
    r0: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta0: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PrivateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 0.2)]
    gamma: f64,
    #[arg(long, default_value_t = 0.3)]
    rho: f64,
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Public radius guess (radius search) or radius (with --fixed-radius).
    #[arg(long)]
    r0: f64,
    /// Public starting center; the origin when absent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta0: Option<Vec<f64>>,
    /// Run one solver call at radius r0 instead of the radius search.
    #[arg(long)]
    fixed_radius: bool,
    /// Step γ²/8 and at most 2500 iterations per repetition.
    #[arg(long)]
    harness_mode: bool,
    /// Write the privacy ledger as JSON.
    #[arg(long)]
    audit: bool,
    /// Local model only: keep every user message in the transcript.
    #[arg(long)]
    dump_transcript: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    r_max: f64,
    #[arg(long)]
    r_min: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.3)]
    rho: f64,
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Local-model variant.
    #[arg(long)]
    local: bool,
    #[arg(long)]
    audit: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Solve(a) => solve(a),
        Command::DpSolve(a) => private_solve(a, false),
        Command::LdpSolve(a) => private_solve(a, true),
        Command::Init(a) => init(a),
        Command::Bench(a) => bench(a),
    }
}

fn start_point(theta0: Option<Vec<f64>>, d: usize) -> CliResult<Point> {
    Ok(match theta0 {
        Some(t) => Point::new(t)?,
        None => Point::origin(d),
    })
}

fn prepare_out(out: &Option<PathBuf>) -> CliResult<()> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn emit(out: &Option<PathBuf>, summary: &Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(summary)?;
    if let Some(dir) = out {
        std::fs::write(dir.join("result.json"), format!("{text}\n"))?;
    }
    println!("{text}");
    Ok(())
}

fn write_audit(out: &Option<PathBuf>, ledger: &BudgetLedger) -> CliResult<()> {
    let text = serde_json::to_string_pretty(&ledger.audit())?;
    match out {
        Some(dir) => std::fs::write(dir.join("ledger.json"), format!("{text}\n"))?,
        None => eprintln!("{text}"),
    }
    Ok(())
}

fn write_trace(out: &Option<PathBuf>, trace: &[TraceRecord]) -> CliResult<()> {
    if let Some(dir) = out {
        write_jsonl(&dir.join("trace.jsonl"), trace)?;
    }
    Ok(())
}

fn gen(a: GenArgs) -> CliResult<()> {
    let mut spec = GenSpec::new(a.kind.into(), a.n, a.d, a.seed);
    spec.shift = a.shift;
    let g = generate(&spec)?;
    std::fs::create_dir_all(&a.out)?;
    let path = a.out.join("points.csv");
    write_csv(&path, &g.data)?;
    let summary = json!({
        "points": path,
        "n": g.data.len(),
        "d": g.data.dim(),
        "shift": g.shift,
        "provenance": g.provenance,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn solve(a: SolveArgs) -> CliResult<()> {
    let data = a.input.load()?;
    let mut cfg = SolveConfig::from_data(&data, a.gamma)?;
    if let Some(r0) = a.r0 {
        cfg.r0 = r0;
    }
    if let Some(t) = a.theta0 {
        cfg.theta0 = Point::new(t)?;
    }
    cfg.validate()?;
    prepare_out(&a.out)?;
    let outcome = meb_search(&data, &cfg)?;
    emit(
        &a.out,
        &json!({
            "ball": outcome.ball,
            "accepted_index": outcome.accepted_index,
            "calls": outcome.calls,
            "private": false,
        }),
    )
}

fn private_solve(a: PrivateArgs, local: bool) -> CliResult<()> {
    let data = a.input.load()?;
    let theta0 = start_point(a.theta0, data.dim())?;
    let mode = if a.dump_transcript {
        TranscriptMode::Full
    } else {
        TranscriptMode::Digest
    };
    let opts = if a.harness_mode {
        RunOptions {
            step_scale: Some(a.gamma * a.gamma / 8.0),
            iter_cap: Some(2500),
            ..RunOptions::default()
        }
    } else {
        RunOptions::default()
    };
    prepare_out(&a.out)?;
    let mut summary = json!({
        "model": if local { "local" } else { "curator" },
        "harness_mode": a.harness_mode,
        "gamma": a.gamma,
        "rho": a.rho,
        "beta": a.beta,
        "seed": a.seed,
    });

    let (trace, ledger, transcript) = if a.fixed_radius {
        let params = DpSolveParams {
            gamma: a.gamma,
            beta: a.beta,
            rho: a.rho,
            r: a.r0,
            theta0,
            seed: a.seed,
        };
        let (out, transcript) = if local {
            let o = ldp_mmeb_with(&data, &params, &opts, mode)?;
            summary["lemma_bound"] = json!(o.lemma_bound);
            (o.outcome, Some(o.transcript))
        } else {
            (dp_mmeb_with(&data, &params, &opts)?, None)
        };
        summary["theta"] = json!(out.theta);
        summary["stop_reason"] = json!(out.stop_reason);
        summary["iterations"] = json!(out.iterations);
        summary["reps_run"] = json!(out.reps_run);
        summary["schedule"] = json!(out.schedule);
        (out.trace, out.ledger, transcript)
    } else {
        let cfg = SolveConfig::new(a.gamma, a.r0, theta0)?;
        let (res, transcript) = if local {
            let r = ldp_meb_with(&data, &cfg, a.beta, a.rho, a.seed, &opts, mode)?;
            (r.result, Some(r.transcript))
        } else {
            (dp_meb_with(&data, &cfg, a.beta, a.rho, a.seed, &opts)?, None)
        };
        summary["ball"] = json!(res.ball);
        summary["failed"] = json!(res.failed());
        summary["accepted_index"] = json!(res.accepted_index);
        summary["clipped"] = json!(res.clipped.len());
        summary["calls"] = json!(res.calls);
        summary["slots"] = json!(res.slots);
        (res.trace, res.ledger, transcript)
    };
    summary["private"] = json!(ledger.is_private());
    summary["rho_spent"] = json!(ledger.spent());

    write_trace(&a.out, &trace)?;
    if let (Some(dir), Some(t)) = (&a.out, &transcript) {
        t.write_jsonl(&dir.join("transcript.jsonl"))?;
    }
    if a.audit {
        write_audit(&a.out, &ledger)?;
    }
    emit(&a.out, &summary)
}

fn init(a: InitArgs) -> CliResult<()> {
    let data = a.input.load()?;
    let theta0 = start_point(a.theta0, data.dim())?;
    let params = InitParams::new(a.r_max, a.r_min, theta0, a.beta, a.rho, a.seed)?;
    let out = if a.local {
        ldp_good_center(&data, &params)?
    } else {
        good_center(&data, &params)?
    };
    prepare_out(&a.out)?;
    if a.audit {
        write_audit(&a.out, &out.ledger)?;
    }
    emit(
        &a.out,
        &json!({
            "model": if a.local { "local" } else { "curator" },
            "ball": out.ball,
            "altered": out.altered.len(),
            "rounds": out.rounds,
            "schedule": out.schedule,
            "warnings": out.warnings,
            "exhausted": out.exhausted,
            "snapped": out.snapped,
            "center_bounds": out.center_bounds,
        }),
    )
}

fn bench(a: BenchArgs) -> CliResult<()> {
    let config = ExperimentConfig::from_json_file(&a.config)?;
    let report = run_experiment(&config, &a.out)?;
    std::fs::write(
        a.out.join("config.json"),
        format!("{}\n", serde_json::to_string_pretty(&config)?),
    )?;
    for row in &report.rows {
        println!(
            "seed {}: {} after {} iterations, final distance {}, uncovered {}",
            row.seed,
            row.stop_reason,
            row.iterations,
            row.final_distance.map_or_else(|| "-".to_owned(), |v| format!("{v:.6}")),
            row.final_uncovered.map_or_else(|| "-".to_owned(), |v| v.to_string()),
        );
    }
    println!("summary: {}", Path::new(&a.out).join("summary.csv").display());
    Ok(())
}
