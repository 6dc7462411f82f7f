//! Experiment runner: generates data per seed, runs one algorithm, and emits
//! JSONL traces plus a versioned CSV summary.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dp::{dp_meb_with, dp_mmeb_with, DpMebResult, DpSolveParams, RunOptions};
use crate::error::{domain, Result};
use crate::geometry::{count_outside, distance, minimum_enclosing_ball, norm2, Ball, Dataset, Point};
use crate::harness::generate::{generate, GenKind, GenSpec};
use crate::harness::n0;
use crate::init::{good_center, ldp_good_center, InitOutcome, InitParams};
use crate::ldp::{ldp_meb_with, ldp_mmeb_with, TranscriptMode};
use crate::meb::{mmeb_iters, mmeb_run, MmebOptions, SolveConfig};
use crate::privacy::{BudgetLedger, PrivacyBudget, Substreams};
use crate::trace::{write_jsonl, StopReason, TraceRecord};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Mmeb,
    DpMmeb,
    LdpMmeb,
    DpMeb,
    LdpMeb,
    GoodCenter,
    LdpGoodCenter,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mmeb => "mmeb",
            Self::DpMmeb => "dp_mmeb",
            Self::LdpMmeb => "ldp_mmeb",
            Self::DpMeb => "dp_meb",
            Self::LdpMeb => "ldp_meb",
            Self::GoodCenter => "good_center",
            Self::LdpGoodCenter => "ldp_good_center",
        }
    }
}

/// Where the radius handed to a solver comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RMode {
    /// The oracle radius of the generated data.
    TrueROpt,
    /// `ExperimentConfig::r`.
    Provided,
    /// Drivers only: a private initialisation supplies `(θ₀, r₀)`, using half the budget.
    Searched,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: GenSpec,
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub rho: f64,
    pub beta: f64,
    pub r_mode: RMode,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r: Option<f64>,
    /// Starting center; the origin when absent.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step_override: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iter_cap: Option<usize>,
    /// Use `n₀` as the in-loop gate of the private solvers.
    #[serde(default)]
    pub threshold_n0: bool,
    /// Stop once within `γ r_opt` of the oracle center.
    #[serde(default)]
    pub halt_on_converged: bool,
    #[serde(default)]
    pub noise_disabled: bool,
    /// Budget actually spent, when it differs from the nominal `rho`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho_eff: Option<f64>,
    /// Lower radius bound for the initialisation algorithms.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r_min: Option<f64>,
    #[serde(default)]
    pub timing: bool,
    pub seeds: Vec<u64>,
}

/// `β = e⁻⁹`.
pub fn protocol_beta() -> f64 {
    (-9.0f64).exp()
}

pub const PROTOCOL_DIM: usize = 10;
pub const PROTOCOL_ITER_CAP: usize = 2500;
pub const PROTOCOL_N_FACTOR: f64 = 640.0;

/// Budget at which `n` points see the same relative noise and gate as
/// `640·n₀(ρ)` points at budget `ρ`: `ρ·(640 n₀(ρ)/n)²`.
pub fn desk_scale_rho(gamma: f64, rho: f64, d: usize, beta: f64, n: usize) -> Result<f64> {
    let full = PROTOCOL_N_FACTOR * n0(gamma, rho, d, beta)?;
    Ok(rho * (full / n as f64).powi(2))
}

impl ExperimentConfig {
    /// The standard protocol: `dp_mmeb` on 10-dimensional data in `[-5, 5]^10`
    /// starting at the origin, with `r = r_opt`, `β = e⁻⁹`, step `γ²/8`, gate
    /// `n₀`, at most 2500 iterations and `n = ⌈640 n₀⌉`.
    pub fn protocol(kind: GenKind, gamma: f64, rho: f64, seeds: Vec<u64>) -> Result<Self> {
        let beta = protocol_beta();
        let n = (PROTOCOL_N_FACTOR * n0(gamma, rho, PROTOCOL_DIM, beta)?).ceil() as usize;
        Ok(Self {
            generator: GenSpec::new(kind, n, PROTOCOL_DIM, 0),
            algorithm: Algorithm::DpMmeb,
            gamma,
            rho,
            beta,
            r_mode: RMode::TrueROpt,
            r: None,
            theta0: None,
            step_override: Some(gamma * gamma / 8.0),
            iter_cap: Some(PROTOCOL_ITER_CAP),
            threshold_n0: true,
            halt_on_converged: true,
            noise_disabled: false,
            rho_eff: None,
            r_min: None,
            timing: false,
            seeds,
        })
    }

    /// [`Self::protocol`] at a smaller `n`, with the budget rescaled by [`desk_scale_rho`].
    pub fn protocol_scaled(kind: GenKind, gamma: f64, rho: f64, n: usize, seeds: Vec<u64>) -> Result<Self> {
        let mut c = Self::protocol(kind, gamma, rho, seeds)?;
        c.generator.n = n;
        c.rho_eff = Some(desk_scale_rho(gamma, rho, PROTOCOL_DIM, c.beta, n)?);
        Ok(c)
    }

    pub fn effective_rho(&self) -> f64 {
        self.rho_eff.unwrap_or(self.rho)
    }

    pub fn validate(&self) -> Result<()> {
        crate::meb::check_gamma(self.gamma)?;
        crate::dp::check_beta(self.beta)?;
        PrivacyBudget::new(self.rho)?;
        PrivacyBudget::new(self.effective_rho())?;
        if self.seeds.is_empty() {
            return Err(domain("no seeds given"));
        }
        if self.r_mode == RMode::Provided && self.r.is_none() {
            return Err(domain("r_mode provided needs r"));
        }
        if self.r_mode == RMode::Searched
            && !matches!(self.algorithm, Algorithm::DpMeb | Algorithm::LdpMeb)
        {
            return Err(domain("a searched radius applies to the radius-search drivers only"));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }
}

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub schema_version: u32,
    pub seed: u64,
    pub algorithm: String,
    pub generator: String,
    pub n: usize,
    pub d: usize,
    pub gamma: f64,
    pub rho: f64,
    pub rho_eff: f64,
    pub beta: f64,
    pub r: Option<f64>,
    pub r_opt: f64,
    pub oracle_exact: bool,
    pub iterations: usize,
    pub schedule_iters: Option<usize>,
    pub final_distance: Option<f64>,
    pub final_uncovered: Option<usize>,
    pub stop_reason: String,
    pub private: bool,
    pub wall_ms: Option<f64>,
}

/// Everything one seed produced.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedRun {
    pub row: SummaryRow,
    pub trace: Vec<TraceRecord>,
    pub ledger: Option<BudgetLedger>,
    pub oracle: Ball,
    pub final_ball: Option<Ball>,
}

struct Algo {
    trace: Vec<TraceRecord>,
    theta: Option<Point>,
    /// Radius for the final uncovered count.
    radius: f64,
    iterations: usize,
    schedule_iters: Option<usize>,
    stop: String,
    ledger: Option<BudgetLedger>,
    r: Option<f64>,
}

/// Runs one seed without touching the filesystem.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    config.validate()?;
    let mut spec = config.generator.clone();
    spec.seed = seed;
    let data = generate(&spec)?.data;
    let solution = minimum_enclosing_ball(&data)?;
    let oracle = solution.ball.clone();
    let started = config.timing.then(Instant::now);
    let algo = run_algorithm(config, &data, &oracle, seed)?;
    let wall_ms = started.map(|s| s.elapsed().as_secs_f64() * 1e3);

    let final_ball = algo.theta.as_ref().map(|t| Ball {
        center: t.clone(),
        radius: algo.radius,
    });
    let row = SummaryRow {
        schema_version: SUMMARY_SCHEMA_VERSION,
        seed,
        algorithm: config.algorithm.as_str().to_owned(),
        generator: spec.kind.as_str().to_owned(),
        n: data.len(),
        d: data.dim(),
        gamma: config.gamma,
        rho: config.rho,
        rho_eff: config.effective_rho(),
        beta: config.beta,
        r: algo.r,
        r_opt: oracle.radius,
        oracle_exact: solution.exact,
        iterations: algo.iterations,
        schedule_iters: algo.schedule_iters,
        final_distance: algo.theta.as_ref().map(|t| distance(t, &oracle.center)),
        final_uncovered: final_ball.as_ref().map(|b| count_outside(&data, &b.center, b.radius)),
        stop_reason: algo.stop,
        private: algo.ledger.as_ref().is_some_and(BudgetLedger::is_private),
        wall_ms,
    };
    Ok(SeedRun {
        row,
        trace: algo.trace,
        ledger: algo.ledger,
        oracle,
        final_ball,
    })
}

fn alg_seed(seed: u64) -> u64 {
    Substreams::new(seed).child(&[0xA1]).seed()
}

fn run_algorithm(config: &ExperimentConfig, data: &Dataset, oracle: &Ball, seed: u64) -> Result<Algo> {
    let d = data.dim();
    let gamma = config.gamma;
    let rho = config.effective_rho();
    let theta0 = match &config.theta0 {
        Some(t) => Point::new(t.clone())?,
        None => Point::origin(d),
    };
    data.check_dim(theta0.dim())?;
    let r_given = match config.r_mode {
        RMode::TrueROpt => Some(oracle.radius.max(f64::MIN_POSITIVE)),
        RMode::Provided => config.r,
        RMode::Searched => None,
    };
    let opts = RunOptions {
        step_scale: config.step_override,
        iter_cap: config.iter_cap,
        threshold_override: if config.threshold_n0 {
            Some(n0(gamma, rho, d, config.beta)?)
        } else {
            None
        },
        oracle: Some(oracle.clone()),
        halt_on_converged: config.halt_on_converged,
        noise_disabled: config.noise_disabled,
        timing: false,
    };
    let seed = alg_seed(seed);

    match config.algorithm {
        Algorithm::Mmeb => {
            let r = r_given.expect("validated");
            run_mmeb(config, data, oracle, &theta0, r)
        }
        Algorithm::DpMmeb | Algorithm::LdpMmeb => {
            let r = r_given.expect("validated");
            let params = DpSolveParams {
                gamma,
                beta: config.beta,
                rho,
                r,
                theta0,
                seed,
            };
            let out = if config.algorithm == Algorithm::DpMmeb {
                dp_mmeb_with(data, &params, &opts)?
            } else {
                ldp_mmeb_with(data, &params, &opts, TranscriptMode::Digest)?.outcome
            };
            Ok(Algo {
                trace: out.trace,
                theta: out.theta,
                radius: (1.0 + gamma) * r,
                iterations: out.iterations,
                schedule_iters: Some(out.schedule.iters),
                stop: out.stop_reason.to_string(),
                ledger: Some(out.ledger),
                r: Some(r),
            })
        }
        Algorithm::DpMeb | Algorithm::LdpMeb => {
            let local = config.algorithm == Algorithm::LdpMeb;
            let (cfg, init, solve_rho, solve_beta) = match r_given {
                Some(r0) => (SolveConfig::new(gamma, r0, theta0)?, None, rho, config.beta),
                None => {
                    let params = init_params(config, data, &theta0, seed, rho / 2.0, config.beta / 2.0)?;
                    let init = if local {
                        ldp_good_center(data, &params)?
                    } else {
                        good_center(data, &params)?
                    };
                    let cfg = SolveConfig::new(gamma, init.ball.radius, init.ball.center.clone())?;
                    (cfg, Some(init), rho / 2.0, config.beta / 2.0)
                }
            };
            let search_seed = Substreams::new(seed).child(&[1]).seed();
            let res: DpMebResult = if local {
                ldp_meb_with(data, &cfg, solve_beta, solve_rho, search_seed, &opts, TranscriptMode::Digest)?.result
            } else {
                dp_meb_with(data, &cfg, solve_beta, solve_rho, search_seed, &opts)?
            };
            let ledger = match &init {
                None => res.ledger.clone(),
                Some(init) => {
                    let mut l = BudgetLedger::new(PrivacyBudget::new(rho)?);
                    l.absorb("init/", &init.ledger)?;
                    l.absorb("search/", &res.ledger)?;
                    l
                }
            };
            let stop = if res.failed() { "failed" } else { "accepted" };
            Ok(Algo {
                iterations: res.calls.iter().map(|c| c.iterations).sum(),
                trace: res.trace,
                radius: res.ball.as_ref().map_or(0.0, |b| b.radius),
                theta: res.ball.map(|b| b.center),
                schedule_iters: None,
                stop: stop.to_owned(),
                ledger: Some(ledger),
                r: Some(cfg.r0),
            })
        }
        Algorithm::GoodCenter | Algorithm::LdpGoodCenter => {
            let params = init_params(config, data, &theta0, seed, rho, config.beta)?;
            let out = if config.algorithm == Algorithm::GoodCenter {
                good_center(data, &params)?
            } else {
                ldp_good_center(data, &params)?
            };
            Ok(init_algo(out, oracle))
        }
    }
}

fn init_params(
    config: &ExperimentConfig,
    data: &Dataset,
    theta0: &Point,
    seed: u64,
    rho: f64,
    beta: f64,
) -> Result<InitParams> {
    let d = data.dim() as f64;
    let r_max = config.generator.box_half * d.sqrt() + norm2(theta0).sqrt();
    let r_min = config.r_min.unwrap_or(0.01);
    InitParams::new(r_max, r_min.min(r_max), theta0.clone(), beta, rho, seed)
}

fn init_algo(out: InitOutcome, oracle: &Ball) -> Algo {
    let trace = out
        .rounds
        .iter()
        .map(|r| TraceRecord {
            call: None,
            rep: 0,
            iter: r.round,
            dist_to_opt: Some(distance(&r.center, &oracle.center)),
            n_uncovered_true: r.outside_true,
            n_uncovered_noisy: Some(r.outside_noisy),
            radius: r.radius,
            stepped: !r.halted,
            sum_released: true,
            wall_ms: None,
        })
        .collect();
    Algo {
        trace,
        iterations: out.rounds.len(),
        radius: out.ball.radius,
        theta: Some(out.ball.center),
        schedule_iters: Some(out.schedule.rounds),
        stop: if out.exhausted { "rounds_exhausted" } else { "gate" }.to_owned(),
        ledger: Some(out.ledger),
        r: None,
    }
}

fn run_mmeb(config: &ExperimentConfig, data: &Dataset, oracle: &Ball, theta0: &Point, r: f64) -> Result<Algo> {
    let gamma = config.gamma;
    let horizon = mmeb_iters(gamma)?;
    let opts = MmebOptions {
        step_scale: config.step_override,
        iter_cap: config.iter_cap,
        halt_within: config.halt_on_converged.then(|| Ball {
            center: oracle.center.clone(),
            radius: gamma * oracle.radius,
        }),
    };
    let mut trace = Vec::new();
    let run = mmeb_run(data, gamma, r, theta0, opts, |e| {
        trace.push(TraceRecord {
            call: None,
            rep: 0,
            iter: e.t,
            dist_to_opt: Some(distance(e.theta_before, &oracle.center)),
            n_uncovered_true: e.uncovered,
            n_uncovered_noisy: None,
            radius: r,
            stepped: true,
            sum_released: false,
            wall_ms: None,
        });
    })?;
    trace.push(TraceRecord {
        call: None,
        rep: 0,
        iter: run.updates,
        dist_to_opt: Some(distance(&run.theta, &oracle.center)),
        n_uncovered_true: run.uncovered,
        n_uncovered_noisy: None,
        radius: r,
        stepped: false,
        sum_released: false,
        wall_ms: None,
    });
    let stop = if run.reached_target {
        StopReason::Converged
    } else if run.covered {
        StopReason::Covered
    } else if config.iter_cap.is_some_and(|c| c < horizon) {
        StopReason::IterationCap
    } else {
        StopReason::HorizonReached
    };
    let mut ledger = BudgetLedger::new(PrivacyBudget::new(config.effective_rho())?);
    ledger.poison("non-private solver");
    Ok(Algo {
        trace,
        theta: Some(run.theta),
        radius: (1.0 + gamma) * r,
        iterations: run.updates,
        schedule_iters: Some(horizon),
        stop: stop.to_string(),
        ledger: Some(ledger),
        r: Some(r),
    })
}

/// Result of [`run_experiment`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<SummaryRow>,
}

pub fn trace_file_name(seed: u64) -> String {
    format!("trace_seed{seed}.jsonl")
}

pub const SUMMARY_FILE: &str = "summary.csv";

/// Runs every seed, writing `trace_seed{seed}.jsonl`, `ledger_seed{seed}.json`
/// and `summary.csv` into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let run = run_seed(config, seed)?;
        write_jsonl(&out_dir.join(trace_file_name(seed)), &run.trace)?;
        if let Some(ledger) = &run.ledger {
            let audit = serde_json::to_string_pretty(&ledger.audit())?;
            std::fs::write(out_dir.join(format!("ledger_seed{seed}.json")), audit + "\n")?;
        }
        rows.push(run.row);
    }
    write_summary(&out_dir.join(SUMMARY_FILE), &rows)?;
    Ok(ExperimentReport { rows })
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: GenKind, algorithm: Algorithm) -> ExperimentConfig {
        let mut c = ExperimentConfig::protocol_scaled(kind, 0.5, 0.5, 3000, vec![1, 2]).unwrap();
        c.algorithm = algorithm;
        c
    }

    #[test]
    fn protocol_defaults() {
        let c = ExperimentConfig::protocol(GenKind::SphericalGaussian, 0.2, 0.3, vec![0]).unwrap();
        let expect = (640.0 * n0(0.2, 0.3, 10, protocol_beta()).unwrap()).ceil() as usize;
        assert_eq!(c.generator.n, expect);
        assert!((c.step_override.unwrap() - 0.005).abs() < 1e-15);
        assert_eq!(c.iter_cap, Some(2500));
    }

    #[test]
    fn desk_scale_keeps_ratio() {
        let (g, rho, beta) = (0.3, 0.5, protocol_beta());
        let n = 5000;
        let rho_eff = desk_scale_rho(g, rho, 10, beta, n).unwrap();
        let full = 640.0 * n0(g, rho, 10, beta).unwrap();
        let ratio_full = n0(g, rho, 10, beta).unwrap() / full;
        let ratio_small = n0(g, rho_eff, 10, beta).unwrap() / n as f64;
        assert!((ratio_full - ratio_small).abs() < 1e-12);
    }

    #[test]
    fn mmeb_runs_converge() {
        let mut c = small(GenKind::SphericalGaussian, Algorithm::Mmeb);
        c.step_override = None;
        c.iter_cap = None;
        for seed in [1, 2, 3] {
            let run = run_seed(&c, seed).unwrap();
            assert_eq!(run.row.stop_reason, "converged");
            assert!(run.row.iterations <= 96);
        }
    }

    #[test]
    fn dp_runs_write_consistent_files() {
        let c = small(GenKind::ProductBernoulli, Algorithm::DpMmeb);
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&c, dir.path()).unwrap();
        let back = read_summary(&dir.path().join(SUMMARY_FILE)).unwrap();
        assert_eq!(back, report.rows);
        let run = run_seed(&c, 1).unwrap();
        let events: u64 = run.trace.iter().map(TraceRecord::noise_events).sum();
        assert_eq!(events, run.ledger.as_ref().unwrap().used_queries());
        assert!(run.row.private);
    }

    #[test]
    fn driver_and_init_algorithms_run() {
        for alg in [Algorithm::DpMeb, Algorithm::GoodCenter, Algorithm::LdpGoodCenter] {
            let c = small(GenKind::ConditionalGaussian, alg);
            let run = run_seed(&c, 4).unwrap();
            assert!(run.ledger.unwrap().spent() <= c.effective_rho() * (1.0 + 1e-12));
        }
        let mut c = small(GenKind::SphericalGaussian, Algorithm::DpMeb);
        c.r_mode = RMode::Searched;
        let run = run_seed(&c, 5).unwrap();
        assert!((run.ledger.unwrap().spent() - c.effective_rho()).abs() < 1e-12 * c.effective_rho());
    }
}
