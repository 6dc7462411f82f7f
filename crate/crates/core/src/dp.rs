//! Curator-model private solver and its radius-search driver, both ρ-zCDP.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::geometry::{count_outside, distance, scan_outside, Ball, Dataset, Point};
use crate::meb::{
    check_gamma, check_positive, grid_radius, max_search_calls, nominal_search_rounds, radius_grid_top,
    radius_search, SolveConfig,
};
use crate::privacy::{gaussian_scalar, BudgetLedger, PrivacyBudget, Substreams};
use crate::trace::{StopReason, TraceRecord};

/// Inputs of a single private solver call at a fixed candidate radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpSolveParams {
    pub gamma: f64,
    pub beta: f64,
    pub rho: f64,
    /// Candidate radius.
    pub r: f64,
    pub theta0: Point,
    pub seed: u64,
}

impl DpSolveParams {
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        check_beta(self.beta)?;
        PrivacyBudget::new(self.rho)?;
        check_positive("r", self.r)?;
        Ok(())
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(domain(format!("beta must lie in (0, 1), got {beta}")));
    }
    Ok(beta)
}

/// Derived constants of one solver call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpSchedule {
    /// Number of repetitions `R = ⌈log_{8/7}(1/β)⌉`.
    #[serde(rename = "R")]
    pub reps: usize,
    /// Iterations per repetition `T = ⌈(4096/γ²) ln(484/γ²)⌉`.
    #[serde(rename = "T")]
    pub iters: usize,
    pub beta0: f64,
    pub sigma_count2: f64,
    pub sigma_sum2: f64,
    /// In-loop gate on the noisy uncovered count.
    pub threshold: f64,
    /// End-of-repetition gate on the noisy count outside `(1+γ) r`.
    pub final_gate: f64,
    /// zCDP charge of one count query.
    pub count_rho: f64,
    /// zCDP charge of one sum query.
    pub sum_rho: f64,
    /// Bound on the uncovered count of a returned center, `threshold + final_gate`.
    pub utility_bound: f64,
}

/// `⌈log_{8/7}(1/β)⌉`.
pub fn repetitions(beta: f64) -> Result<usize> {
    let x = (1.0 / check_beta(beta)?).ln() / (8.0f64 / 7.0).ln();
    Ok(((x - 1e-12).ceil() as usize).max(1))
}

/// `⌈(4096/γ²) ln(484/γ²)⌉`.
pub fn dp_iters(gamma: f64) -> Result<usize> {
    let g2 = check_gamma(gamma)?.powi(2);
    Ok(((4096.0 / g2) * (484.0 / g2).ln()).ceil() as usize)
}

/// Constants of the curator-model solver at radius `r` in dimension `d`.
pub fn dp_schedule(gamma: f64, beta: f64, rho: f64, r: f64, d: usize) -> Result<DpSchedule> {
    PrivacyBudget::new(rho)?;
    check_positive("r", r)?;
    if d == 0 {
        return Err(domain("dimension must be positive"));
    }
    let reps = repetitions(beta)?;
    let iters = dp_iters(gamma)?;
    let (rf, tf, df) = (reps as f64, iters as f64, d as f64);
    let beta0 = 1.0 / (16.0 * rf * tf);
    let threshold = 88.0 * (rf * tf / rho).sqrt() * (df.sqrt() + (2.0 * (4.0 * rf * tf / beta0).ln()).sqrt());
    let final_gate = final_gate_value(rf, tf, beta0, rho, 1.0);
    Ok(DpSchedule {
        reps,
        iters,
        beta0,
        sigma_count2: rf * (tf + 1.0) / rho,
        sigma_sum2: rf * tf * (88.0 * r).powi(2) / rho,
        threshold,
        final_gate,
        count_rho: rho / (2.0 * rf * (tf + 1.0)),
        sum_rho: rho / (2.0 * rf * tf),
        utility_bound: threshold + final_gate,
    })
}

/// `√(2 n R(T+1) ln(4R(T+1)/β₀) / ρ)`.
pub(crate) fn final_gate_value(rf: f64, tf: f64, beta0: f64, rho: f64, n: f64) -> f64 {
    let rt1 = rf * (tf + 1.0);
    (2.0 * n * rt1 * (4.0 * rt1 / beta0).ln() / rho).sqrt()
}

/// Harness and test controls shared by the private solvers.
///
/// Everything defaults to the faithful algorithm. Disabling noise marks the
/// ledger non-private; a threshold override alone does not.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Replaces the `γ²/2048` step coefficient.
    pub step_scale: Option<f64>,
    /// Stops after this many iterations in total.
    pub iter_cap: Option<usize>,
    /// Replaces the in-loop gate.
    pub threshold_override: Option<f64>,
    /// Known optimum, used for `dist_to_opt` in traces.
    pub oracle: Option<Ball>,
    /// Stops once within `γ r_opt` of the oracle center.
    pub halt_on_converged: bool,
    pub noise_disabled: bool,
    pub timing: bool,
}

impl RunOptions {
    pub fn is_harness(&self) -> bool {
        self.step_scale.is_some()
            || self.iter_cap.is_some()
            || self.threshold_override.is_some()
            || self.halt_on_converged
            || self.noise_disabled
    }

    fn validate(&self) -> Result<()> {
        if let Some(s) = self.step_scale {
            check_positive("step_scale", s)?;
        }
        if let Some(t) = self.threshold_override {
            check_positive("threshold_override", t)?;
        }
        if self.iter_cap == Some(0) {
            return Err(domain("iter_cap must be positive"));
        }
        if self.halt_on_converged && self.oracle.is_none() {
            return Err(domain("halt_on_converged requires an oracle"));
        }
        Ok(())
    }
}

/// Result of one private solver call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpOutcome {
    /// `None` encodes ⊥.
    pub theta: Option<Point>,
    pub stop_reason: StopReason,
    pub trace: Vec<TraceRecord>,
    pub ledger: BudgetLedger,
    pub schedule: DpSchedule,
    pub reps_run: usize,
    /// Loop iterations executed across all repetitions, final checks excluded.
    pub iterations: usize,
    pub harness_mode: bool,
}

/// Answers to one round of queries.
pub(crate) struct Round {
    pub true_count: usize,
    pub noisy_count: f64,
    /// Present when a noisy displacement sum was released.
    pub noisy_sum: Option<Vec<f64>>,
}

/// Source of noisy answers; the curator and local models differ only here.
pub(crate) trait Mechanism {
    /// Count of points outside `B(θ, r)`, plus the displacement sum when the
    /// mechanism releases one (the curator only does so once `noisy ≥ gate`).
    fn step_round(&mut self, theta: &[f64], r: f64, rep: usize, iter: usize, gate: f64) -> Round;
    /// Count-only round at radius `radius`.
    fn final_round(&mut self, theta: &[f64], radius: f64, rep: usize, iter: usize) -> Round;
    /// Noise-free count, for telemetry only.
    fn true_count(&self, theta: &[f64], r: f64) -> usize;
}

/// Ledger with every query of the schedule committed up front.
pub fn precommitted_ledger(rho: f64, schedule: &DpSchedule) -> Result<BudgetLedger> {
    let mut ledger = BudgetLedger::new(PrivacyBudget::new(rho)?);
    for k in 0..schedule.reps {
        ledger.charge_many(format!("rep{k}/count"), schedule.count_rho, schedule.iters as u64 + 1)?;
        ledger.charge_many(format!("rep{k}/sum"), schedule.sum_rho, schedule.iters as u64)?;
    }
    Ok(ledger)
}

pub(crate) fn run_engine<M: Mechanism>(
    mech: &mut M,
    params: &DpSolveParams,
    schedule: DpSchedule,
    opts: &RunOptions,
    call: Option<usize>,
) -> Result<DpOutcome> {
    opts.validate()?;
    let mut ledger = precommitted_ledger(params.rho, &schedule)?;
    if opts.noise_disabled {
        ledger.poison("noise disabled");
    }
    let gamma = params.gamma;
    let r = params.r;
    let step = opts.step_scale.unwrap_or(gamma * gamma / 2048.0);
    let gate = opts.threshold_override.unwrap_or(schedule.threshold);
    let cap = opts.iter_cap.unwrap_or(usize::MAX);
    let start = opts.timing.then(Instant::now);
    let elapsed = || start.map(|s| s.elapsed().as_secs_f64() * 1e3);
    let dist = |theta: &[f64]| opts.oracle.as_ref().map(|b| distance(theta, &b.center));

    let mut trace = Vec::new();
    let mut iterations = 0usize;
    let mut theta = params.theta0.to_vec();

    let finish = |theta: Option<Vec<f64>>, stop_reason, trace, ledger, reps_run, iterations| DpOutcome {
        theta: theta.map(Point::from_vec_unchecked),
        stop_reason,
        trace,
        ledger,
        schedule: schedule.clone(),
        reps_run,
        iterations,
        harness_mode: opts.is_harness(),
    };

    for rep in 0..schedule.reps {
        let count_line = 2 * rep;
        let sum_line = 2 * rep + 1;
        theta.copy_from_slice(&params.theta0);
        for t in 0..schedule.iters {
            if iterations >= cap {
                return Ok(finish(Some(theta), StopReason::IterationCap, trace, ledger, rep + 1, iterations));
            }
            if opts.halt_on_converged {
                let opt = opts.oracle.as_ref().expect("validated");
                let d = distance(&theta, &opt.center);
                if d <= gamma * opt.radius {
                    trace.push(TraceRecord {
                        call,
                        rep,
                        iter: t,
                        dist_to_opt: Some(d),
                        n_uncovered_true: mech.true_count(&theta, r),
                        n_uncovered_noisy: None,
                        radius: r,
                        stepped: false,
                        sum_released: false,
                        wall_ms: elapsed(),
                    });
                    return Ok(finish(Some(theta), StopReason::Converged, trace, ledger, rep + 1, iterations));
                }
            }
            iterations += 1;
            let round = mech.step_round(&theta, r, rep, t, gate);
            ledger.mark_used(count_line);
            let sum_released = round.noisy_sum.is_some();
            if sum_released {
                ledger.mark_used(sum_line);
            }
            let stepped = round.noisy_count >= gate;
            let mut record = TraceRecord {
                call,
                rep,
                iter: t,
                dist_to_opt: dist(&theta),
                n_uncovered_true: round.true_count,
                n_uncovered_noisy: Some(round.noisy_count),
                radius: r,
                stepped,
                sum_released,
                wall_ms: None,
            };
            if !stepped {
                record.wall_ms = elapsed();
                trace.push(record);
                return Ok(finish(Some(theta), StopReason::BelowThreshold, trace, ledger, rep + 1, iterations));
            }
            let sum = round.noisy_sum.expect("a stepping round releases its sum");
            let coef = step / round.noisy_count;
            for (th, s) in theta.iter_mut().zip(&sum) {
                *th += coef * s;
            }
            record.wall_ms = elapsed();
            trace.push(record);
        }
        let radius = (1.0 + gamma) * r;
        let round = mech.final_round(&theta, radius, rep, schedule.iters);
        ledger.mark_used(count_line);
        let passed = round.noisy_count <= schedule.final_gate;
        trace.push(TraceRecord {
            call,
            rep,
            iter: schedule.iters,
            dist_to_opt: dist(&theta),
            n_uncovered_true: round.true_count,
            n_uncovered_noisy: Some(round.noisy_count),
            radius,
            stepped: false,
            sum_released: false,
            wall_ms: elapsed(),
        });
        if passed {
            return Ok(finish(Some(theta), StopReason::FinalGatePassed, trace, ledger, rep + 1, iterations));
        }
    }
    Ok(finish(None, StopReason::AllRepsExhausted, trace, ledger, schedule.reps, iterations))
}

struct Curator<'a> {
    p: &'a Dataset,
    streams: Substreams,
    sigma_count2: f64,
    sigma_sum2: f64,
    noise: bool,
}

const KIND_COUNT: u64 = 0;
const KIND_SUM: u64 = 1;

impl Curator<'_> {
    fn noisy_count(&self, true_count: usize, rep: usize, iter: usize) -> f64 {
        let mut n = true_count as f64;
        if self.noise {
            let mut rng = self.streams.stream(&[rep as u64, iter as u64, KIND_COUNT]);
            n += gaussian_scalar(self.sigma_count2, &mut rng);
        }
        n
    }
}

impl Mechanism for Curator<'_> {
    fn step_round(&mut self, theta: &[f64], r: f64, rep: usize, iter: usize, gate: f64) -> Round {
        let scan = scan_outside(self.p, theta, r);
        let noisy_count = self.noisy_count(scan.count, rep, iter);
        let noisy_sum = (noisy_count >= gate).then(|| {
            let mut sum = scan.displacement_sum;
            if self.noise {
                let mut rng = self.streams.stream(&[rep as u64, iter as u64, KIND_SUM]);
                let sd = self.sigma_sum2.sqrt();
                for s in &mut sum {
                    *s += gaussian_scalar(1.0, &mut rng) * sd;
                }
            }
            sum
        });
        Round {
            true_count: scan.count,
            noisy_count,
            noisy_sum,
        }
    }

    fn final_round(&mut self, theta: &[f64], radius: f64, rep: usize, iter: usize) -> Round {
        let true_count = count_outside(self.p, theta, radius);
        Round {
            true_count,
            noisy_count: self.noisy_count(true_count, rep, iter),
            noisy_sum: None,
        }
    }

    fn true_count(&self, theta: &[f64], r: f64) -> usize {
        count_outside(self.p, theta, r)
    }
}

/// Curator-model solver at candidate radius `params.r`; `p` should already
/// lie within `B(θ₀, 11 r₀)`.
pub fn dp_mmeb(p: &Dataset, params: &DpSolveParams) -> Result<DpOutcome> {
    dp_mmeb_with(p, params, &RunOptions::default())
}

pub fn dp_mmeb_with(p: &Dataset, params: &DpSolveParams, opts: &RunOptions) -> Result<DpOutcome> {
    dp_mmeb_call(p, params, opts, None)
}

pub(crate) fn dp_mmeb_call(
    p: &Dataset,
    params: &DpSolveParams,
    opts: &RunOptions,
    call: Option<usize>,
) -> Result<DpOutcome> {
    params.validate()?;
    p.check_nonempty()?;
    p.check_dim(params.theta0.dim())?;
    let schedule = dp_schedule(params.gamma, params.beta, params.rho, params.r, p.dim())?;
    let mut mech = Curator {
        p,
        streams: Substreams::new(params.seed),
        sigma_count2: schedule.sigma_count2,
        sigma_sum2: schedule.sigma_sum2,
        noise: !opts.noise_disabled,
    };
    run_engine(&mut mech, params, schedule, opts, call)
}

/// Summary of one inner call made by a driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerCall {
    pub call: usize,
    pub index: usize,
    pub radius: f64,
    pub stop_reason: StopReason,
    pub theta: Option<Point>,
    pub reps_run: usize,
    pub iterations: usize,
}

/// Result of a private radius-search driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpMebResult {
    /// `None` when every radius guess returned ⊥.
    pub ball: Option<Ball>,
    pub accepted_index: Option<usize>,
    /// Indices removed by the initial clipping; they stay uncovered.
    pub clipped: Vec<usize>,
    pub calls: Vec<InnerCall>,
    pub trace: Vec<TraceRecord>,
    pub ledger: BudgetLedger,
    /// Worst-case number of inner calls; each gets `ρ/slots` and `β/slots`.
    pub slots: usize,
    /// `⌈log₂(log_{1+γ} 4)⌉`, reported for reference.
    pub nominal_rounds: usize,
}

impl DpMebResult {
    pub fn failed(&self) -> bool {
        self.ball.is_none()
    }
}

/// Budget share of each inner call of a driver at approximation `gamma`.
pub fn search_slots(gamma: f64) -> Result<usize> {
    Ok(max_search_calls(radius_grid_top(gamma)?))
}

/// Drops the points outside `B(θ₀, 11 r₀)`; returns the kept set and the dropped indices.
pub fn clip_to_start(p: &Dataset, cfg: &SolveConfig) -> Result<(Dataset, Vec<usize>)> {
    p.check_dim(cfg.theta0.dim())?;
    let mut kept = p.clone();
    let limit2 = (11.0 * cfg.r0).powi(2);
    let theta0 = cfg.theta0.clone();
    let dropped = kept.retain_points(|x| crate::geometry::dist2(x, &theta0) <= limit2);
    Ok((kept, dropped))
}

/// Shared driver: radius search with a private inner solver, acceptance on θ ≠ ⊥.
pub(crate) fn private_search<F, S>(
    cfg: &SolveConfig,
    beta: f64,
    rho: f64,
    seed: u64,
    mut inner: F,
    schedule_of: S,
) -> Result<(Option<Ball>, Option<usize>, Vec<InnerCall>, Vec<TraceRecord>, BudgetLedger, usize)>
where
    F: FnMut(&DpSolveParams, usize) -> Result<DpOutcome>,
    S: Fn(&DpSolveParams) -> Result<DpSchedule>,
{
    cfg.validate()?;
    check_beta(beta)?;
    let total = PrivacyBudget::new(rho)?;
    let slots = search_slots(cfg.gamma)?;
    let rho_i = rho / slots as f64;
    let beta_i = beta / slots as f64;
    let streams = Substreams::new(seed);
    let params_for = |call: usize, radius: f64| DpSolveParams {
        gamma: cfg.gamma,
        beta: beta_i,
        rho: rho_i,
        r: radius,
        theta0: cfg.theta0.clone(),
        seed: streams.child(&[call as u64]).seed(),
    };

    let mut ledger = BudgetLedger::new(total);
    let mut calls = Vec::new();
    let mut trace = Vec::new();
    let search = radius_search(
        cfg,
        |probe| {
            let params = params_for(probe.call, probe.radius);
            let out = inner(&params, probe.call)?;
            ledger.absorb(&format!("call{}/", probe.call), &out.ledger)?;
            calls.push(InnerCall {
                call: probe.call,
                index: probe.index,
                radius: probe.radius,
                stop_reason: out.stop_reason,
                theta: out.theta.clone(),
                reps_run: out.reps_run,
                iterations: out.iterations,
            });
            trace.extend(out.trace);
            Ok(out.theta)
        },
        |_, _| true,
    )?;
    for call in search.calls..slots {
        let params = params_for(call, grid_radius(cfg.gamma, cfg.r0, 0));
        let schedule = schedule_of(&params)?;
        ledger.absorb(&format!("call{call}/"), &precommitted_ledger(rho_i, &schedule)?)?;
    }
    Ok((search.ball, search.accepted_index, calls, trace, ledger, slots))
}

/// Curator-model driver: clips once to `B(θ₀, 11 r₀)`, then binary-searches
/// the radius with [`dp_mmeb`] as the inner solver.
pub fn dp_meb(p: &Dataset, cfg: &SolveConfig, beta: f64, rho: f64, seed: u64) -> Result<DpMebResult> {
    dp_meb_with(p, cfg, beta, rho, seed, &RunOptions::default())
}

pub fn dp_meb_with(
    p: &Dataset,
    cfg: &SolveConfig,
    beta: f64,
    rho: f64,
    seed: u64,
    opts: &RunOptions,
) -> Result<DpMebResult> {
    p.check_nonempty()?;
    let (clipped_set, clipped) = clip_to_start(p, cfg)?;
    let opts = merged_options(cfg, opts);
    let d = p.dim();
    if clipped_set.is_empty() {
        return Err(domain("every point lies outside B(theta0, 11 r0)"));
    }
    let (ball, accepted_index, calls, trace, ledger, slots) = private_search(
        cfg,
        beta,
        rho,
        seed,
        |params, call| dp_mmeb_call(&clipped_set, params, &opts, Some(call)),
        |params| dp_schedule(params.gamma, params.beta, params.rho, params.r, d),
    )?;
    Ok(DpMebResult {
        ball,
        accepted_index,
        clipped,
        calls,
        trace,
        ledger,
        slots,
        nominal_rounds: nominal_search_rounds(cfg.gamma)?,
    })
}

pub(crate) fn merged_options(cfg: &SolveConfig, opts: &RunOptions) -> RunOptions {
    let mut opts = opts.clone();
    opts.step_scale = opts.step_scale.or(cfg.step_scale);
    opts.iter_cap = opts.iter_cap.or(cfg.iter_cap);
    opts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::uncovered_mean;
    use crate::meb::{mmeb_run, MmebOptions};

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1.0)
    }

    #[test]
    fn schedule_values() {
        assert_eq!(repetitions(0.05).unwrap(), 23);
        assert_eq!(dp_iters(0.2).unwrap(), 962_659);
        let s = dp_schedule(0.2, 0.05, 0.3, 1.0, 10).unwrap();
        assert_eq!((s.reps, s.iters), (23, 962_659));
        let rt = 23.0 * 962_659.0;
        assert!(close(s.beta0, 1.0 / (16.0 * rt), 1e-15));
        assert!(close(s.sigma_count2, 23.0 * 962_660.0 / 0.3, 1e-15));
        assert!(close(s.sigma_sum2, rt * 88.0 * 88.0 / 0.3, 1e-15));
        let total = s.reps as f64 * ((s.iters + 1) as f64 * s.count_rho + s.iters as f64 * s.sum_rho);
        assert!(close(total, 0.3, 1e-12));
    }

    #[test]
    fn toy_threshold() {
        // R = T = 1 with rho = d = 1 gives beta0 = 1/16.
        let (rf, tf, rho) = (1.0f64, 1.0f64, 1.0f64);
        let beta0 = 1.0 / 16.0;
        let gate = 88.0 * (rf * tf / rho).sqrt() * (1.0 + (2.0 * (4.0 * rf * tf / beta0).ln()).sqrt());
        assert!((gate - 341.79).abs() < 0.01, "{gate}");
    }

    fn toy_params(n_points: usize) -> (Dataset, DpSolveParams) {
        let rows: Vec<[f64; 2]> = (0..n_points)
            .map(|i| {
                let a = i as f64 * 0.7;
                [3.0 + a.cos(), -1.0 + a.sin()]
            })
            .collect();
        let p = Dataset::from_rows(&rows).unwrap();
        let params = DpSolveParams {
            gamma: 0.5,
            beta: 0.5,
            rho: 1.0,
            r: 1.0,
            theta0: Point::origin(2),
            seed: 9,
        };
        (p, params)
    }

    #[test]
    fn tiny_dataset_returns_start() {
        let (p, params) = toy_params(20);
        let out = dp_mmeb(&p, &params).unwrap();
        assert_eq!(out.stop_reason, StopReason::BelowThreshold);
        assert_eq!(out.theta.as_ref().unwrap(), &params.theta0);
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.ledger.used_queries(), 1);
        assert!(close(out.ledger.spent(), params.rho, 1e-12));
    }

    #[test]
    fn noiseless_matches_exact_recursion() {
        let (p, params) = toy_params(50);
        let opts = RunOptions {
            threshold_override: Some(1.0),
            noise_disabled: true,
            iter_cap: Some(300),
            ..RunOptions::default()
        };
        let out = dp_mmeb_with(&p, &params, &opts).unwrap();
        assert!(!out.ledger.is_private());
        let step = params.gamma * params.gamma / 2048.0;
        let mut expected = Vec::new();
        mmeb_run(
            &p,
            0.05,
            params.r,
            &params.theta0,
            MmebOptions {
                step_scale: Some(step),
                iter_cap: Some(300),
                halt_within: None,
            },
            |e| expected.push(e.theta_after.to_vec()),
        )
        .unwrap();
        let mut theta = params.theta0.to_vec();
        let mut k = 0;
        for rec in out.trace.iter().filter(|r| r.stepped) {
            let s = uncovered_mean(&p, &theta, params.r).unwrap();
            assert_eq!(rec.n_uncovered_true, s.count);
            let m = s.mean.unwrap();
            for (t, v) in theta.iter_mut().zip(m.iter()) {
                *t -= step * (*t - v);
            }
            for (a, b) in theta.iter().zip(&expected[k]) {
                assert!((a - b).abs() < 1e-12);
            }
            k += 1;
        }
        assert_eq!(k, 300);
        for (a, b) in out.theta.unwrap().iter().zip(&theta) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(out.stop_reason, StopReason::IterationCap);
    }

    #[test]
    fn noiseless_gate_bounds_gap() {
        let (p, mut params) = toy_params(400);
        params.r = 1.3;
        let opts = RunOptions {
            threshold_override: Some(25.0),
            noise_disabled: true,
            step_scale: Some(0.02),
            ..RunOptions::default()
        };
        let out = dp_mmeb_with(&p, &params, &opts).unwrap();
        assert_eq!(out.stop_reason, StopReason::BelowThreshold);
        let theta = out.theta.unwrap();
        assert!(count_outside(&p, &theta, params.r) <= 25);
    }

    #[test]
    fn update_magnitude_bounded_without_noise() {
        let (p, params) = toy_params(300);
        let opts = RunOptions {
            threshold_override: Some(1.0),
            noise_disabled: true,
            iter_cap: Some(50),
            ..RunOptions::default()
        };
        let out = dp_mmeb_with(&p, &params, &opts).unwrap();
        let step = params.gamma * params.gamma / 2048.0;
        let mut prev = params.theta0.to_vec();
        let mut theta = prev.clone();
        for rec in out.trace.iter().filter(|r| r.stepped) {
            let scan = scan_outside(&p, &theta, params.r);
            let mu: Vec<f64> = scan.displacement_sum.iter().map(|s| s / scan.count as f64).collect();
            assert!(crate::geometry::norm2(&mu).sqrt() <= 44.0 * params.r);
            for (t, m) in theta.iter_mut().zip(&mu) {
                *t += step * m;
            }
            assert!(distance(&theta, &prev) <= step * 44.0 * params.r + 1e-12);
            prev.copy_from_slice(&theta);
            let _ = rec;
        }
    }

    #[test]
    fn trace_is_ordered_and_matches_ledger() {
        let (p, mut params) = toy_params(200);
        params.rho = 1e9;
        let opts = RunOptions {
            step_scale: Some(0.05),
            iter_cap: Some(400),
            ..RunOptions::default()
        };
        let out = dp_mmeb_with(&p, &params, &opts).unwrap();
        let events: u64 = out.trace.iter().map(TraceRecord::noise_events).sum();
        assert_eq!(events, out.ledger.used_queries());
        for w in out.trace.windows(2) {
            assert!((w[0].rep, w[0].iter) < (w[1].rep, w[1].iter));
        }
    }

    #[test]
    fn same_seed_same_run() {
        let (p, mut params) = toy_params(200);
        params.rho = 1e9;
        let opts = RunOptions {
            step_scale: Some(0.05),
            iter_cap: Some(100),
            ..RunOptions::default()
        };
        let a = dp_mmeb_with(&p, &params, &opts).unwrap();
        let b = dp_mmeb_with(&p, &params, &opts).unwrap();
        assert_eq!(a, b);
        params.seed += 1;
        let c = dp_mmeb_with(&p, &params, &opts).unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn driver_on_a_single_location() {
        let p = Dataset::from_rows(&vec![[2.0, 2.0]; 100]).unwrap();
        let cfg = SolveConfig::new(0.2, 1.0, Point::new(vec![2.0, 2.0]).unwrap()).unwrap();
        let res = dp_meb(&p, &cfg, 0.1, 1.0, 4).unwrap();
        let ball = res.ball.unwrap();
        assert!((ball.radius - 1.2 / 4.0).abs() < 1e-15);
        assert!(ball.contains(&[2.0, 2.0]));
        assert_eq!(res.slots, 4);
        assert_eq!(res.nominal_rounds, 3);
        assert!(close(res.ledger.spent(), 1.0, 1e-12));
        assert_eq!(res.calls.len(), 4);
    }

    #[test]
    fn driver_clips_far_points() {
        let mut rows = vec![[0.0, 0.0]; 30];
        rows.push([100.0, 0.0]);
        let p = Dataset::from_rows(&rows).unwrap();
        let cfg = SolveConfig::new(0.3, 1.0, Point::origin(2)).unwrap();
        let res = dp_meb(&p, &cfg, 0.2, 1.0, 1).unwrap();
        assert_eq!(res.clipped, vec![30]);
        assert!(close(res.ledger.spent(), 1.0, 1e-12));
    }
}
