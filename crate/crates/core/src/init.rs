//! Private initialisation: radius-halving search for a starting ball, in the
//! curator and local models.

use serde::{Deserialize, Serialize};

use crate::dp::check_beta;
use crate::error::{domain, Error, Result};
use crate::geometry::{count_outside, dist2, project_onto_ball, Ball, Dataset, Point};
use crate::meb::check_positive;
use crate::privacy::{gaussian_scalar, BudgetLedger, PrivacyBudget, Substreams};

/// Grid description used for the grid convenience constructor and snapping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Points are assumed to lie in `[-bound, bound]^d`.
    pub bound: f64,
    /// Grid step `τ`.
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitParams {
    pub r_max: f64,
    pub r_min: f64,
    pub theta_start: Point,
    pub beta: f64,
    pub rho: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grid: Option<Grid>,
    /// When the search runs out of rounds, snap the center to the nearest grid point.
    #[serde(default)]
    pub snap_to_grid: bool,
}

impl InitParams {
    pub fn new(r_max: f64, r_min: f64, theta_start: Point, beta: f64, rho: f64, seed: u64) -> Result<Self> {
        let p = Self {
            r_max,
            r_min,
            theta_start,
            beta,
            rho,
            seed,
            grid: None,
            snap_to_grid: false,
        };
        p.validate()?;
        Ok(p)
    }

    /// Defaults for points on a `τ`-grid inside `[-B, B]^d`: start at the
    /// origin with `R_max = B√d` and `r_min = τ/2`.
    pub fn for_grid(bound: f64, step: f64, d: usize, beta: f64, rho: f64, seed: u64) -> Result<Self> {
        check_positive("bound", bound)?;
        check_positive("step", step)?;
        if d == 0 {
            return Err(domain("dimension must be positive"));
        }
        let mut p = Self::new(bound * (d as f64).sqrt(), step / 2.0, Point::origin(d), beta, rho, seed)?;
        p.grid = Some(Grid { bound, step });
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("r_min", self.r_min)?;
        check_positive("r_max", self.r_max)?;
        if self.r_max < self.r_min {
            return Err(domain(format!("r_max {} is below r_min {}", self.r_max, self.r_min)));
        }
        check_beta(self.beta)?;
        PrivacyBudget::new(self.rho)?;
        if self.snap_to_grid && self.grid.is_none() {
            return Err(domain("snapping requires a grid"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSchedule {
    /// Rounds `T = ⌈log₂(R_max/r_min)⌉ + 1`.
    #[serde(rename = "T")]
    pub rounds: usize,
    /// Count gate `X`.
    #[serde(rename = "X")]
    pub x: f64,
    /// Base variance `T/ρ` of both queries.
    pub sigma2: f64,
    /// The two size requirements of the utility guarantee.
    pub n_required: [f64; 2],
    /// Bound on the number of points the search may discard or move.
    pub removal_bound: f64,
}

fn rounds_for(r_max: f64, r_min: f64) -> usize {
    ((r_max / r_min).log2() - 1e-12).ceil().max(0.0) as usize + 1
}

fn log_term(t: f64, beta: f64) -> f64 {
    (4.0 * t / beta).ln()
}

/// Curator schedule.
pub fn init_schedule(params: &InitParams, d: usize) -> Result<InitSchedule> {
    params.validate()?;
    let rounds = rounds_for(params.r_max, params.r_min);
    let (t, rho) = (rounds as f64, params.rho);
    let l = log_term(t, params.beta);
    let x = (2.0 * t * l / rho).sqrt();
    Ok(InitSchedule {
        rounds,
        x,
        sigma2: t / rho,
        n_required: [16.0 * t * x, 16.0 * (t / rho).sqrt() * ((d as f64).sqrt() + (2.0 * l).sqrt())],
        removal_bound: 2.0 * x * t,
    })
}

/// Local schedule: `X = √(2nT ln(4T/β)/ρ)`.
pub fn ldp_init_schedule(params: &InitParams, d: usize, n: usize) -> Result<InitSchedule> {
    let mut s = init_schedule(params, d)?;
    let (t, nf, rho) = (s.rounds as f64, n as f64, params.rho);
    let l = log_term(t, params.beta);
    s.x = (2.0 * nf * t * l / rho).sqrt();
    s.n_required = [16.0 * t * s.x, 16.0 * (nf * t / rho).sqrt() * ((d as f64).sqrt() + (2.0 * l).sqrt())];
    s.removal_bound = 2.0 * t * (2.0 * t * l / rho).sqrt();
    Ok(s)
}

/// Telemetry of one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitRound {
    pub round: usize,
    /// Center `θ^t` of the round's ball.
    pub center: Vec<f64>,
    pub radius: f64,
    /// Nominal head count `n − 2Xt` (curator only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_cur: Option<f64>,
    /// True size of the surviving set (curator) or of the whole input (local).
    pub n_true: usize,
    pub outside_true: usize,
    pub outside_noisy: f64,
    pub halted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitOutcome {
    pub ball: Ball,
    /// Curator: points dropped by the restrictions. Local: points moved by
    /// the projection onto the returned ball.
    pub altered: Vec<usize>,
    pub schedule: InitSchedule,
    pub rounds: Vec<InitRound>,
    pub ledger: BudgetLedger,
    /// Unmet size requirements, as human-readable notes.
    pub warnings: Vec<String>,
    /// The search ran out of rounds instead of halting on the gate.
    pub exhausted: bool,
    pub snapped: bool,
    /// Distance bounds `6 r*` and `8 r*` between the returned center and the
    /// MEB center of the surviving set, both as stated for the local variant.
    pub center_bounds: [f64; 2],
}

fn check_contained(p: &Dataset, params: &InitParams) -> Result<()> {
    p.check_nonempty()?;
    p.check_dim(params.theta_start.dim())?;
    let r2 = params.r_max * params.r_max;
    let bad: Vec<usize> = p
        .iter()
        .enumerate()
        .filter(|(_, x)| dist2(x, &params.theta_start) > r2)
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(Error::Precondition {
            message: format!("{} points lie outside B(theta_start, r_max)", bad.len()),
            indices: bad,
        });
    }
    Ok(())
}

fn size_warnings(s: &InitSchedule, n: usize) -> Vec<String> {
    s.n_required
        .iter()
        .filter(|&&req| (n as f64) < req)
        .map(|req| format!("n = {n} is below the required {req:.1}"))
        .collect()
}

fn init_ledger(rho: f64, rounds: usize) -> Result<BudgetLedger> {
    let mut ledger = BudgetLedger::new(PrivacyBudget::new(rho)?);
    let each = rho / (2.0 * rounds as f64);
    ledger.charge_many("init/sum", each, rounds as u64)?;
    ledger.charge_many("init/count", each, rounds as u64)?;
    Ok(ledger)
}

fn snap(theta: &[f64], grid: &Grid) -> Vec<f64> {
    theta
        .iter()
        .map(|v| ((v / grid.step).round() * grid.step).clamp(-grid.bound, grid.bound))
        .collect()
}

const KIND_SUM: u64 = 0;
const KIND_COUNT: u64 = 1;

/// Curator-model initialisation.
pub fn good_center(p: &Dataset, params: &InitParams) -> Result<InitOutcome> {
    check_contained(p, params)?;
    let d = p.dim();
    let s = init_schedule(params, d)?;
    let warnings = size_warnings(&s, p.len());
    let mut ledger = init_ledger(params.rho, s.rounds)?;
    let streams = Substreams::new(params.seed);

    let mut alive = vec![true; p.len()];
    let mut theta = params.theta_start.to_vec();
    let mut r_cur = params.r_max;
    let mut n_cur = p.len() as f64;
    let mut rounds = Vec::new();

    for t in 0..s.rounds {
        let r2 = r_cur * r_cur;
        let mut sum = vec![0.0; d];
        let mut n_true = 0usize;
        for (a, x) in alive.iter_mut().zip(p.iter()) {
            if *a && dist2(x, &theta) > r2 {
                *a = false;
            }
            if *a {
                n_true += 1;
                for (s, v) in sum.iter_mut().zip(x) {
                    *s += v;
                }
            }
        }
        if !(n_cur > 0.0) {
            return Err(domain(format!("nominal head count fell to {n_cur:.1}; the dataset is too small")));
        }
        let mut rng = streams.stream(&[t as u64, KIND_SUM]);
        let sum_var = 4.0 * r2 * s.sigma2;
        let mu: Vec<f64> = sum.iter().map(|v| (v + gaussian_scalar(sum_var, &mut rng)) / n_cur).collect();
        ledger.mark_used(0);

        let half2 = r2 / 4.0;
        let outside_true = p
            .iter()
            .zip(&alive)
            .filter(|(x, a)| **a && dist2(x, &mu) > half2)
            .count();
        let mut rng = streams.stream(&[t as u64, KIND_COUNT]);
        let outside_noisy = outside_true as f64 + gaussian_scalar(s.sigma2, &mut rng);
        ledger.mark_used(1);
        let halted = outside_noisy >= s.x;
        rounds.push(InitRound {
            round: t,
            center: theta.clone(),
            radius: r_cur,
            n_cur: Some(n_cur),
            n_true,
            outside_true,
            outside_noisy,
            halted,
        });
        if halted {
            return Ok(curator_outcome(&alive, Ball::new(Point::new(theta)?, r_cur)?, s, rounds, ledger, warnings, false, false));
        }
        r_cur *= 0.5;
        n_cur -= 2.0 * s.x;
        theta = mu;
    }
    let snapped = params.snap_to_grid;
    if let (true, Some(grid)) = (snapped, params.grid.as_ref()) {
        theta = snap(&theta, grid);
    }
    let ball = Ball::new(Point::new(theta)?, r_cur)?;
    Ok(curator_outcome(&alive, ball, s, rounds, ledger, warnings, true, snapped))
}

#[allow(clippy::too_many_arguments)]
fn curator_outcome(
    alive: &[bool],
    ball: Ball,
    schedule: InitSchedule,
    rounds: Vec<InitRound>,
    ledger: BudgetLedger,
    warnings: Vec<String>,
    exhausted: bool,
    snapped: bool,
) -> InitOutcome {
    let altered = alive.iter().enumerate().filter(|(_, a)| !**a).map(|(i, _)| i).collect();
    let r = ball.radius;
    InitOutcome {
        ball,
        altered,
        schedule,
        rounds,
        ledger,
        warnings,
        exhausted,
        snapped,
        center_bounds: [6.0 * r, 8.0 * r],
    }
}

/// Local-model initialisation; each point is one user.
pub fn ldp_good_center(p: &Dataset, params: &InitParams) -> Result<InitOutcome> {
    check_contained(p, params)?;
    let (d, n) = (p.dim(), p.len());
    let s = ldp_init_schedule(params, d, n)?;
    let warnings = size_warnings(&s, n);
    let mut ledger = init_ledger(params.rho, s.rounds)?;
    let streams = Substreams::new(params.seed);
    let nf = n as f64;

    let mut theta = params.theta_start.to_vec();
    let mut r_cur = params.r_max;
    let mut rounds = Vec::new();
    let mut halted_ball = None;

    for t in 0..s.rounds {
        let sum_var = 4.0 * r_cur * r_cur * s.sigma2;
        let mut mu = vec![0.0; d];
        for (u, x) in p.iter().enumerate() {
            let mut rng = streams.stream(&[t as u64, KIND_SUM, u as u64]);
            let y: Vec<f64> = project_onto_ball(x, &theta, r_cur)
                .into_iter()
                .map(|v| v + gaussian_scalar(sum_var, &mut rng))
                .collect();
            for (m, v) in mu.iter_mut().zip(&y) {
                *m += v;
            }
        }
        for m in &mut mu {
            *m /= nf;
        }
        ledger.mark_used(0);

        let half = 0.5 * r_cur;
        let mut outside_noisy = 0.0;
        for (u, x) in p.iter().enumerate() {
            let mut rng = streams.stream(&[t as u64, KIND_COUNT, u as u64]);
            let ind = f64::from(u8::from(dist2(x, &mu) > half * half));
            outside_noisy += ind + gaussian_scalar(s.sigma2, &mut rng);
        }
        ledger.mark_used(1);
        let outside_true = count_outside(p, &mu, half);
        let halted = outside_noisy >= s.x;
        rounds.push(InitRound {
            round: t,
            center: theta.clone(),
            radius: r_cur,
            n_cur: None,
            n_true: n,
            outside_true,
            outside_noisy,
            halted,
        });
        if halted {
            halted_ball = Some(Ball::new(Point::new(theta.clone())?, r_cur)?);
            break;
        }
        r_cur *= 0.5;
        theta = mu;
    }
    let exhausted = halted_ball.is_none();
    let mut snapped = false;
    let ball = match halted_ball {
        Some(b) => b,
        None => {
            if let (true, Some(grid)) = (params.snap_to_grid, params.grid.as_ref()) {
                theta = snap(&theta, grid);
                snapped = true;
            }
            Ball::new(Point::new(theta)?, r_cur)?
        }
    };
    let r2 = ball.radius * ball.radius;
    let altered = p
        .iter()
        .enumerate()
        .filter(|(_, x)| dist2(x, &ball.center) > r2)
        .map(|(i, _)| i)
        .collect();
    let r = ball.radius;
    Ok(InitOutcome {
        ball,
        altered,
        schedule: s,
        rounds,
        ledger,
        warnings,
        exhausted,
        snapped,
        center_bounds: [6.0 * r, 8.0 * r],
    })
}

/// The projected set `{Π_{B(θ*, r*)}(x)}` a local run leaves behind.
pub fn projected_set(p: &Dataset, ball: &Ball) -> Result<Dataset> {
    p.check_dim(ball.dim())?;
    let mut out = Dataset::with_capacity(p.dim(), p.len())?;
    for x in p.iter() {
        out.push(&project_onto_ball(x, &ball.center, ball.radius))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exact_meb;

    #[test]
    fn schedule_values() {
        let p = InitParams::new(16.0, 1.0, Point::origin(2), 0.05, 1.0, 0).unwrap();
        let s = init_schedule(&p, 2).unwrap();
        assert_eq!(s.rounds, 5);
        assert!((s.x - 7.7405).abs() < 1e-4, "{}", s.x);
        assert_eq!(s.sigma2, 5.0);
        let p = InitParams::new(10.0, 1.0, Point::origin(2), 0.05, 1.0, 0).unwrap();
        assert_eq!(init_schedule(&p, 2).unwrap().rounds, 5);
    }

    #[test]
    fn ldp_gate_scales_with_sqrt_n() {
        let p = InitParams::new(16.0, 1.0, Point::origin(2), 0.05, 1.0, 0).unwrap();
        let a = ldp_init_schedule(&p, 2, 1000).unwrap();
        let b = ldp_init_schedule(&p, 2, 2000).unwrap();
        assert!((b.x / a.x - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn precondition_lists_offenders() {
        let p = Dataset::from_rows(&[[0.0, 0.0], [5.0, 0.0], [0.0, -9.0]]).unwrap();
        let params = InitParams::new(4.0, 0.5, Point::origin(2), 0.1, 1.0, 0).unwrap();
        match good_center(&p, &params) {
            Err(Error::Precondition { indices, .. }) => assert_eq!(indices, vec![1, 2]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(ldp_good_center(&p, &params).is_err());
    }

    fn cluster(n: usize, seed: u64) -> Dataset {
        let mut rng = Substreams::new(seed).stream(&[0]);
        let rows: Vec<[f64; 2]> = (0..n)
            .map(|_| [2.0 + 0.3 * gaussian_scalar(1.0, &mut rng), -1.0 + 0.3 * gaussian_scalar(1.0, &mut rng)])
            .collect();
        Dataset::from_rows(&rows).unwrap()
    }

    #[test]
    fn curator_run_is_budgeted_and_halving() {
        let p = cluster(10_000, 1);
        let params = InitParams::new(16.0, 0.25, Point::origin(2), 0.05, 1.0, 3).unwrap();
        let out = good_center(&p, &params).unwrap();
        assert!((out.ledger.spent() - 1.0).abs() < 1e-12);
        for r in &out.rounds {
            assert_eq!(r.radius, 16.0 * 0.5f64.powi(r.round as i32));
        }
        assert!(out.warnings.is_empty(), "{:?}", out.warnings);
        assert!((out.altered.len() as f64) <= out.schedule.removal_bound);
        let survivors: Vec<usize> = (0..p.len()).filter(|&i| out.ball.contains(p.point(i))).collect();
        let opt = exact_meb(&p.select(&survivors)).unwrap();
        assert!(out.ball.radius <= 6.0 * opt.radius);
    }

    #[test]
    fn identical_points_snap_to_grid() {
        let p = Dataset::from_rows(&vec![[1.5, -0.5]; 10_000]).unwrap();
        let mut params = InitParams::for_grid(4.0, 0.5, 2, 0.05, 1.0, 2).unwrap();
        params.snap_to_grid = true;
        let out = good_center(&p, &params).unwrap();
        assert!(out.exhausted && out.snapped);
        assert_eq!(out.ball.center.coords(), &[1.5, -0.5]);
        let r = out.ball.radius;
        assert!(r > params.r_min / 4.0 && r <= params.r_min / 2.0, "{r}");
        assert_eq!(r, params.r_max * 0.5f64.powi(out.schedule.rounds as i32));
        assert!(out.ball.center.distance(&[1.5, -0.5]) <= params.r_min);
    }

    #[test]
    fn ldp_noiseless_mean_of_projections() {
        let p = Dataset::from_rows(&[[0.0, 0.0], [4.0, 0.0], [0.0, 1.0]]).unwrap();
        let params = InitParams::new(4.0, 2.0, Point::origin(2), 0.5, 1e30, 0).unwrap();
        let out = ldp_good_center(&p, &params).unwrap();
        // Noise is negligible at this budget, so round 0 sees the plain mean.
        let first = &out.rounds[0];
        assert_eq!(first.radius, 4.0);
        let mu = [4.0 / 3.0, 1.0 / 3.0];
        let expected = p.iter().filter(|x| dist2(x, &mu) > 4.0).count();
        assert_eq!(first.outside_true, expected);
        assert!((first.outside_noisy - expected as f64).abs() < 1e-9);
    }
}
