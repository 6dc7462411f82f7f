//! Non-private margin-based solver, the radius binary search shared by every
//! driver, the bounded-noise (statistical-query) variant and a Monte-Carlo
//! checker for step distributions.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::geometry::{count_outside, dist2, distance, dot, norm2, uncovered_mean, Ball, Dataset, Point};

pub(crate) fn check_gamma(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(domain(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    Ok(gamma)
}

pub(crate) fn check_positive(name: &str, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain(format!("{name} must be positive and finite, got {x}")));
    }
    Ok(x)
}

/// Inputs of the radius search drivers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub gamma: f64,
    /// Initial radius guess, expected within `[r_opt, 4 r_opt]`.
    pub r0: f64,
    /// Initial center, expected within `10 r_opt` of the optimum.
    pub theta0: Point,
    /// Harness-only override of the step size.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step_scale: Option<f64>,
    /// Harness-only cap on iterations.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iter_cap: Option<usize>,
}

impl SolveConfig {
    pub fn new(gamma: f64, r0: f64, theta0: Point) -> Result<Self> {
        let cfg = Self {
            gamma,
            r0,
            theta0,
            step_scale: None,
            iter_cap: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// A starting pair computed directly from the data (no privacy):
    /// `θ₀ = p[0]` and `r₀ = max ‖x − p[0]‖`, which lies in `[r_opt, 2 r_opt]`.
    pub fn from_data(p: &Dataset, gamma: f64) -> Result<Self> {
        p.check_nonempty()?;
        let anchor = p.point(0);
        let r0 = p.iter().map(|x| dist2(x, anchor)).fold(0.0, f64::max).sqrt();
        let r0 = if r0 > 0.0 { r0 } else { f64::MIN_POSITIVE.sqrt() };
        Self::new(gamma, r0, Point::new(anchor.to_vec())?)
    }

    pub fn with_harness_overrides(mut self, step_scale: Option<f64>, iter_cap: Option<usize>) -> Result<Self> {
        self.step_scale = step_scale;
        self.iter_cap = iter_cap;
        self.validate()?;
        Ok(self)
    }

    pub fn is_library_mode(&self) -> bool {
        self.step_scale.is_none() && self.iter_cap.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        check_positive("r0", self.r0)?;
        if let Some(s) = self.step_scale {
            check_positive("step_scale", s)?;
        }
        if self.iter_cap == Some(0) {
            return Err(domain("iter_cap must be positive"));
        }
        Ok(())
    }
}

/// Iteration horizon `⌈(4/γ²) ln(100/γ²)⌉` of the exact-mean solver.
pub fn mmeb_iters(gamma: f64) -> Result<usize> {
    let g2 = check_gamma(gamma)?.powi(2);
    Ok(((4.0 / g2) * (100.0 / g2).ln()).ceil() as usize)
}

/// Iteration horizon `⌈(64/γ²) ln(100/γ²)⌉` of the bounded-noise variant.
pub fn noisy_mmeb_iters(gamma: f64) -> Result<usize> {
    let g2 = check_gamma(gamma)?.powi(2);
    Ok(((64.0 / g2) * (100.0 / g2).ln()).ceil() as usize)
}

/// Top index of the radius grid, `⌈log_{1+γ} 4⌉`.
pub fn radius_grid_top(gamma: f64) -> Result<usize> {
    let x = 4f64.ln() / (1.0 + check_gamma(gamma)?).ln();
    Ok((x - 1e-12).ceil() as usize)
}

/// `⌈log₂(log_{1+γ} 4)⌉`, the nominal number of search rounds.
pub fn nominal_search_rounds(gamma: f64) -> Result<usize> {
    let x = 4f64.ln() / (1.0 + check_gamma(gamma)?).ln();
    Ok((x.log2() - 1e-12).ceil().max(1.0) as usize)
}

/// Worst-case number of inner-solver calls made by [`radius_search`] over
/// indices `0..=top`, counting the closing call at `top` when nothing was accepted.
pub fn max_search_calls(top: usize) -> usize {
    fn worst(size: usize, accepted: bool) -> usize {
        if size <= 1 {
            return usize::from(!accepted);
        }
        let mid = (size - 1) / 2;
        1 + worst(mid + 1, true).max(worst(size - 1 - mid, accepted))
    }
    worst(top + 1, false)
}

/// Radius of grid index `i`: `(1+γ)^i · r₀ / 4`.
pub fn grid_radius(gamma: f64, r0: f64, i: usize) -> f64 {
    (1.0 + gamma).powi(i as i32) * r0 / 4.0
}

/// Snapshot of the binary search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusSearchState {
    pub i_min: usize,
    pub i_max: usize,
    pub i_cur: usize,
    pub theta_star: Point,
    /// Recorded radius `(1+γ) r_cur` of the last accepted guess; zero before any acceptance.
    pub r_star: f64,
}

/// One probe of the search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchProbe {
    pub call: usize,
    pub index: usize,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusSearchOutcome {
    /// `None` when no probe was accepted.
    pub ball: Option<Ball>,
    pub accepted_index: Option<usize>,
    pub calls: usize,
    pub state: RadiusSearchState,
}

/// Binary search over radius guesses `(1+γ)^i r₀/4`, `i ∈ [0, ⌈log_{1+γ} 4⌉]`.
///
/// On acceptance of `θ_cur` at `r_cur` the search records `B(θ_cur, (1+γ) r_cur)`
/// and moves left; otherwise it moves right. If the loop closes without any
/// acceptance, one final probe is made at the top index, whose radius is at
/// least `r₀`.
pub fn radius_search<I, A>(cfg: &SolveConfig, mut inner: I, mut accept: A) -> Result<RadiusSearchOutcome>
where
    I: FnMut(SearchProbe) -> Result<Option<Point>>,
    A: FnMut(&Point, f64) -> bool,
{
    cfg.validate()?;
    let gamma = cfg.gamma;
    let top = radius_grid_top(gamma)?;
    let mut state = RadiusSearchState {
        i_min: 0,
        i_max: top,
        i_cur: 0,
        theta_star: cfg.theta0.clone(),
        r_star: 0.0,
    };
    let mut accepted_index = None;
    let mut calls = 0;

    let mut probe = |state: &mut RadiusSearchState, calls: &mut usize| -> Result<bool> {
        let radius = grid_radius(gamma, cfg.r0, state.i_cur);
        let theta = inner(SearchProbe {
            call: *calls,
            index: state.i_cur,
            radius,
        })?;
        *calls += 1;
        match theta {
            Some(theta) if accept(&theta, radius) => {
                state.theta_star = theta;
                state.r_star = (1.0 + gamma) * radius;
                Ok(true)
            }
            _ => Ok(false),
        }
    };

    while state.i_min < state.i_max {
        state.i_cur = (state.i_min + state.i_max) / 2;
        if probe(&mut state, &mut calls)? {
            state.i_max = state.i_cur;
            accepted_index = Some(state.i_cur);
        } else {
            state.i_min = state.i_cur + 1;
        }
    }
    if accepted_index.is_none() {
        state.i_cur = state.i_max;
        if probe(&mut state, &mut calls)? {
            accepted_index = Some(state.i_cur);
        }
    }
    let ball = accepted_index.map(|_| Ball {
        center: state.theta_star.clone(),
        radius: state.r_star,
    });
    Ok(RadiusSearchOutcome {
        ball,
        accepted_index,
        calls,
        state,
    })
}

/// Observation passed to step observers of the iterative solvers.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub t: usize,
    pub theta_before: &'a [f64],
    pub theta_after: &'a [f64],
    pub uncovered: usize,
    pub target: &'a [f64],
}

/// Tuning of [`mmeb_run`]; the default reproduces the exact-mean solver.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MmebOptions {
    pub step_scale: Option<f64>,
    pub iter_cap: Option<usize>,
    /// Harness rule: stop as soon as `θ` lies in this ball.
    pub halt_within: Option<Ball>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MmebRun {
    pub theta: Point,
    /// Number of update steps taken.
    pub updates: usize,
    /// True when the run stopped because no point was uncovered.
    pub covered: bool,
    /// True when the run stopped inside `halt_within`.
    pub reached_target: bool,
    /// Points outside `B(θ, r)` at the returned center.
    pub uncovered: usize,
}

/// Exact-mean margin solver; returns the final center.
pub fn mmeb(p: &Dataset, gamma: f64, r: f64, theta0: &Point) -> Result<Point> {
    Ok(mmeb_run(p, gamma, r, theta0, MmebOptions::default(), |_| {})?.theta)
}

/// Exact-mean margin solver with an observer called after every update.
///
/// Each step moves `θ ← θ − s (θ − μ_w)` toward the mean `μ_w` of the points
/// outside `B(θ, r)`, with `s = γ²/2` unless overridden.
pub fn mmeb_run(
    p: &Dataset,
    gamma: f64,
    r: f64,
    theta0: &Point,
    opts: MmebOptions,
    mut observe: impl FnMut(&StepEvent<'_>),
) -> Result<MmebRun> {
    p.check_nonempty()?;
    p.check_dim(theta0.dim())?;
    check_positive("r", r)?;
    let horizon = mmeb_iters(gamma)?;
    let horizon = opts.iter_cap.map_or(horizon, |c| c.min(horizon));
    let step = opts.step_scale.unwrap_or(gamma * gamma / 2.0);

    let mut theta = theta0.to_vec();
    let mut next = vec![0.0; theta.len()];
    for t in 0..horizon {
        let s = uncovered_mean(p, &theta, r)?;
        let reached_target = opts.halt_within.as_ref().is_some_and(|b| b.contains(&theta));
        if s.mean.is_none() || reached_target {
            return Ok(MmebRun {
                theta: Point::from_vec_unchecked(theta),
                updates: t,
                covered: s.count == 0,
                reached_target,
                uncovered: s.count,
            });
        }
        let mean = s.mean.expect("checked above");
        for ((n, th), m) in next.iter_mut().zip(&theta).zip(mean.iter()) {
            *n = th - step * (th - m);
        }
        observe(&StepEvent {
            t,
            theta_before: &theta,
            theta_after: &next,
            uncovered: s.count,
            target: &mean,
        });
        std::mem::swap(&mut theta, &mut next);
    }
    let uncovered = count_outside(p, &theta, r);
    let reached_target = opts.halt_within.as_ref().is_some_and(|b| b.contains(&theta));
    Ok(MmebRun {
        theta: Point::from_vec_unchecked(theta),
        updates: horizon,
        covered: uncovered == 0,
        reached_target,
        uncovered,
    })
}

/// Non-private driver: radius search with the exact-mean solver, accepting a
/// guess when `B(θ_cur, (1+γ) r_cur)` covers every point.
pub fn meb(p: &Dataset, cfg: &SolveConfig) -> Result<Ball> {
    Ok(meb_search(p, cfg)?
        .ball
        .expect("the top radius guess covers the data"))
}

/// [`meb`] returning the full search outcome.
pub fn meb_search(p: &Dataset, cfg: &SolveConfig) -> Result<RadiusSearchOutcome> {
    p.check_nonempty()?;
    p.check_dim(cfg.theta0.dim())?;
    let opts = MmebOptions {
        step_scale: cfg.step_scale,
        iter_cap: cfg.iter_cap,
        halt_within: None,
    };
    let gamma = cfg.gamma;
    let out = radius_search(
        cfg,
        |probe| Ok(Some(mmeb_run(p, gamma, probe.radius, &cfg.theta0, opts.clone(), |_| {})?.theta)),
        |theta, r| count_outside(p, theta, (1.0 + gamma) * r) == 0,
    )?;
    if out.ball.is_none() {
        // Only reachable when r0 < r_opt; the final probe then fails to cover.
        return Err(domain("no radius guess covered the data; r0 is below the optimal radius"));
    }
    Ok(out)
}

/// Inputs handed to the approximate-mean oracle of [`noisy_mmeb_sq`].
#[derive(Debug)]
pub struct MeanQuery<'a> {
    pub t: usize,
    pub theta: &'a [f64],
    pub radius: f64,
    /// The exact mean of the uncovered points.
    pub exact_mean: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyMmebRun {
    pub theta: Point,
    pub updates: usize,
    pub covered: bool,
}

/// Bounded-noise variant: `θ ← (1 − γ²/8) θ + (γ²/8) μ̃`, for at most
/// `⌈(64/γ²) ln(100/γ²)⌉` iterations, where `μ̃` comes from `mean_oracle`
/// and is expected within `γr/16` of the true uncovered mean.
pub fn noisy_mmeb_sq(
    p: &Dataset,
    gamma: f64,
    r: f64,
    theta0: &Point,
    mean_oracle: impl FnMut(&MeanQuery<'_>) -> Vec<f64>,
) -> Result<Point> {
    Ok(noisy_mmeb_sq_run(p, gamma, r, theta0, mean_oracle, |_| {})?.theta)
}

pub fn noisy_mmeb_sq_run(
    p: &Dataset,
    gamma: f64,
    r: f64,
    theta0: &Point,
    mut mean_oracle: impl FnMut(&MeanQuery<'_>) -> Vec<f64>,
    mut observe: impl FnMut(&StepEvent<'_>),
) -> Result<NoisyMmebRun> {
    p.check_nonempty()?;
    p.check_dim(theta0.dim())?;
    check_positive("r", r)?;
    let horizon = noisy_mmeb_iters(gamma)?;
    let step = gamma * gamma / 8.0;
    let mut theta = theta0.to_vec();
    let mut next = vec![0.0; theta.len()];
    for t in 0..horizon {
        let s = uncovered_mean(p, &theta, r)?;
        let Some(mean) = s.mean else {
            return Ok(NoisyMmebRun {
                theta: Point::from_vec_unchecked(theta),
                updates: t,
                covered: true,
            });
        };
        let approx = mean_oracle(&MeanQuery {
            t,
            theta: &theta,
            radius: r,
            exact_mean: &mean,
        });
        p.check_dim(approx.len())?;
        for ((n, th), m) in next.iter_mut().zip(&theta).zip(&approx) {
            *n = (1.0 - step) * th + step * m;
        }
        observe(&StepEvent {
            t,
            theta_before: &theta,
            theta_after: &next,
            uncovered: s.count,
            target: &approx,
        });
        std::mem::swap(&mut theta, &mut next);
    }
    Ok(NoisyMmebRun {
        theta: Point::from_vec_unchecked(theta),
        updates: horizon,
        covered: false,
    })
}

/// Estimated margins of a step distribution against the two sufficient
/// conditions `E⟨θ_opt − θ, z⟩ ≥ ¼‖θ − θ_opt‖²` and `E‖z‖² ≤ 512 r²`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepDistributionCheck {
    pub samples: usize,
    pub progress_mean: f64,
    pub progress_required: f64,
    pub progress_se: f64,
    pub second_moment_mean: f64,
    pub second_moment_bound: f64,
    pub second_moment_se: f64,
    pub progress_ok: bool,
    pub second_moment_ok: bool,
}

impl StepDistributionCheck {
    pub fn passed(&self) -> bool {
        self.progress_ok && self.second_moment_ok
    }
}

pub const MIN_STEP_SAMPLES: usize = 1000;

/// Checks samples `z ~ D^t` against both conditions with a tolerance of three
/// standard errors.
pub fn check_step_distribution(
    samples: &[Point],
    theta_t: &[f64],
    theta_opt: &[f64],
    r: f64,
) -> Result<StepDistributionCheck> {
    if samples.len() < MIN_STEP_SAMPLES {
        return Err(domain(format!(
            "need at least {MIN_STEP_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    check_positive("r", r)?;
    let dir: Vec<f64> = theta_opt.iter().zip(theta_t).map(|(o, t)| o - t).collect();
    let n = samples.len() as f64;
    let (mut s1, mut s1q, mut s2, mut s2q) = (0.0, 0.0, 0.0, 0.0);
    for z in samples {
        if z.dim() != dir.len() {
            return Err(crate::Error::DimensionMismatch {
                expected: dir.len(),
                found: z.dim(),
            });
        }
        let a = dot(&dir, z);
        let b = norm2(z);
        s1 += a;
        s1q += a * a;
        s2 += b;
        s2q += b * b;
    }
    let m1 = s1 / n;
    let m2 = s2 / n;
    let se = |sum_sq: f64, mean: f64| ((sum_sq / n - mean * mean).max(0.0) / (n - 1.0).max(1.0)).sqrt();
    let se1 = se(s1q, m1);
    let se2 = se(s2q, m2);
    let required = 0.25 * norm2(&dir);
    let bound = 512.0 * r * r;
    Ok(StepDistributionCheck {
        samples: samples.len(),
        progress_mean: m1,
        progress_required: required,
        progress_se: se1,
        second_moment_mean: m2,
        second_moment_bound: bound,
        second_moment_se: se2,
        progress_ok: m1 >= required - 3.0 * se1,
        second_moment_ok: m2 <= bound + 3.0 * se2,
    })
}

/// `‖θ − θ_opt‖`, for callers holding an oracle solution.
pub fn distance_to(theta: &[f64], opt: &Ball) -> f64 {
    distance(theta, &opt.center)
}
