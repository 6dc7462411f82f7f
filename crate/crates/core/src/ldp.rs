//! Local-model protocol simulated in process: per-user randomizers, a server
//! that only ever sees [`UserMessage`]s, and the radius-search driver.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp::{
    clip_to_start, dp_schedule, final_gate_value, merged_options, private_search, run_engine, DpMebResult,
    DpOutcome, DpSchedule, DpSolveParams, Mechanism, Round, RunOptions,
};
use crate::error::{domain, Result};
use crate::geometry::{count_outside, dist2, Dataset};
use crate::meb::{nominal_search_rounds, SolveConfig};
use crate::privacy::{gaussian_scalar, Substreams};

/// Round type of the protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundKind {
    /// Count and displacement at radius `r`.
    Step,
    /// Count only, at radius `(1+γ) r`.
    Final,
}

/// What a user sends. There is deliberately no field for raw coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserMessage {
    pub y: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub z: Option<Vec<f64>>,
}

/// Per-user noise variances. Zero disables the corresponding noise (test mode).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserNoise {
    pub sigma_count2: f64,
    pub sigma_sum2: f64,
}

impl UserNoise {
    pub const NONE: Self = Self {
        sigma_count2: 0.0,
        sigma_sum2: 0.0,
    };
}

/// The user-side randomizer.
///
/// `y = 1[x ∉ B(θ, r)] + N(0, σ_count²)` and, in step rounds,
/// `z = 1[x ∉ B(θ, r)]·(x − θ) + N(0, σ_sum² I)`.
pub fn user_randomize<R: Rng + ?Sized>(
    x: &[f64],
    theta: &[f64],
    r: f64,
    kind: RoundKind,
    noise: UserNoise,
    rng: &mut R,
) -> UserMessage {
    let outside = dist2(x, theta) > r * r;
    let y = f64::from(u8::from(outside)) + gaussian_scalar(noise.sigma_count2, rng);
    let z = match kind {
        RoundKind::Final => None,
        RoundKind::Step => Some(
            x.iter()
                .zip(theta)
                .map(|(v, t)| {
                    let base = if outside { v - t } else { 0.0 };
                    base + gaussian_scalar(noise.sigma_sum2, rng)
                })
                .collect(),
        ),
    };
    UserMessage { y, z }
}

/// Server-side sums `(Σ y, Σ z)` over one round of messages.
pub fn aggregate(messages: &[UserMessage], dim: usize) -> (f64, Option<Vec<f64>>) {
    let sum_y = messages.iter().map(|m| m.y).sum();
    let mut sum_z: Option<Vec<f64>> = None;
    for z in messages.iter().filter_map(|m| m.z.as_ref()) {
        let acc = sum_z.get_or_insert_with(|| vec![0.0; dim]);
        for (a, v) in acc.iter_mut().zip(z) {
            *a += v;
        }
    }
    (sum_y, sum_z)
}

/// How much of each round the transcript keeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptMode {
    /// Round headers with message counts and sums.
    #[default]
    Digest,
    /// Every message as well.
    Full,
}

/// One protocol round as seen by the server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRound {
    pub round: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub call: Option<usize>,
    pub rep: usize,
    pub iter: usize,
    pub kind: RoundKind,
    /// Broadcast center.
    pub theta: Vec<f64>,
    /// Broadcast radius.
    pub radius: f64,
    pub n_messages: usize,
    pub sum_y: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sum_z: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub messages: Option<Vec<UserMessage>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub mode: TranscriptMode,
    pub rounds: Vec<TranscriptRound>,
}

impl Transcript {
    pub fn new(mode: TranscriptMode) -> Self {
        Self {
            mode,
            rounds: Vec::new(),
        }
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.rounds {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    fn extend_from(&mut self, other: Transcript) {
        let offset = self.rounds.len();
        self.rounds.extend(other.rounds.into_iter().map(|mut r| {
            r.round += offset;
            r
        }));
    }
}

/// Local-model constants: the curator schedule with `√n`-inflated gates.
pub fn ldp_schedule(gamma: f64, beta: f64, rho: f64, r: f64, d: usize, n: usize) -> Result<DpSchedule> {
    if n == 0 {
        return Err(domain("need at least one user"));
    }
    let mut s = dp_schedule(gamma, beta, rho, r, d)?;
    let nf = n as f64;
    s.threshold *= nf.sqrt();
    s.final_gate = final_gate_value(s.reps as f64, s.iters as f64, s.beta0, rho, nf);
    s.utility_bound = s.threshold + s.final_gate;
    Ok(s)
}

/// The uncovered-count bound stated for the local solver, whose log term
/// carries `4nRT` rather than the gate's `4RT`.
pub fn ldp_lemma_bound(schedule: &DpSchedule, rho: f64, d: usize, n: usize) -> f64 {
    let (rf, tf, nf) = (schedule.reps as f64, schedule.iters as f64, n as f64);
    let b0 = schedule.beta0;
    88.0 * (nf * rf * tf / rho).sqrt() * ((d as f64).sqrt() + (2.0 * (4.0 * nf * rf * tf / b0).ln()).sqrt())
        + final_gate_value(rf, tf, b0, rho, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdpOutcome {
    pub outcome: DpOutcome,
    pub transcript: Transcript,
    pub lemma_bound: f64,
}

struct Users<'a> {
    p: &'a Dataset,
    streams: Substreams,
    noise: UserNoise,
    transcript: Transcript,
    call: Option<usize>,
}

impl Users<'_> {
    fn round(&mut self, theta: &[f64], radius: f64, rep: usize, iter: usize, kind: RoundKind) -> (f64, Option<Vec<f64>>) {
        let messages: Vec<UserMessage> = self
            .p
            .iter()
            .enumerate()
            .map(|(u, x)| {
                let mut rng = self.streams.stream(&[rep as u64, iter as u64, u as u64]);
                user_randomize(x, theta, radius, kind, self.noise, &mut rng)
            })
            .collect();
        let (sum_y, sum_z) = aggregate(&messages, theta.len());
        let full = self.transcript.mode == TranscriptMode::Full;
        self.transcript.rounds.push(TranscriptRound {
            round: self.transcript.rounds.len(),
            call: self.call,
            rep,
            iter,
            kind,
            theta: theta.to_vec(),
            radius,
            n_messages: messages.len(),
            sum_y,
            sum_z: sum_z.clone(),
            messages: full.then_some(messages),
        });
        (sum_y, sum_z)
    }
}

impl Mechanism for Users<'_> {
    fn step_round(&mut self, theta: &[f64], r: f64, rep: usize, iter: usize, _gate: f64) -> Round {
        let (noisy_count, noisy_sum) = self.round(theta, r, rep, iter, RoundKind::Step);
        Round {
            true_count: self.true_count(theta, r),
            noisy_count,
            noisy_sum,
        }
    }

    fn final_round(&mut self, theta: &[f64], radius: f64, rep: usize, iter: usize) -> Round {
        let (noisy_count, _) = self.round(theta, radius, rep, iter, RoundKind::Final);
        Round {
            true_count: self.true_count(theta, radius),
            noisy_count,
            noisy_sum: None,
        }
    }

    fn true_count(&self, theta: &[f64], r: f64) -> usize {
        count_outside(self.p, theta, r)
    }
}

/// Local-model solver at candidate radius `params.r`; each point of `p` is one user.
pub fn ldp_mmeb(p: &Dataset, params: &DpSolveParams) -> Result<LdpOutcome> {
    ldp_mmeb_with(p, params, &RunOptions::default(), TranscriptMode::Digest)
}

pub fn ldp_mmeb_with(p: &Dataset, params: &DpSolveParams, opts: &RunOptions, mode: TranscriptMode) -> Result<LdpOutcome> {
    ldp_mmeb_call(p, params, opts, mode, None)
}

fn ldp_mmeb_call(
    p: &Dataset,
    params: &DpSolveParams,
    opts: &RunOptions,
    mode: TranscriptMode,
    call: Option<usize>,
) -> Result<LdpOutcome> {
    params.validate()?;
    p.check_nonempty()?;
    p.check_dim(params.theta0.dim())?;
    let schedule = ldp_schedule(params.gamma, params.beta, params.rho, params.r, p.dim(), p.len())?;
    let lemma_bound = ldp_lemma_bound(&schedule, params.rho, p.dim(), p.len());
    let noise = if opts.noise_disabled {
        UserNoise::NONE
    } else {
        UserNoise {
            sigma_count2: schedule.sigma_count2,
            sigma_sum2: schedule.sigma_sum2,
        }
    };
    let mut users = Users {
        p,
        streams: Substreams::new(params.seed),
        noise,
        transcript: Transcript::new(mode),
        call,
    };
    let outcome = run_engine(&mut users, params, schedule, opts, call)?;
    Ok(LdpOutcome {
        outcome,
        transcript: users.transcript,
        lemma_bound,
    })
}

/// Result of [`ldp_meb`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdpMebResult {
    pub result: DpMebResult,
    pub transcript: Transcript,
}

/// Local-model driver. Users outside `B(θ₀, 11 r₀)` drop out before the first
/// round, which the server learns only as a smaller head count.
pub fn ldp_meb(p: &Dataset, cfg: &SolveConfig, beta: f64, rho: f64, seed: u64) -> Result<LdpMebResult> {
    ldp_meb_with(p, cfg, beta, rho, seed, &RunOptions::default(), TranscriptMode::Digest)
}

pub fn ldp_meb_with(
    p: &Dataset,
    cfg: &SolveConfig,
    beta: f64,
    rho: f64,
    seed: u64,
    opts: &RunOptions,
    mode: TranscriptMode,
) -> Result<LdpMebResult> {
    p.check_nonempty()?;
    let (users, clipped) = clip_to_start(p, cfg)?;
    if users.is_empty() {
        return Err(domain("every point lies outside B(theta0, 11 r0)"));
    }
    let opts = merged_options(cfg, opts);
    let (d, n) = (users.dim(), users.len());
    let mut transcript = Transcript::new(mode);
    let (ball, accepted_index, calls, trace, ledger, slots) = private_search(
        cfg,
        beta,
        rho,
        seed,
        |params, call| {
            let out = ldp_mmeb_call(&users, params, &opts, mode, Some(call))?;
            transcript.extend_from(out.transcript);
            Ok(out.outcome)
        },
        |params| ldp_schedule(params.gamma, params.beta, params.rho, params.r, d, n),
    )?;
    Ok(LdpMebResult {
        result: DpMebResult {
            ball,
            accepted_index,
            clipped,
            calls,
            trace,
            ledger,
            slots,
            nominal_rounds: nominal_search_rounds(cfg.gamma)?,
        },
        transcript,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::trace::StopReason;

    #[test]
    fn noiseless_messages() {
        let mut rng = Substreams::new(1).stream(&[0]);
        let m = user_randomize(&[0.5, 0.0], &[0.0, 0.0], 1.0, RoundKind::Step, UserNoise::NONE, &mut rng);
        assert_eq!(m, UserMessage { y: 0.0, z: Some(vec![0.0, 0.0]) });
        let m = user_randomize(&[3.0, 0.0], &[0.0, 0.0], 1.0, RoundKind::Step, UserNoise::NONE, &mut rng);
        assert_eq!(m, UserMessage { y: 1.0, z: Some(vec![3.0, 0.0]) });
        let m = user_randomize(&[3.0, 0.0], &[0.0, 0.0], 1.0, RoundKind::Final, UserNoise::NONE, &mut rng);
        assert_eq!(m.z, None);
    }

    #[test]
    fn summed_count_variance() {
        let n = 10_000usize;
        let noise = UserNoise {
            sigma_count2: 4.0,
            sigma_sum2: 1.0,
        };
        let s = Substreams::new(77);
        let rounds = 400;
        let sums: Vec<f64> = (0..rounds)
            .map(|k| {
                (0..n)
                    .map(|u| {
                        let mut rng = s.stream(&[k as u64, u as u64]);
                        user_randomize(&[0.0], &[0.0], 1.0, RoundKind::Final, noise, &mut rng).y
                    })
                    .sum()
            })
            .collect();
        let mean = sums.iter().sum::<f64>() / rounds as f64;
        let var = sums.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (rounds - 1) as f64;
        // 400 rounds give a relative standard error of about 7%; allow 3 of them.
        assert!((var / 4e4 - 1.0).abs() < 0.21, "variance {var}");
    }

    #[test]
    fn single_user_sums_are_exact() {
        let p = Dataset::from_rows(&[[3.0, 0.0]]).unwrap();
        let params = DpSolveParams {
            gamma: 0.5,
            beta: 0.5,
            rho: 1.0,
            r: 1.0,
            theta0: Point::origin(2),
            seed: 3,
        };
        let opts = RunOptions {
            noise_disabled: true,
            threshold_override: Some(0.5),
            iter_cap: Some(1),
            ..RunOptions::default()
        };
        let out = ldp_mmeb_with(&p, &params, &opts, TranscriptMode::Full).unwrap();
        let round = &out.transcript.rounds[0];
        assert_eq!(round.sum_y, 1.0);
        assert_eq!(round.sum_z.as_deref(), Some(&[3.0, 0.0][..]));
        assert_eq!(out.outcome.stop_reason, StopReason::IterationCap);
    }

    #[test]
    fn gate_ratio_is_sqrt_n() {
        let c = dp_schedule(0.3, 0.1, 0.5, 1.0, 4).unwrap();
        for n in [1usize, 7, 4096, 10_000] {
            let l = ldp_schedule(0.3, 0.1, 0.5, 1.0, 4, n).unwrap();
            assert!((l.threshold / c.threshold - (n as f64).sqrt()).abs() < 1e-9 * (n as f64).sqrt());
            let l2 = ldp_schedule(0.3, 0.1, 0.5, 1.0, 4, 2 * n).unwrap();
            assert!((l2.threshold / l.threshold - 2f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn transcript_counts_rounds() {
        let rows: Vec<[f64; 2]> = (0..64).map(|i| [(i as f64).cos() * 2.0, (i as f64).sin() * 2.0]).collect();
        let p = Dataset::from_rows(&rows).unwrap();
        let cfg = SolveConfig::new(0.5, 4.0, Point::origin(2)).unwrap();
        let res = ldp_meb(&p, &cfg, 0.5, 1.0, 11).unwrap();
        let executed: usize = res.result.trace.len();
        assert_eq!(res.transcript.rounds.len(), executed);
        assert!(res.transcript.rounds.iter().all(|r| r.n_messages == 64));
        assert!((res.result.ledger.spent() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn neighbouring_inputs_differ_in_one_message() {
        let base: Vec<[f64; 2]> = (0..30).map(|i| [0.01 * i as f64, 0.0]).collect();
        let mut other = base.clone();
        other[7] = [5.0, 0.0];
        let params = DpSolveParams {
            gamma: 0.5,
            beta: 0.5,
            rho: 1.0,
            r: 1.0,
            theta0: Point::origin(2),
            seed: 5,
        };
        let opts = RunOptions {
            iter_cap: Some(1),
            threshold_override: Some(f64::MIN_POSITIVE),
            ..RunOptions::default()
        };
        let a = ldp_mmeb_with(&Dataset::from_rows(&base).unwrap(), &params, &opts, TranscriptMode::Full).unwrap();
        let b = ldp_mmeb_with(&Dataset::from_rows(&other).unwrap(), &params, &opts, TranscriptMode::Full).unwrap();
        let ma = a.transcript.rounds[0].messages.as_ref().unwrap();
        let mb = b.transcript.rounds[0].messages.as_ref().unwrap();
        let differing: Vec<usize> = (0..ma.len()).filter(|&i| ma[i] != mb[i]).collect();
        assert_eq!(differing, vec![7]);
    }
}
