//! zCDP accounting: Gaussian-mechanism calibration, conversions to
//! `(ε, δ)`-DP, a composition ledger and seeded noise streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Relative slack allowed when comparing cumulative charges to the total.
pub const LEDGER_REL_SLACK: f64 = 1e-12;

/// A zCDP budget `ρ > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrivacyBudget(f64);

impl PrivacyBudget {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(domain(format!("rho must be positive and finite, got {rho}")));
        }
        Ok(Self(rho))
    }

    pub fn rho(self) -> f64 {
        self.0
    }
}

/// Per-coordinate Gaussian variance for a query of dimension `dim`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    sigma2: f64,
    dim: usize,
}

impl NoiseSpec {
    pub fn new(sigma2: f64, dim: usize) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(domain(format!("sigma2 must be positive and finite, got {sigma2}")));
        }
        if dim == 0 {
            return Err(domain("noise dimension must be positive"));
        }
        Ok(Self { sigma2, dim })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// zCDP cost of answering a query of L2-sensitivity `sensitivity` with this noise.
    pub fn rho_for_sensitivity(&self, sensitivity: f64) -> f64 {
        sensitivity * sensitivity / (2.0 * self.sigma2)
    }
}

/// Variance `G² / 2ρ` making the Gaussian mechanism `ρ`-zCDP for sensitivity `G`.
pub fn gaussian_sigma2(sensitivity: f64, rho: f64) -> Result<f64> {
    if !(sensitivity > 0.0) || !sensitivity.is_finite() {
        return Err(domain(format!("sensitivity must be positive, got {sensitivity}")));
    }
    let rho = PrivacyBudget::new(rho)?.rho();
    Ok(sensitivity * sensitivity / (2.0 * rho))
}

/// `ε = ρ + √(4ρ ln(1/δ))`: the `(ε, δ)`-DP guarantee implied by `ρ`-zCDP.
pub fn zcdp_to_eps_delta(rho: f64, delta: f64) -> Result<f64> {
    let rho = PrivacyBudget::new(rho)?.rho();
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(rho + (4.0 * rho * (1.0 / delta).ln()).sqrt())
}

/// A zCDP parameter sufficient for a target `(ε, δ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZcdpTarget {
    pub rho: f64,
    /// Set when `ε > 1`, outside the regime where the bound is stated.
    pub outside_regime: bool,
}

/// `ρ = ε² / (5 ln(1/δ))`, valid for `δ ≤ e⁻²` (and stated for `ε ≤ 1`).
///
/// This is a sufficient condition only; it is not the inverse of
/// [`zcdp_to_eps_delta`].
pub fn eps_delta_to_zcdp(eps: f64, delta: f64) -> Result<ZcdpTarget> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(domain(format!("epsilon must be positive, got {eps}")));
    }
    if !(delta > 0.0 && delta <= (-2.0f64).exp()) {
        return Err(domain(format!("delta must lie in (0, e^-2], got {delta}")));
    }
    Ok(ZcdpTarget {
        rho: eps * eps / (5.0 * (1.0 / delta).ln()),
        outside_regime: eps > 1.0,
    })
}

/// One ledger line: `count` identical charges of `rho` each under `label`.
///
/// Repeated queries of one kind within a repetition are recorded as a single
/// line with a multiplicity; `used` counts how many of them actually drew noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Charge {
    pub label: String,
    pub rho: f64,
    pub count: u64,
    pub used: u64,
}

impl Charge {
    pub fn total(&self) -> f64 {
        self.rho * self.count as f64
    }
}

/// Sequential-composition bookkeeping against a fixed total budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    total: PrivacyBudget,
    charges: Vec<Charge>,
    non_private: Option<String>,
}

/// One line of the JSON audit record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub label: String,
    pub rho_i: f64,
    pub count: u64,
    pub used: u64,
    pub running_total: f64,
}

/// The ledger as emitted by `--audit`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub total_rho: f64,
    pub spent_rho: f64,
    pub private: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub non_private_reason: Option<String>,
    pub charges: Vec<AuditRecord>,
}

impl BudgetLedger {
    pub fn new(total: PrivacyBudget) -> Self {
        Self {
            total,
            charges: Vec::new(),
            non_private: None,
        }
    }

    pub fn total(&self) -> PrivacyBudget {
        self.total
    }

    pub fn charges(&self) -> &[Charge] {
        &self.charges
    }

    /// Sum of all charges, including pre-committed ones not yet used.
    pub fn spent(&self) -> f64 {
        self.charges.iter().map(Charge::total).sum()
    }

    pub fn remaining(&self) -> f64 {
        self.total.rho() - self.spent()
    }

    /// Records a single charge of `rho_i`.
    pub fn charge(&mut self, label: impl Into<String>, rho_i: f64) -> Result<usize> {
        self.charge_many(label, rho_i, 1)
    }

    /// Records `count` charges of `rho_i` as one line; returns its index.
    pub fn charge_many(&mut self, label: impl Into<String>, rho_i: f64, count: u64) -> Result<usize> {
        let label = label.into();
        if !(rho_i > 0.0) || !rho_i.is_finite() || count == 0 {
            return Err(domain(format!("charge `{label}` must be positive")));
        }
        let requested = rho_i * count as f64;
        let spent = self.spent();
        if spent + requested > self.total.rho() * (1.0 + LEDGER_REL_SLACK) {
            return Err(Error::BudgetExceeded {
                label,
                requested,
                remaining: self.total.rho() - spent,
            });
        }
        self.charges.push(Charge {
            label,
            rho: rho_i,
            count,
            used: 0,
        });
        Ok(self.charges.len() - 1)
    }

    /// Marks one pre-committed query on line `idx` as executed.
    pub fn mark_used(&mut self, idx: usize) {
        let c = &mut self.charges[idx];
        debug_assert!(c.used < c.count, "charge `{}` over-used", c.label);
        c.used += 1;
    }

    pub fn used_queries(&self) -> u64 {
        self.charges.iter().map(|c| c.used).sum()
    }

    pub fn committed_queries(&self) -> u64 {
        self.charges.iter().map(|c| c.count).sum()
    }

    /// Flags the run as carrying no privacy guarantee (noise disabled, etc.).
    pub fn poison(&mut self, reason: impl Into<String>) {
        self.non_private.get_or_insert_with(|| reason.into());
    }

    pub fn is_private(&self) -> bool {
        self.non_private.is_none()
    }

    pub fn non_private_reason(&self) -> Option<&str> {
        self.non_private.as_deref()
    }

    /// Appends every line of `other`, prefixing labels. Fails on overdraft.
    pub fn absorb(&mut self, prefix: &str, other: &BudgetLedger) -> Result<()> {
        for c in &other.charges {
            let idx = self.charge_many(format!("{prefix}{}", c.label), c.rho, c.count)?;
            self.charges[idx].used = c.used;
        }
        if let Some(reason) = &other.non_private {
            self.poison(reason.clone());
        }
        Ok(())
    }

    pub fn audit(&self) -> AuditReport {
        let mut running = 0.0;
        let charges = self
            .charges
            .iter()
            .map(|c| {
                running += c.total();
                AuditRecord {
                    label: c.label.clone(),
                    rho_i: c.rho,
                    count: c.count,
                    used: c.used,
                    running_total: running,
                }
            })
            .collect();
        AuditReport {
            total_rho: self.total.rho(),
            spent_rho: running,
            private: self.is_private(),
            non_private_reason: self.non_private.clone(),
            charges,
        }
    }
}

/// Appends a charge to `ledger`, returning the updated ledger.
pub fn ledger_charge(mut ledger: BudgetLedger, label: &str, rho_i: f64) -> Result<BudgetLedger> {
    ledger.charge(label, rho_i)?;
    Ok(ledger)
}

/// The seeded random stream type used for all noise.
pub type NoiseRng = ChaCha8Rng;

/// Seeded factory of independent named substreams.
///
/// A substream is addressed by a path of integers, e.g.
/// `[call, repetition, iteration, kind]`, so the draws of one query never
/// depend on how many draws other queries consumed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substreams {
    seed: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl Substreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A child factory rooted at `path`.
    pub fn child(&self, path: &[u64]) -> Self {
        Self {
            seed: self.mix(path)[0],
        }
    }

    fn mix(&self, path: &[u64]) -> [u64; 4] {
        let mut h = splitmix64(self.seed ^ 0x6A09_E667_F3BC_C908);
        for (i, &p) in path.iter().enumerate() {
            h = splitmix64(h ^ splitmix64(p.wrapping_add(i as u64).wrapping_mul(0xA076_1D64_78BD_642F)));
        }
        let mut out = [0u64; 4];
        for (k, o) in out.iter_mut().enumerate() {
            h = splitmix64(h.wrapping_add(k as u64));
            *o = h;
        }
        out
    }

    pub fn stream(&self, path: &[u64]) -> NoiseRng {
        let words = self.mix(path);
        let mut key = [0u8; 32];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        NoiseRng::from_seed(key)
    }
}

/// `dim` i.i.d. draws from `N(0, sigma2)`, consumed in coordinate order.
pub fn sample_gaussian<R: Rng + ?Sized>(spec: &NoiseSpec, rng: &mut R) -> Vec<f64> {
    let sd = spec.sigma2.sqrt();
    (0..spec.dim)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// One draw from `N(0, sigma2)`.
pub fn gaussian_scalar<R: Rng + ?Sized>(sigma2: f64, rng: &mut R) -> f64 {
    sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal)
}
