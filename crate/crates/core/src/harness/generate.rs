//! Synthetic datasets: spherical Gaussian, skewed product distribution and a
//! Gaussian with a forbidden band, each randomly shifted inside a box.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::Dataset;
use crate::harness::csv_io::{load_csv, CsvOptions};
use crate::privacy::{NoiseRng, Substreams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    SphericalGaussian,
    ProductBernoulli,
    ConditionalGaussian,
    Csv,
}

impl GenKind {
    pub const SYNTHETIC: [GenKind; 3] = [
        GenKind::SphericalGaussian,
        GenKind::ProductBernoulli,
        GenKind::ConditionalGaussian,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SphericalGaussian => "spherical_gaussian",
            Self::ProductBernoulli => "product_bernoulli",
            Self::ConditionalGaussian => "conditional_gaussian",
            Self::Csv => "csv",
        }
    }
}

fn default_box() -> f64 {
    5.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub kind: GenKind,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// Fixed shift; drawn uniformly in the box when absent.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shift: Option<Vec<f64>>,
    /// Half-width of the box `[-b, b]^d`.
    #[serde(default = "default_box")]
    pub box_half: f64,
    /// Source for the `csv` kind.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub csv: Option<CsvOptions>,
}

impl GenSpec {
    pub fn new(kind: GenKind, n: usize, d: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            d,
            seed,
            shift: None,
            box_half: default_box(),
            csv: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kind != GenKind::Csv && (self.n == 0 || self.d == 0) {
            return Err(domain("n and d must be positive"));
        }
        if !(self.box_half > 0.0) {
            return Err(domain("box half-width must be positive"));
        }
        if let Some(s) = &self.shift {
            if s.len() != self.d {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    found: s.len(),
                });
            }
        }
        Ok(())
    }
}

/// A generated dataset with the shift that was applied.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub data: Dataset,
    pub shift: Vec<f64>,
    /// Filtering and shifting steps applied, for the record.
    pub provenance: Vec<String>,
}

const STREAM_SHIFT: u64 = 0;
const STREAM_POINTS: u64 = 1;

/// Shift vector: the given one, or uniform in `[-half, half]^d` from the
/// seed's dedicated substream.
pub fn draw_shift(seed: u64, d: usize, half: f64) -> Vec<f64> {
    let mut rng = Substreams::new(seed).stream(&[STREAM_SHIFT]);
    (0..d).map(|_| rng.gen_range(-half..=half)).collect()
}

fn shift_for(spec: &GenSpec, half: f64) -> Vec<f64> {
    spec.shift.clone().unwrap_or_else(|| draw_shift(spec.seed, spec.d, half))
}

fn points_stream(seed: u64) -> NoiseRng {
    Substreams::new(seed).stream(&[STREAM_POINTS])
}

/// Rejection sampling into the box; fails once fewer than 1 in 1000 draws
/// have been accepted after a warm-up.
fn fill_with_rejection(
    spec: &GenSpec,
    shift: &[f64],
    mut draw: impl FnMut(&mut NoiseRng, &mut [f64]),
) -> Result<Dataset> {
    let d = spec.d;
    let mut out = Dataset::with_capacity(d, spec.n)?;
    let mut rng = points_stream(spec.seed);
    let mut x = vec![0.0; d];
    let (mut attempts, mut accepted) = (0u64, 0u64);
    while out.len() < spec.n {
        draw(&mut rng, &mut x);
        for (v, s) in x.iter_mut().zip(shift) {
            *v += s;
        }
        attempts += 1;
        if x.iter().all(|v| v.abs() <= spec.box_half) {
            out.push(&x)?;
            accepted += 1;
        } else if attempts >= 10_000 && accepted * 1000 < attempts {
            return Err(Error::Generation(format!(
                "rejection rate above 99.9% ({accepted} of {attempts} accepted); the shift is too close to the box boundary"
            )));
        }
    }
    Ok(out)
}

fn standard_normal(rng: &mut NoiseRng) -> f64 {
    rng.sample(StandardNormal)
}

/// `N(v, I_d)` restricted to the box by rejection.
pub fn gen_spherical(spec: &GenSpec) -> Result<Generated> {
    spec.validate()?;
    let shift = shift_for(spec, spec.box_half);
    let data = fill_with_rejection(spec, &shift, |rng, x| {
        for v in x.iter_mut() {
            *v = standard_normal(rng);
        }
    })?;
    Ok(Generated {
        data,
        shift,
        provenance: vec![format!("spherical gaussian, box [-{0}, {0}]", spec.box_half)],
    })
}

/// Points of `{-1, 1}^d` with `Pr[x_i = 1] = 2^{-i}` (1-based `i`), shifted.
///
/// Random shifts are drawn in `[-(b-1), b-1]^d` so the shifted cube stays in the box.
pub fn gen_product(spec: &GenSpec) -> Result<Generated> {
    spec.validate()?;
    let shift = shift_for(spec, (spec.box_half - 1.0).max(0.0));
    let mut data = Dataset::with_capacity(spec.d, spec.n)?;
    let mut rng = points_stream(spec.seed);
    let probs: Vec<f64> = (1..=spec.d).map(|i| 0.5f64.powi(i as i32)).collect();
    let mut x = vec![0.0; spec.d];
    for _ in 0..spec.n {
        for ((v, p), s) in x.iter_mut().zip(&probs).zip(&shift) {
            *v = if rng.gen_bool(*p) { 1.0 } else { -1.0 } + s;
        }
        data.push(&x)?;
    }
    Ok(Generated {
        data,
        shift,
        provenance: vec!["product bernoulli on {-1,1}^d".to_owned()],
    })
}

/// Lower and upper ends of the forbidden band, applied before shifting.
pub const CONDITIONAL_BAND: (f64, f64) = (0.0, 0.5);

/// Standard Gaussian per coordinate, redrawn while in the band, then shifted
/// and restricted to the box.
pub fn gen_conditional(spec: &GenSpec) -> Result<Generated> {
    spec.validate()?;
    let shift = shift_for(spec, spec.box_half);
    let (lo, hi) = CONDITIONAL_BAND;
    let data = fill_with_rejection(spec, &shift, |rng, x| {
        for v in x.iter_mut() {
            *v = loop {
                let z = standard_normal(rng);
                if !(lo..=hi).contains(&z) {
                    break z;
                }
            };
        }
    })?;
    Ok(Generated {
        data,
        shift,
        provenance: vec![format!("conditional gaussian, band [{lo}, {hi}] excluded before shift")],
    })
}

/// Dispatches on `spec.kind`.
pub fn generate(spec: &GenSpec) -> Result<Generated> {
    match spec.kind {
        GenKind::SphericalGaussian => gen_spherical(spec),
        GenKind::ProductBernoulli => gen_product(spec),
        GenKind::ConditionalGaussian => gen_conditional(spec),
        GenKind::Csv => {
            let opts = spec
                .csv
                .as_ref()
                .ok_or_else(|| domain("csv generator needs csv options"))?;
            let loaded = load_csv(opts)?;
            Ok(Generated {
                shift: loaded.shift.clone().unwrap_or_else(|| vec![0.0; loaded.data.dim()]),
                provenance: loaded.provenance,
                data: loaded.data,
            })
        }
    }
}
