//! Data generation, CSV ingestion, the experiment runner and subsample-and-aggregate.

pub mod aggregate;
pub mod csv_io;
pub mod experiment;
pub mod generate;

pub use aggregate::{random_partition, subsample_aggregate, AggregateOutcome, AggregateParams};
pub use csv_io::{load_csv, write_csv, CsvOptions, LoadedCsv};
pub use experiment::{
    desk_scale_rho, protocol_beta, read_summary, run_experiment, run_seed, Algorithm, ExperimentConfig,
    ExperimentReport, RMode, SeedRun, SummaryRow,
};
pub use generate::{gen_conditional, gen_product, gen_spherical, generate, GenKind, GenSpec, Generated};

use crate::dp::dp_schedule;
use crate::error::Result;

/// Halting size `n₀ = √(RT)(√d + √ln(4RT/β₀))/√ρ`, with `R, T, β₀` from the
/// curator schedule.
pub fn n0(gamma: f64, rho: f64, d: usize, beta: f64) -> Result<f64> {
    let s = dp_schedule(gamma, beta, rho, 1.0, d)?;
    let rt = s.reps as f64 * s.iters as f64;
    Ok(rt.sqrt() * ((d as f64).sqrt() + (4.0 * rt / s.beta0).ln().sqrt()) / rho.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n0_fixture() {
        let v = n0(0.2, 0.3, 10, (-9.0f64).exp()).unwrap();
        assert!((v - N0_PROTOCOL).abs() < 1e-6 * N0_PROTOCOL, "{v}");
        assert!(n0(0.2, 0.5, 10, 0.01).unwrap() < n0(0.2, 0.3, 10, 0.01).unwrap());
    }

    const N0_PROTOCOL: f64 = 140_314.796_933_795_7;
}
