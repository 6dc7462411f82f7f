//! Per-iteration telemetry shared by the solvers and the experiment runner.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One iteration of an iterative solver.
///
/// `(rep, iter)` is unique and dense within a run. `wall_ms` is only filled
/// when timing is requested, so traces are byte-reproducible by default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub call: Option<usize>,
    pub rep: usize,
    pub iter: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dist_to_opt: Option<f64>,
    pub n_uncovered_true: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_uncovered_noisy: Option<f64>,
    pub radius: f64,
    pub stepped: bool,
    /// A noisy sum was released this iteration (with or without a step).
    #[serde(default)]
    pub sum_released: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
}

impl TraceRecord {
    /// Number of noisy queries this record stands for.
    pub fn noise_events(&self) -> u64 {
        u64::from(self.n_uncovered_noisy.is_some()) + u64::from(self.sum_released)
    }
}

/// Why an iterative run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// No point was outside the current ball.
    Covered,
    /// The iteration horizon was exhausted.
    HorizonReached,
    /// The noisy uncovered count fell below the gate.
    BelowThreshold,
    /// The end-of-repetition coverage check passed.
    FinalGatePassed,
    /// Every repetition failed its final check.
    AllRepsExhausted,
    /// Harness rule: within `γ·r_opt` of the known optimum.
    Converged,
    /// Harness rule: iteration cap exceeded.
    IterationCap,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Covered => "covered",
            Self::HorizonReached => "horizon_reached",
            Self::BelowThreshold => "below_threshold",
            Self::FinalGatePassed => "final_gate_passed",
            Self::AllRepsExhausted => "all_reps_exhausted",
            Self::Converged => "converged",
            Self::IterationCap => "iteration_cap",
        }
    }
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Writes records as JSON Lines.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads JSON Lines written by [`write_jsonl`].
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}
