//! Subsample-and-aggregate: apply a function to random disjoint parts of the
//! data and privately locate a point close to most of the outputs.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dp::{dp_meb, DpMebResult};
use crate::error::{domain, Result};
use crate::geometry::{Ball, Dataset, Point};
use crate::init::{good_center, InitOutcome, InitParams};
use crate::meb::SolveConfig;
use crate::privacy::Substreams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateParams {
    /// Number of parts.
    pub k: usize,
    pub gamma: f64,
    pub beta: f64,
    pub rho: f64,
    pub seed: u64,
    /// Public ball known to contain every output of `f`.
    pub domain: Ball,
    /// Lower bound on the radius searched by the initialisation.
    pub r_min: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateOutcome {
    pub point: Point,
    /// The `k` per-part outputs (not private; for diagnostics).
    pub outputs: Dataset,
    pub init: InitOutcome,
    pub search: DpMebResult,
    /// The radius search failed and the initialisation center was returned.
    pub fell_back: bool,
}

/// Part sizes differ by at most one.
pub fn random_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(domain(format!("k = {k} must lie in [1, n = {n}]")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut Substreams::new(seed).stream(&[0]));
    let mut parts = vec![Vec::with_capacity(n / k + 1); k];
    for (i, v) in idx.into_iter().enumerate() {
        parts[i % k].push(v);
    }
    Ok(parts)
}

/// Splits the budget evenly between the initialisation and the radius search.
pub fn subsample_aggregate(
    s: &Dataset,
    params: &AggregateParams,
    mut f: impl FnMut(&Dataset) -> Point,
) -> Result<AggregateOutcome> {
    s.check_nonempty()?;
    let parts = random_partition(s.len(), params.k, params.seed)?;
    let mut outputs: Option<Dataset> = None;
    for part in &parts {
        let y = f(&s.select(part));
        let out = match &mut outputs {
            Some(o) => o,
            None => outputs.insert(Dataset::with_capacity(y.dim(), params.k)?),
        };
        out.push(&y)?;
    }
    let outputs = outputs.expect("k >= 1");
    let streams = Substreams::new(params.seed);
    let init_params = InitParams::new(
        params.domain.radius,
        params.r_min,
        params.domain.center.clone(),
        params.beta / 2.0,
        params.rho / 2.0,
        streams.child(&[1]).seed(),
    )?;
    let init = good_center(&outputs, &init_params)?;
    let cfg = SolveConfig::new(params.gamma, init.ball.radius, init.ball.center.clone())?;
    let search = dp_meb(&outputs, &cfg, params.beta / 2.0, params.rho / 2.0, streams.child(&[2]).seed())?;
    let (point, fell_back) = match &search.ball {
        Some(b) => (b.center.clone(), false),
        None => (init.ball.center.clone(), true),
    };
    Ok(AggregateOutcome {
        point,
        outputs,
        init,
        search,
        fell_back,
    })
}
