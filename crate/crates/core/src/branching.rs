//! The stable-polymer branching process.
//!
//! Every polymer grows by one unit at rate `alpha` and fragments at rate
//! `mu`; fragments smaller than `n_c` are discarded. All polymers carry the
//! same total rate, so the next event picks a polymer uniformly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fragmentation::FragmentationSpec;
use crate::seeds::replication_seed;

pub const DEFAULT_POPULATION_CAP: usize = 100_000;
/// Intervals of the population-curve grid.
pub const CURVE_INTERVALS: usize = 256;
/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BranchingError {
    #[error("invalid branching parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingParams {
    pub alpha: f64,
    pub mu: f64,
    pub n_c: usize,
    pub fragmentation: FragmentationSpec,
    /// Size `m >= n_c` of the ancestor.
    pub initial_size: usize,
}

impl BranchingParams {
    pub fn new(
        alpha: f64,
        mu: f64,
        n_c: usize,
        fragmentation: FragmentationSpec,
        initial_size: usize,
    ) -> Result<Self, BranchingError> {
        let p = BranchingParams { alpha, mu, n_c, fragmentation, initial_size };
        p.validate()?;
        Ok(p)
    }

    /// `mu = 0` is accepted: the population then never branches.
    pub fn validate(&self) -> Result<(), BranchingError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(BranchingError::InvalidParams(format!("alpha = {} must be positive", self.alpha)));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(BranchingError::InvalidParams(format!("mu = {} must be non-negative", self.mu)));
        }
        if self.n_c < 2 {
            return Err(BranchingError::InvalidParams(format!("n_c = {} must be at least 2", self.n_c)));
        }
        if self.initial_size < self.n_c {
            return Err(BranchingError::InvalidParams(format!(
                "initial size {} below n_c = {}",
                self.initial_size, self.n_c
            )));
        }
        self.fragmentation.validate().map_err(|e| BranchingError::InvalidParams(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingRecord {
    /// `(t, population)` on a regular grid over `[0, horizon]`, cut at the
    /// end of the run, followed by the final point.
    pub population_curve: Vec<(f64, u64)>,
    pub extinct: bool,
    pub extinction_time: Option<f64>,
    pub capped: bool,
    pub end_time: f64,
    /// Least-squares slope of the log population over `[end/2, end]`.
    pub growth_rate_estimate: Option<f64>,
    pub events: u64,
}

impl BranchingRecord {
    pub fn survived(&self) -> bool {
        !self.extinct
    }
}

/// Simulates one branching path started from a single polymer.
pub fn run_branching(
    params: &BranchingParams,
    horizon: f64,
    population_cap: usize,
    seed: u64,
) -> Result<BranchingRecord, BranchingError> {
    params.validate()?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(BranchingError::InvalidParams(format!("horizon = {horizon} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_polymer = params.alpha + params.mu;
    let p_growth = params.alpha / per_polymer;
    let grid_step = horizon / CURVE_INTERVALS as f64;

    let mut sizes = vec![params.initial_size];
    let mut buf = Vec::new();
    let mut curve = Vec::with_capacity(CURVE_INTERVALS + 2);
    let mut next_grid = 0usize;
    let mut t = 0.0;
    let mut events = 0u64;
    let mut capped = false;

    loop {
        if sizes.is_empty() {
            break;
        }
        if sizes.len() >= population_cap {
            capped = true;
            break;
        }
        let dt = <Exp1 as Distribution<f64>>::sample(&Exp1, &mut rng) / (sizes.len() as f64 * per_polymer);
        let until = (t + dt).min(horizon);
        while next_grid <= CURVE_INTERVALS && next_grid as f64 * grid_step < until {
            curve.push((next_grid as f64 * grid_step, sizes.len() as u64));
            next_grid += 1;
        }
        if t + dt > horizon {
            t = horizon;
            break;
        }
        t += dt;
        let i = rng.random_range(0..sizes.len());
        if rng.random::<f64>() < p_growth {
            sizes[i] += 1;
        } else {
            let k = sizes.swap_remove(i);
            params.fragmentation.sample_into(k, &mut rng, &mut buf);
            let before = sizes.len();
            sizes.extend(buf.iter().copied().filter(|&s| s >= params.n_c));
            debug_assert!(sizes[before..].iter().all(|&s| s >= params.n_c));
        }
        events += 1;
    }
    let extinct = sizes.is_empty();
    if curve.last().is_none_or(|&(last, _)| last < t) {
        curve.push((t, sizes.len() as u64));
    } else if let Some(last) = curve.last_mut() {
        last.1 = sizes.len() as u64;
    }
    let growth_rate_estimate = if extinct { None } else { log_slope(&curve, t / 2.0) };
    Ok(BranchingRecord {
        population_curve: curve,
        extinct,
        extinction_time: extinct.then_some(t),
        capped,
        end_time: t,
        growth_rate_estimate,
        events,
    })
}

/// Least-squares slope of `ln(population)` against time over points with
/// `t >= from` and a positive population; `None` with fewer than 3 points.
fn log_slope(curve: &[(f64, u64)], from: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        curve.iter().filter(|&&(t, z)| t >= from && z > 0).map(|&(t, z)| (t, (z as f64).ln())).collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `(1 + epsilon) (alpha / (alpha + mu))^(k0 - n_c)`: a lower bound on the
/// mean number of stable fragments of a polymer born at size `k0`.
pub fn offspring_mean_bound(params: &BranchingParams, epsilon: f64, k0: usize) -> f64 {
    assert!(k0 >= params.n_c, "k0 must be at least n_c");
    let ratio = params.alpha / (params.alpha + params.mu);
    (1.0 + epsilon) * ratio.powi((k0 - params.n_c) as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalEstimate {
    pub replications: usize,
    pub survivors: usize,
    pub capped: usize,
    pub survival_prob: f64,
    /// 95% normal-approximation interval, clamped to `[0, 1]`.
    pub survival_ci: (f64, f64),
    /// Mean per-run log-population slope over surviving runs.
    pub growth_rate: Option<f64>,
    pub growth_rate_ci: Option<(f64, f64)>,
    pub growth_samples: usize,
}

impl SurvivalEstimate {
    pub fn survival_excludes_zero(&self) -> bool {
        self.survival_ci.0 > 0.0
    }
}

/// Replicates [`run_branching`] with seeds derived from `seed`.
pub fn estimate_survival(
    params: &BranchingParams,
    replications: usize,
    horizon: f64,
    cap: usize,
    seed: u64,
) -> Result<SurvivalEstimate, BranchingError> {
    if replications == 0 {
        return Err(BranchingError::InvalidParams("replications must be at least 1".into()));
    }
    params.validate()?;
    let records: Vec<BranchingRecord> = (0..replications as u64)
        .into_par_iter()
        .map(|r| run_branching(params, horizon, cap, replication_seed(seed, 0, r)))
        .collect::<Result<_, _>>()?;
    Ok(summarize(&records))
}

fn summarize(records: &[BranchingRecord]) -> SurvivalEstimate {
    let n = records.len() as f64;
    let survivors = records.iter().filter(|r| r.survived()).count();
    let capped = records.iter().filter(|r| r.capped).count();
    let p = survivors as f64 / n;
    let half = Z95 * (p * (1.0 - p) / n).sqrt();
    let slopes: Vec<f64> = records.iter().filter(|r| r.survived()).filter_map(|r| r.growth_rate_estimate).collect();
    let (growth_rate, growth_rate_ci) = match slopes.len() {
        0 => (None, None),
        1 => (Some(slopes[0]), None),
        m => {
            let mean = slopes.iter().sum::<f64>() / m as f64;
            let var = slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            let h = Z95 * (var / m as f64).sqrt();
            (Some(mean), Some((mean - h, mean + h)))
        }
    };
    SurvivalEstimate {
        replications: records.len(),
        survivors,
        capped,
        survival_prob: p,
        survival_ci: ((p - half).max(0.0), (p + half).min(1.0)),
        growth_rate,
        growth_rate_ci,
        growth_samples: slopes.len(),
    }
}

/// Settings of the empirical threshold search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaSearch {
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
    pub replications: usize,
    pub horizon: f64,
    pub cap: usize,
    pub seed: u64,
}

/// Bisection on `alpha / mu` (with `mu` fixed from `base`) for the smallest
/// ratio whose survival interval excludes 0. `None` when even `hi` fails.
pub fn find_kappa0(base: &BranchingParams, search: KappaSearch) -> Result<Option<f64>, BranchingError> {
    let survives = |ratio: f64| -> Result<bool, BranchingError> {
        let mut p = base.clone();
        p.alpha = ratio * base.mu;
        let est = estimate_survival(&p, search.replications, search.horizon, search.cap, search.seed)?;
        Ok(est.survival_excludes_zero())
    };
    let (mut lo, mut hi) = (search.lo, search.hi);
    if !survives(hi)? {
        return Ok(None);
    }
    if survives(lo)? {
        return Ok(Some(lo));
    }
    for _ in 0..search.iterations {
        let mid = 0.5 * (lo + hi);
        if survives(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}
