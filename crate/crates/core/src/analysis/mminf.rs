//! Hitting times of the `M/M/inf` queue: exact Laplace transform and an
//! independent path simulator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::AnalysisError;

/// Largest level accepted by [`mm_infinity_laplace`].
pub const MAX_LAPLACE_LEVEL: u64 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MMInfParams {
    pub arrival: f64,
    /// Service rate per customer in the system.
    pub service: f64,
    /// Level whose first hitting time is studied.
    pub n: u64,
    pub initial: u64,
    /// Customers per arrival.
    #[serde(default = "one")]
    pub batch: u64,
}

fn one() -> u64 {
    1
}

impl MMInfParams {
    pub fn new(arrival: f64, service: f64, n: u64) -> Self {
        MMInfParams { arrival, service, n, initial: 0, batch: 1 }
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.arrival.is_finite() && self.arrival > 0.0) {
            return Err(AnalysisError::InvalidInput(format!("arrival rate {} must be positive", self.arrival)));
        }
        if !(self.service.is_finite() && self.service >= 0.0) {
            return Err(AnalysisError::InvalidInput(format!("service rate {} must be non-negative", self.service)));
        }
        if self.batch == 0 {
            return Err(AnalysisError::InvalidInput("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `E[exp(-service * xi * T_n)]` for a queue started empty, as `1 / D(xi)`
/// with `D(xi) = sum_k C(n, k) beta^-k prod_{i<k} (xi + i)` and
/// `beta = arrival / service`.
pub fn mm_infinity_laplace(params: &MMInfParams, xi: f64) -> Result<f64, AnalysisError> {
    params.validate()?;
    if params.initial != 0 || params.batch != 1 {
        return Err(AnalysisError::InvalidInput("closed form needs an empty start and unit arrivals".into()));
    }
    if !(params.service > 0.0) {
        return Err(AnalysisError::InvalidInput("closed form needs a positive service rate".into()));
    }
    if params.n > MAX_LAPLACE_LEVEL {
        return Err(AnalysisError::Precision(format!(
            "level {} exceeds {MAX_LAPLACE_LEVEL}; use a smaller n",
            params.n
        )));
    }
    if !(xi.is_finite() && xi >= 0.0) {
        return Err(AnalysisError::InvalidInput(format!("xi = {xi} must be non-negative")));
    }
    let beta = params.arrival / params.service;
    let n = params.n as f64;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=params.n {
        let k = k as f64;
        term *= (n - k + 1.0) / k * (xi + k - 1.0) / beta;
        sum += term;
    }
    if !sum.is_finite() {
        return Err(AnalysisError::Precision(format!("series diverged at n = {}; use a smaller n", params.n)));
    }
    Ok(1.0 / sum)
}

/// First time the queue content reaches at least `n`.
pub fn mm_infinity_simulate<R: Rng + ?Sized>(params: &MMInfParams, rng: &mut R) -> Result<f64, AnalysisError> {
    params.validate()?;
    let mut x = params.initial;
    let mut t = 0.0;
    while x < params.n {
        let death = params.service * x as f64;
        let total = params.arrival + death;
        t += <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / total;
        if rng.random::<f64>() * total < params.arrival {
            x += params.batch;
        } else {
            x -= 1;
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaplaceEstimate {
    pub paths: usize,
    pub mean: f64,
    pub standard_error: f64,
}

/// Monte Carlo estimate of `E[exp(-service * xi * T_n)]` from simulated paths.
pub fn mm_infinity_monte_carlo(
    params: &MMInfParams,
    xi: f64,
    paths: usize,
    seed: u64,
) -> Result<LaplaceEstimate, AnalysisError> {
    if paths < 2 {
        return Err(AnalysisError::InsufficientData { what: "Laplace Monte Carlo paths", needed: 2, got: paths });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(paths);
    for _ in 0..paths {
        let t = mm_infinity_simulate(params, &mut rng)?;
        values.push((-params.service * xi * t).exp());
    }
    let n = paths as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(LaplaceEstimate { paths, mean, standard_error: (var / n).sqrt() })
}
