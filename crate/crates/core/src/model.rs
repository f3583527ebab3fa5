//! Reaction constants, the scaling function and the derived time scales.
//!
//! A polymer of size `k` grows by one monomer at total rate
//! `lambda_k * u_k * u_1 / N` and fragments at rate `mu_k^N * u_k`, where
//! `mu_k^N = Phi(N) * mu_k` below the nucleus size `n_c` and `mu_{n_c}` at or
//! above it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fragmentation::FragmentationSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("nucleus size n_c must be at least 3, got {0}")]
    NucleusTooSmall(usize),
    #[error("growth table `lambda` needs at least n_c - 1 = {expected} entries, got {got}")]
    LambdaTooShort { expected: usize, got: usize },
    #[error("fragmentation table `mu` must hold mu_2..mu_n_c ({expected} entries), got {got}")]
    MuLength { expected: usize, got: usize },
    #[error("{name}[{index}] = {value} is not a positive finite rate")]
    NonPositiveRate { name: &'static str, index: usize, value: f64 },
    #[error("invalid scaling function: {0}")]
    Scaling(String),
    #[error("k_c is undefined for a tabulated scaling function without an explicit `k_c`")]
    UnsupportedKc,
    #[error("invalid fragmentation spec: {0}")]
    Fragmentation(String),
}

/// The function `Phi` that accelerates fragmentation of sub-nucleus polymers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalingFunction {
    /// `Phi(N) = N^gamma`, `gamma` in `(0, 1]`.
    Power { gamma: f64 },
    /// Tabulated values `Phi(1), Phi(2), ...`; sizes past the end reuse the
    /// last entry. The limit defining `k_c` cannot be read off finitely many
    /// samples, so it has to be supplied.
    Table {
        values: Vec<f64>,
        #[serde(default)]
        k_c: Option<usize>,
    },
}

impl ScalingFunction {
    pub fn power(gamma: f64) -> Self {
        ScalingFunction::Power { gamma }
    }

    pub fn eval(&self, n: u64) -> f64 {
        match self {
            ScalingFunction::Power { gamma } => (n as f64).powf(*gamma),
            ScalingFunction::Table { values, .. } => {
                let idx = (n.max(1) as usize - 1).min(values.len() - 1);
                values[idx]
            }
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        match self {
            ScalingFunction::Power { gamma } => {
                if !(gamma.is_finite() && *gamma > 0.0 && *gamma <= 1.0) {
                    return Err(ModelError::Scaling(format!("gamma = {gamma} not in (0, 1]")));
                }
            }
            ScalingFunction::Table { values, .. } => {
                if values.is_empty() {
                    return Err(ModelError::Scaling("empty table".into()));
                }
                if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(ModelError::Scaling("table entries must be positive".into()));
                }
                if values.windows(2).any(|w| w[1] < w[0]) {
                    return Err(ModelError::Scaling("table must be non-decreasing".into()));
                }
            }
        }
        Ok(())
    }
}

/// All constants of the polymerization model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Nucleus size.
    pub n_c: usize,
    /// `lambda_1, lambda_2, ...`; sizes past the end use the last entry.
    pub lambda: Vec<f64>,
    /// `mu_2, ..., mu_{n_c}`.
    pub mu: Vec<f64>,
    pub phi: ScalingFunction,
    pub fragmentation: FragmentationSpec,
    /// Initial number of size slots reserved by the simulator.
    #[serde(default = "default_k_max_tracked")]
    pub k_max_tracked: usize,
}

fn default_k_max_tracked() -> usize {
    64
}

/// Time scales derived from the model at a given total mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedScales {
    pub psi: f64,
    pub k_c: usize,
    pub rho_bar: f64,
}

impl ModelParams {
    pub fn new(
        n_c: usize,
        lambda: Vec<f64>,
        mu: Vec<f64>,
        phi: ScalingFunction,
        fragmentation: FragmentationSpec,
    ) -> Result<Self, ModelError> {
        let params = ModelParams {
            n_c,
            lambda,
            mu,
            phi,
            fragmentation,
            k_max_tracked: default_k_max_tracked(),
        };
        params.validate()?;
        Ok(params)
    }

    /// Constant rates `lambda_k = lambda`, `mu_k = mu` for every size.
    pub fn uniform(
        n_c: usize,
        lambda: f64,
        mu: f64,
        phi: ScalingFunction,
        fragmentation: FragmentationSpec,
    ) -> Result<Self, ModelError> {
        Self::new(n_c, vec![lambda; n_c - 1], vec![mu; n_c - 1], phi, fragmentation)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_c < 3 {
            return Err(ModelError::NucleusTooSmall(self.n_c));
        }
        if self.lambda.len() < self.n_c - 1 {
            return Err(ModelError::LambdaTooShort { expected: self.n_c - 1, got: self.lambda.len() });
        }
        if self.mu.len() != self.n_c - 1 {
            return Err(ModelError::MuLength { expected: self.n_c - 1, got: self.mu.len() });
        }
        for (i, &v) in self.lambda.iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::NonPositiveRate { name: "lambda", index: i + 1, value: v });
            }
        }
        for (i, &v) in self.mu.iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::NonPositiveRate { name: "mu", index: i + 2, value: v });
            }
        }
        self.phi.validate()?;
        self.fragmentation.validate().map_err(|e| ModelError::Fragmentation(e.to_string()))?;
        Ok(())
    }

    /// Growth constant `lambda_k`, `k >= 1`.
    pub fn lambda(&self, k: usize) -> f64 {
        assert!(k >= 1, "lambda_k is defined for k >= 1");
        let idx = (k - 1).min(self.lambda.len() - 1);
        self.lambda[idx]
    }

    /// Infimum of the growth table.
    pub fn lambda_inf(&self) -> f64 {
        self.lambda.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Raw fragmentation constant `mu_k`, `2 <= k <= n_c`; larger sizes map to `mu_{n_c}`.
    pub fn mu(&self, k: usize) -> f64 {
        assert!(k >= 2, "mu_k is defined for k >= 2");
        self.mu[k.min(self.n_c) - 2]
    }

    pub fn phi(&self, n: u64) -> f64 {
        self.phi.eval(n)
    }

    /// Per-polymer fragmentation rate of a size-`k` polymer at total mass `n`.
    pub fn mu_k_n(&self, k: usize, n: u64) -> f64 {
        assert!(k >= 2, "fragmentation rate requested for size {k} < 2");
        if k < self.n_c {
            self.phi(n) * self.mu(k)
        } else {
            self.mu(self.n_c)
        }
    }

    /// Nucleation time scale `Phi(N)^(n_c - 2) / N`.
    pub fn psi(&self, n: u64) -> f64 {
        self.phi(n).powi(self.n_c as i32 - 2) / n as f64
    }

    /// Largest `k` with `N / Phi(N)^(k-1) -> infinity`.
    pub fn k_c(&self) -> Result<usize, ModelError> {
        match &self.phi {
            ScalingFunction::Power { gamma } => {
                // gamma * (k - 1) < 1  <=>  k - 1 < 1 / gamma
                let inv = 1.0 / gamma;
                let nearest = inv.round();
                if (inv - nearest).abs() < 1e-9 {
                    Ok(nearest as usize)
                } else {
                    Ok(inv.ceil() as usize)
                }
            }
            ScalingFunction::Table { k_c: Some(k), .. } => Ok(*k),
            ScalingFunction::Table { k_c: None, .. } => Err(ModelError::UnsupportedKc),
        }
    }

    /// Limiting nucleation rate `lambda_1 * prod_{k=2}^{n_c-1} lambda_k / mu_k`.
    pub fn rho_bar(&self) -> f64 {
        (2..self.n_c).fold(self.lambda(1), |acc, k| acc * self.lambda(k) / self.mu(k))
    }

    /// For a power scaling, `Psi(N) / log N -> infinity` iff `gamma (n_c - 2) > 1`.
    /// Tabulated scalings are not checked and report `None`.
    pub fn is_admissible(&self) -> Option<bool> {
        match self.phi {
            ScalingFunction::Power { gamma } => Some(gamma * (self.n_c as f64 - 2.0) > 1.0),
            ScalingFunction::Table { .. } => None,
        }
    }

    pub fn derived_scales(&self, n: u64) -> Result<DerivedScales, ModelError> {
        Ok(DerivedScales { psi: self.psi(n), k_c: self.k_c()?, rho_bar: self.rho_bar() })
    }
}
