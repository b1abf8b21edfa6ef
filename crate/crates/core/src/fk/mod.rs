//! Feynman–Kac functionals `ℐ^{i,j}_{t_i,t_j,ε}(z)` of pairs of Brownian paths
//! and the moments and covariances built from them.

mod covariance;
mod engine;
mod oracle;

pub use covariance::{chaos_covariance, EXP_GUARD, TAIL_RATIO_MAX, limiting_covariance, moment_estimate, z_functionals, ZOptions, ZSamples};
pub use engine::{g_fn, FkEngine, PathEnsemble};
pub use oracle::{first_chaos_decay, first_moment_oracle, OracleResolution};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, LabError, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FkConfig {
    pub eps: f64,
    /// Time cells per unit time.
    pub cells_per_unit: usize,
    pub z_max: f64,
    /// Gauss–Legendre nodes on `[−z_max, z_max]` (rounded up to a multiple of 8).
    pub z_nodes: usize,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for FkConfig {
    fn default() -> Self {
        Self {
            eps: 0.01,
            cells_per_unit: 64,
            z_max: 16.0,
            z_nodes: 128,
            n_paths: 4000,
            seed: 1,
            execution: Execution::Parallel,
        }
    }
}

impl FkConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("eps", self.eps)?;
        ensure_positive("z_max", self.z_max)?;
        if self.cells_per_unit < 16 {
            return Err(LabError::invalid("cells_per_unit", self.cells_per_unit, "need M >= 16"));
        }
        if self.n_paths < 100 {
            return Err(LabError::invalid("n_paths", self.n_paths, "need n_paths >= 100"));
        }
        if self.z_nodes == 0 {
            return Err(LabError::invalid("z_nodes", 0, "need at least one node"));
        }
        Ok(())
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.cells_per_unit as f64
    }

    /// Number of cells covering `[0, t]`; `t` must be a multiple of the cell width.
    pub fn cells_for(&self, t: f64) -> Result<usize> {
        crate::error::ensure_nonnegative("t", t)?;
        let x = t * self.cells_per_unit as f64;
        let n = x.round();
        if (x - n).abs() > 1e-9 * x.max(1.0) {
            return Err(LabError::invalid("t", t, format!("must be a multiple of 1/{}", self.cells_per_unit)));
        }
        Ok(n as usize)
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub seed: u64,
}

impl McEstimate {
    /// Sample mean and `sd/√n` of independent replicate values.
    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n, seed };
        }
        let mean = crate::exec::pairwise_sum(samples) / n as f64;
        let stderr = if n > 1 {
            let dev: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
            (crate::exec::pairwise_sum(&dev) / (n - 1) as f64 / n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        Self { mean, stderr, n, seed }
    }

    pub fn exact(value: f64, seed: u64) -> Self {
        Self {
            mean: value,
            stderr: 0.0,
            n: 0,
            seed,
        }
    }

    pub fn scaled(self, c: f64) -> Self {
        Self {
            mean: c * self.mean,
            stderr: c.abs() * self.stderr,
            ..self
        }
    }

    /// `|a − b| ≤ k·√(se_a² + se_b²) + slack`.
    pub fn agrees_with(&self, other: &McEstimate, k: f64, slack: f64) -> bool {
        (self.mean - other.mean).abs() <= k * self.stderr.hypot(other.stderr) + slack
    }
}
