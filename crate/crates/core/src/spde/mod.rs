//! Regularised solution `u^{ε,a}(t,x)` of the parabolic Anderson model as an
//! average of compensated exponentials over independent Brownian paths, on a
//! finite spectral noise, and its spatial averages `A_t(R)`.

mod average;
mod element;
mod noise;

pub use average::{
    elementary_mean, increment_moment, point_replicates, spatial_average, spatial_average_replicates, wick_solution, write_snapshot, AverageTable,
    FieldGrid, SolutionSample,
};
pub use element::{cells_for, SmoothedElement};
pub use noise::{cholesky_with_jitter, sample_noise, temporal_gram, FrequencyGrid, NoiseLayout, NoiseRealization};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, LabError, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpdeConfig {
    pub eps: f64,
    /// Time cells per unit time; the time mollifier is one cell wide.
    pub cells_per_unit: usize,
    /// Sub-steps per cell in the element quadrature.
    pub sub_steps: usize,
    /// Brownian paths per inner ensemble.
    pub n_inner: usize,
    /// Independent inner ensembles per noise replicate (unbiased products need one per factor).
    pub ensembles: usize,
    /// x-grid spacing; `min(0.25, 1/√t)` when absent.
    pub dx: Option<f64>,
    /// Frequency cutoff chosen so `e^{−εΞ²/2}` falls below this.
    pub spectral_floor: f64,
    /// Spatial period `L ≥ period_factor·R + period_pad`.
    pub period_factor: f64,
    pub period_pad: f64,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SpdeConfig {
    fn default() -> Self {
        Self {
            eps: 1.0,
            cells_per_unit: 50,
            sub_steps: 4,
            n_inner: 32,
            ensembles: 2,
            dx: None,
            spectral_floor: 1e-8,
            period_factor: 2.5,
            period_pad: 10.0,
            seed: 1,
            execution: Execution::Parallel,
        }
    }
}

impl SpdeConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("eps", self.eps)?;
        if self.cells_per_unit == 0 || self.sub_steps == 0 || self.n_inner == 0 || self.ensembles == 0 {
            return Err(LabError::Config("cells_per_unit, sub_steps, n_inner and ensembles must be positive".into()));
        }
        if !(self.spectral_floor > 0.0 && self.spectral_floor < 1.0) {
            return Err(LabError::invalid("spectral_floor", self.spectral_floor, "must lie in (0,1)"));
        }
        if let Some(dx) = self.dx {
            ensure_positive("dx", dx)?;
        }
        ensure_positive("period_factor", self.period_factor)?;
        ensure_positive("period_pad", self.period_pad)?;
        Ok(())
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.cells_per_unit as f64
    }

    /// `Ξ_max = √(2 ln(1/floor)/ε)`.
    pub fn xi_max(&self) -> f64 {
        (2.0 * (1.0 / self.spectral_floor).ln() / self.eps).sqrt()
    }

    /// Frequency count giving period at least `period_factor·R + period_pad`.
    pub fn frequencies_for(&self, r: f64) -> usize {
        let l = self.period_factor * r + self.period_pad;
        (self.xi_max() * l / (2.0 * std::f64::consts::PI)).ceil().max(1.0) as usize
    }

    pub fn dx_for(&self, t: f64) -> f64 {
        self.dx.unwrap_or_else(|| if t > 0.0 { 0.25f64.min(1.0 / t.sqrt()) } else { 0.25 })
    }

    /// Number of cells of `[0, t]`; `t` must be a multiple of the cell width.
    pub fn cells_for(&self, t: f64) -> Result<usize> {
        let x = t * self.cells_per_unit as f64;
        let n = x.round();
        if !(t >= 0.0) || (x - n).abs() > 1e-9 * x.max(1.0) {
            return Err(LabError::invalid("t", t, format!("must be a multiple of 1/{}", self.cells_per_unit)));
        }
        Ok(n as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_meets_spectral_floor() {
        for eps in [0.1, 1.0, 4.0] {
            let c = SpdeConfig { eps, ..Default::default() };
            let x = c.xi_max();
            assert!(((-0.5 * eps * x * x).exp() - 1e-8).abs() < 1e-14);
        }
    }

    #[test]
    fn period_covers_requested_window() {
        let c = SpdeConfig::default();
        let k = c.frequencies_for(40.0);
        let l = 2.0 * std::f64::consts::PI * k as f64 / c.xi_max();
        assert!(l >= 110.0);
    }

    #[test]
    fn dx_rule() {
        let c = SpdeConfig::default();
        assert_eq!(c.dx_for(1.0), 0.25);
        assert_eq!(c.dx_for(25.0), 0.2);
        assert!(c.cells_for(0.5).is_ok());
        assert!(c.cells_for(0.51).is_err());
        assert!(SpdeConfig { n_inner: 0, ..Default::default() }.validate().is_err());
    }
}
