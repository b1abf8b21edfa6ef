//! Spectral densities `φ` and temporal kernels `γ₀`.

use std::path::Path;

use crate::error::{LabError, Result};
use crate::quadrature::gauss::{adaptive_to_infinity, adaptive_with_breaks};

/// Monotone (Fritsch–Carlson) cubic interpolant on a strictly increasing
/// nonnegative grid; constant extrapolation past the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneTable {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneTable {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(LabError::Config("table needs >= 2 rows with matching columns".into()));
        }
        if x[0] < 0.0 || x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::Config("table abscissae must be nonnegative and strictly increasing".into()));
        }
        if y.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(LabError::Config("table values must be finite and nonnegative".into()));
        }
        let n = x.len();
        let secants: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for i in 1..n - 1 {
            let (d0, d1) = (secants[i - 1], secants[i]);
            slopes[i] = if d0 * d1 <= 0.0 {
                0.0
            } else {
                let w0 = 2.0 * (x[i + 1] - x[i]) + (x[i] - x[i - 1]);
                let w1 = (x[i + 1] - x[i]) + 2.0 * (x[i] - x[i - 1]);
                (w0 + w1) / (w0 / d0 + w1 / d1)
            };
        }
        Ok(Self { x, y, slopes })
    }

    /// Load a two-column CSV with a header row.
    pub fn from_csv(path: &Path, x_col: &str, y_col: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| LabError::Config(format!("{}: missing column `{name}`", path.display())))
        };
        let (ix, iy) = (find(x_col)?, find(y_col)?);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| LabError::Config(format!("{}: unparsable row {:?}", path.display(), rec)))
            };
            xs.push(parse(ix)?);
            ys.push(parse(iy)?);
        }
        Self::new(xs, ys)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.abs();
        let n = self.x.len();
        if x <= self.x[0] {
            return self.y[0];
        }
        if x >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = self.x.partition_point(|&v| v <= x) - 1;
        let h = self.x[i + 1] - self.x[i];
        let s = (x - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.slopes[i] + h01 * self.y[i + 1] + h11 * h * self.slopes[i + 1]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn max_value(&self) -> f64 {
        self.y.iter().cloned().fold(0.0, f64::max)
    }
}

/// Spectral density `φ`, always evaluated as an even function.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectralDensity {
    /// `|ξ|^exponent`; the fractional case uses `exponent = 1 − 2H₁`.
    Power { exponent: f64 },
    /// `min(|ξ|, 1)^beta`.
    Saturated { beta: f64 },
    /// `ξ² e^{−ξ²}`.
    GaussBump,
    /// `φ ≡ value` (fails `φ(0) = 0`; kept for validation tests).
    Constant { value: f64 },
    /// `φ ≡ 0`.
    Zero,
    Table(MonotoneTable),
}

impl SpectralDensity {
    pub fn eval(&self, xi: f64) -> f64 {
        let a = xi.abs();
        match self {
            SpectralDensity::Power { exponent } => {
                if a == 0.0 {
                    0.0
                } else {
                    a.powf(*exponent)
                }
            }
            SpectralDensity::Saturated { beta } => a.min(1.0).powf(*beta),
            SpectralDensity::GaussBump => a * a * (-a * a).exp(),
            SpectralDensity::Constant { value } => *value,
            SpectralDensity::Zero => 0.0,
            SpectralDensity::Table(t) => t.eval(a),
        }
    }

    /// Polynomial growth exponent of `φ` at infinity (0 for bounded densities).
    pub fn growth_exponent(&self) -> f64 {
        match self {
            SpectralDensity::Power { exponent } => exponent.max(0.0),
            _ => 0.0,
        }
    }

    /// Largest `δ` (from a dyadic search) with `sup_{|ξ|≤δ} φ(ξ) < level`.
    pub fn small_ball_radius(&self, level: f64) -> Option<f64> {
        if let SpectralDensity::Power { exponent } = self {
            if *exponent > 0.0 {
                // strict inequality on the closed ball
                return Some(level.powf(1.0 / exponent) * (1.0 - 1e-9));
            }
        }
        let sup_on = |delta: f64| (0..=400).map(|i| self.eval(delta * i as f64 / 400.0)).fold(0.0, f64::max);
        let mut delta = 1.0;
        for _ in 0..60 {
            if sup_on(delta) < level {
                return Some(delta);
            }
            delta *= 0.5;
        }
        None
    }

    /// `∫_{|ξ|≥a} φ(ξ) / ξ² dξ` (both tails).
    pub fn inverse_square_tail(&self, a: f64) -> f64 {
        match self {
            SpectralDensity::Power { exponent } if *exponent < 1.0 => 2.0 * a.powf(exponent - 1.0) / (1.0 - exponent),
            _ => 2.0 * adaptive_to_infinity(|x| self.eval(x) / (x * x), a, 1e-14, 1e-11).value,
        }
    }
}

/// Temporal covariance kernel `γ₀`.
#[derive(Debug, Clone, PartialEq)]
pub enum TemporalKernel {
    /// `|τ|^{2H₀−2}`, singular at the origin.
    Power { h0: f64 },
    /// `e^{−rate |τ|}`.
    Exponential { rate: f64 },
    Constant { value: f64 },
    Table(MonotoneTable),
}

impl TemporalKernel {
    /// Exponent `α` when `γ₀(τ) = |τ|^α` with `α < 0`.
    pub fn singular_exponent(&self) -> Option<f64> {
        match self {
            TemporalKernel::Power { h0 } => Some(2.0 * h0 - 2.0),
            _ => None,
        }
    }

    pub fn eval(&self, tau: f64) -> Result<f64> {
        crate::error::ensure_finite("tau", tau)?;
        let a = tau.abs();
        Ok(match self {
            TemporalKernel::Power { h0 } => {
                if a == 0.0 {
                    return Err(LabError::SingularEvaluation { lag: tau });
                }
                a.powf(2.0 * h0 - 2.0)
            }
            TemporalKernel::Exponential { rate } => (-rate * a).exp(),
            TemporalKernel::Constant { value } => *value,
            TemporalKernel::Table(t) => t.eval(a),
        })
    }

    fn eval_unchecked(&self, tau: f64) -> f64 {
        self.eval(tau).unwrap_or(0.0)
    }

    /// `∬_{[a,b]×[c,d]} γ₀(r − v) dr dv`.
    pub fn cell_mass(&self, a: f64, b: f64, c: f64, d: f64) -> f64 {
        if b <= a || d <= c {
            return 0.0;
        }
        match self {
            TemporalKernel::Power { h0 } => {
                let alpha = 2.0 * h0 - 2.0;
                let norm = (alpha + 1.0) * (alpha + 2.0);
                let phi = |x: f64| x.abs().powf(alpha + 2.0) / norm;
                let v = phi(b - c) + phi(a - d) - phi(b - d) - phi(a - c);
                v.max(0.0)
            }
            TemporalKernel::Constant { value } => value * (b - a) * (d - c),
            _ => {
                // ∫ γ₀(δ) · |{r ∈ [a,b] : r − δ ∈ [c,d]}| dδ
                let overlap = |delta: f64| ((b.min(d + delta)) - (a.max(c + delta))).max(0.0);
                let mut breaks = vec![a - d, a - c, b - d, b - c, 0.0];
                breaks.retain(|x| *x >= a - d && *x <= b - c);
                breaks.sort_by(f64::total_cmp);
                breaks.dedup();
                let mut f = |delta: f64| self.eval_unchecked(delta) * overlap(delta);
                adaptive_with_breaks(&mut f, &breaks, 1e-15, 1e-12, 2000).value
            }
        }
    }

    /// `Γ_t = ∫_{−t}^{t} γ₀(r) dr`.
    pub fn mass(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            TemporalKernel::Power { h0 } => 2.0 * t.powf(2.0 * h0 - 1.0) / (2.0 * h0 - 1.0),
            TemporalKernel::Exponential { rate } => 2.0 * (1.0 - (-rate * t).exp()) / rate,
            TemporalKernel::Constant { value } => 2.0 * value * t,
            TemporalKernel::Table(_) => {
                let mut f = |x: f64| self.eval_unchecked(x);
                2.0 * adaptive_with_breaks(&mut f, &[0.0, t], 1e-15, 1e-12, 2000).value
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn monotone_table_reproduces_nodes_and_stays_monotone() {
        let xs: Vec<f64> = (0..20).map(|i| 0.1 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let t = MonotoneTable::new(xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_relative_eq!(t.eval(*x), *y, epsilon = 1e-15);
        }
        let mut prev = -1.0;
        for i in 0..1000 {
            let v = t.eval(1.9 * i as f64 / 1000.0);
            assert!(v >= prev);
            prev = v;
        }
        assert_eq!(t.eval(-0.5), t.eval(0.5));
        assert_eq!(t.eval(50.0), ys[19]);
    }

    #[test]
    fn table_rejects_unsorted_input() {
        assert!(MonotoneTable::new(vec![0.0, 2.0, 1.0], vec![0.0, 1.0, 2.0]).is_err());
        assert!(MonotoneTable::new(vec![-1.0, 2.0], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn generic_cell_mass_matches_closed_form_for_exponential_kernel() {
        // ∬_{[0,1]²} e^{−|r−v|} = 2(e^{−1} + 1 − 1) = 2 e^{-1}
        let k = TemporalKernel::Exponential { rate: 1.0 };
        assert_relative_eq!(k.cell_mass(0.0, 1.0, 0.0, 1.0), 2.0 * (-1f64).exp(), max_relative = 1e-11);
        // far rectangle: ∫₀¹∫₂³ e^{−(v−r)} dv dr = (1−e^{−1})(e^{−1}−e^{−2})
        let expect = (1.0 - (-1f64).exp()) * ((-1f64).exp() - (-2f64).exp());
        assert_relative_eq!(k.cell_mass(0.0, 1.0, 2.0, 3.0), expect, max_relative = 1e-11);
        assert_relative_eq!(k.mass(2.0), 2.0 * (1.0 - (-2f64).exp()), max_relative = 1e-14);
    }

    #[test]
    fn inverse_square_tail_power_closed_form_matches_quadrature() {
        let phi = SpectralDensity::Power { exponent: 0.5 };
        let closed = phi.inverse_square_tail(0.3);
        let quad = 2.0 * adaptive_to_infinity(|x| phi.eval(x) / (x * x), 0.3, 1e-14, 1e-12).value;
        assert_relative_eq!(closed, quad, max_relative = 1e-7);
    }
}
