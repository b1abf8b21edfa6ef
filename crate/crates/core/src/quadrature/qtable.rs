use std::io::Write;
use std::path::Path;

use rand::Rng;

use super::gauss::adaptive_with_breaks;
use crate::error::{ensure_finite, ensure_positive, LabError, Result};
use crate::noise_model::SpectralDensity;
use crate::rng::{RngStream, StreamTag};

/// Cutoff `ξ*` beyond which `e^{−εξ²}φ(ξ)` is below `1e−12·Q_ε(0)`, and `Q_ε(0)` itself.
fn cutoff(phi: &SpectralDensity, eps: f64) -> (f64, f64) {
    let wide = (60.0 / eps).sqrt();
    let mut f0 = |x: f64| (-eps * x * x).exp() * phi.eval(x);
    let q0 = 2.0 * adaptive_with_breaks(&mut f0, &[0.0, wide.min(1.0), wide], 1e-300, 1e-13, 2000).value;
    // the envelope is decreasing past its maximum; start scanning there
    let rho = phi.growth_exponent();
    let step = 0.25 / eps.sqrt();
    let mut x = (rho / (2.0 * eps)).sqrt() + step;
    let sup = match phi {
        SpectralDensity::Power { .. } => None,
        SpectralDensity::Table(t) => Some(t.max_value()),
        _ => Some((0..=200).map(|i| phi.eval(i as f64 * 0.05)).fold(1.0, f64::max)),
    };
    let env = |x: f64| (-eps * x * x).exp() * sup.unwrap_or_else(|| phi.eval(x));
    while env(x) >= 1e-12 * q0.abs().max(f64::MIN_POSITIVE) && x < 1e6 {
        x += step;
    }
    (x, q0)
}

/// `2∫₀^{ξ*} e^{−εξ²} φ(ξ) w(xξ) dξ` with breakpoints at every half-period of the oscillation.
fn oscillatory(phi: &SpectralDensity, eps: f64, x: f64, xi_star: f64, scale: f64, weight: impl Fn(f64, f64) -> f64) -> f64 {
    let pieces = ((xi_star * x.abs() / std::f64::consts::PI).ceil() as usize).clamp(8, 20_000);
    let mut breaks: Vec<f64> = (0..=pieces).map(|i| xi_star * i as f64 / pieces as f64).collect();
    // resolve the algebraic behaviour at the origin
    breaks.insert(1, breaks[1] * 1e-3);
    let mut f = |xi: f64| (-eps * xi * xi).exp() * phi.eval(xi) * weight(xi, x * xi);
    2.0 * adaptive_with_breaks(&mut f, &breaks, 1e-13 * scale, 1e-12, 4 * pieces + 4000).value
}

/// `Q_ε(x) = ∫ e^{−εξ²} φ(ξ) e^{−ixξ} dξ = 2∫₀^∞ e^{−εξ²} φ(ξ) cos(xξ) dξ`.
pub fn q_eps(phi: &SpectralDensity, eps: f64, x: f64) -> Result<f64> {
    ensure_positive("eps", eps)?;
    ensure_finite("x", x)?;
    let (xi_star, q0) = cutoff(phi, eps);
    Ok(q_eps_with(phi, eps, x, xi_star, q0))
}

fn q_eps_with(phi: &SpectralDensity, eps: f64, x: f64, xi_star: f64, q0: f64) -> f64 {
    if x == 0.0 {
        return q0;
    }
    oscillatory(phi, eps, x, xi_star, q0, |_, u| u.cos())
}

fn dq_eps_with(phi: &SpectralDensity, eps: f64, x: f64, xi_star: f64, q0: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    -oscillatory(phi, eps, x, xi_star, q0, |xi, u| xi * u.sin())
}

/// Cubic Hermite table of `Q_ε` on a uniform grid of `[0, x_max]`, queried at `|x|`.
#[derive(Debug, Clone)]
pub struct QEpsTable {
    phi: SpectralDensity,
    eps: f64,
    xi_star: f64,
    q0: f64,
    h: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

/// Tolerance on `|table − direct|` relative to `Q_ε(0)`.
pub const TABLE_TOL: f64 = 1e-6;
const MAX_REFINEMENTS: usize = 5;

impl QEpsTable {
    /// Build with `k` cells, doubling up to five times until 100 probe points
    /// agree with direct evaluation.
    pub fn build(phi: &SpectralDensity, eps: f64, x_max: f64, k: usize) -> Result<Self> {
        ensure_positive("eps", eps)?;
        ensure_positive("x_max", x_max)?;
        if k < 64 {
            return Err(LabError::invalid("K", k, "need K >= 64"));
        }
        let (xi_star, q0) = cutoff(phi, eps);
        let mut rng = RngStream::new(0x51_7AB1E, 0, StreamTag::Custom(0x9e)).rng();
        let probes: Vec<f64> = (0..100).map(|_| rng.random_range(-x_max..=x_max)).collect();
        let direct: Vec<f64> = probes.iter().map(|&x| q_eps_with(phi, eps, x, xi_star, q0)).collect();
        let mut cells = k;
        let mut worst = f64::INFINITY;
        for _ in 0..=MAX_REFINEMENTS {
            let h = x_max / cells as f64;
            let nodes: Vec<f64> = (0..=cells).map(|i| i as f64 * h).collect();
            let table = Self {
                phi: phi.clone(),
                eps,
                xi_star,
                q0,
                h,
                values: nodes.iter().map(|&x| q_eps_with(phi, eps, x, xi_star, q0)).collect(),
                slopes: nodes.iter().map(|&x| dq_eps_with(phi, eps, x, xi_star, q0)).collect(),
            };
            worst = probes
                .iter()
                .zip(&direct)
                .map(|(&x, &d)| (table.eval(x) - d).abs())
                .fold(0.0, f64::max)
                / q0.abs();
            if worst <= TABLE_TOL {
                return Ok(table);
            }
            cells *= 2;
        }
        Err(LabError::TableRefinement {
            refinements: MAX_REFINEMENTS,
            max_error: worst,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn x_max(&self) -> f64 {
        self.h * (self.values.len() - 1) as f64
    }

    pub fn cells(&self) -> usize {
        self.values.len() - 1
    }

    pub fn q0(&self) -> f64 {
        self.q0
    }

    pub fn covers(&self, x: f64) -> bool {
        x.abs() <= self.x_max()
    }

    /// Interpolated `Q_ε(x)`; arguments beyond the table fall back to direct quadrature.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let a = x.abs();
        let s = a / self.h;
        let i = s as usize;
        if i >= self.cells() {
            if a <= self.x_max() {
                return self.values[self.cells()];
            }
            return q_eps_with(&self.phi, self.eps, a, self.xi_star, self.q0);
        }
        let t = s - i as f64;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * self.h, self.slopes[i + 1] * self.h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1
    }

    /// Write the nodes as CSV with columns `x,q`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "x,q")?;
        for (i, q) in self.values.iter().enumerate() {
            writeln!(f, "{:.16e},{:.16e}", i as f64 * self.h, q)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::gamma::gamma;

    fn phi() -> SpectralDensity {
        SpectralDensity::Power { exponent: 0.5 }
    }

    /// `Q_ε(x) = ε^{−3/4} Γ(3/4) ₁F₁(3/4; 1/2; −x²/4ε)` for `φ = |ξ|^{1/2}`.
    fn kummer_oracle(eps: f64, x: f64) -> f64 {
        let z = -x * x / (4.0 * eps);
        let (a, b) = (0.75, 0.5);
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 0..400 {
            let n = n as f64;
            term *= (a + n) / (b + n) * z / (n + 1.0);
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) && n > 3.0 * z.abs() {
                break;
            }
        }
        eps.powf(-0.75) * gamma(0.75) * sum
    }

    #[test]
    fn origin_closed_form() {
        assert_relative_eq!(q_eps(&phi(), 1.0, 0.0).unwrap(), gamma(0.75), max_relative = 1e-10);
        assert_relative_eq!(q_eps(&phi(), 0.01, 0.0).unwrap(), gamma(0.75) * 0.01f64.powf(-0.75), max_relative = 1e-10);
        assert_relative_eq!(gamma(0.75), 1.225417, max_relative = 1e-6);
    }

    #[test]
    fn matches_confluent_series() {
        for &(eps, x) in &[(1.0, 0.5), (1.0, 2.0), (0.5, 3.0), (1.0, 6.0)] {
            let q = q_eps(&phi(), eps, x).unwrap();
            let o = kummer_oracle(eps, x);
            assert!((q - o).abs() < 1e-9 * kummer_oracle(eps, 0.0), "eps={eps} x={x}: {q} vs {o}");
        }
    }

    #[test]
    fn even_and_rejects_nonpositive_eps() {
        assert_eq!(q_eps(&phi(), 0.3, 1.7).unwrap(), q_eps(&phi(), 0.3, -1.7).unwrap());
        assert!(q_eps(&phi(), 0.0, 1.0).is_err());
        assert!(q_eps(&phi(), -1.0, 1.0).is_err());
    }

    #[test]
    fn table_matches_direct_and_is_symmetric() {
        let t = QEpsTable::build(&phi(), 1.0, 8.0, 64).unwrap();
        assert_relative_eq!(t.eval(0.0), gamma(0.75), max_relative = 1e-6);
        for x in [0.13, 1.1, 3.7, 7.9] {
            assert_eq!(t.eval(x), t.eval(-x));
            assert!((t.eval(x) - q_eps(&phi(), 1.0, x).unwrap()).abs() <= TABLE_TOL * t.q0());
        }
        assert!(t.covers(-8.0) && !t.covers(8.5));
    }

    #[test]
    fn table_peak_scales_with_eps() {
        let a = QEpsTable::build(&phi(), 1.0, 4.0, 64).unwrap();
        let b = QEpsTable::build(&phi(), 0.01, 4.0, 64).unwrap();
        assert_relative_eq!(b.eval(0.0) / a.eval(0.0), 0.01f64.powf(-0.75), max_relative = 1e-6);
        assert_relative_eq!(0.01f64.powf(-0.75), 31.62, max_relative = 1e-3);
    }

    #[test]
    fn table_rejects_small_k() {
        assert!(QEpsTable::build(&phi(), 1.0, 4.0, 32).is_err());
    }
}
