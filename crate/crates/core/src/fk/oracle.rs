use std::f64::consts::PI;

use crate::error::{ensure_nonnegative, ensure_positive, Result};
use crate::noise_model::{ell_r_unchecked, NoiseSpec, TemporalKernel};
use crate::quadrature::gauss::{adaptive_to_infinity, adaptive_with_breaks, GaussLegendre};

/// Panel counts for the deterministic triple quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleResolution {
    pub time_panels: usize,
    pub xi_panels: usize,
}

impl Default for OracleResolution {
    fn default() -> Self {
        Self {
            time_panels: 8,
            xi_panels: 32,
        }
    }
}

impl OracleResolution {
    pub fn doubled(self) -> Self {
        Self {
            time_panels: 2 * self.time_panels,
            xi_panels: 2 * self.xi_panels,
        }
    }
}

/// `2∫₀^∞ e^{−aξ²} φ(ξ) cos(zξ) dξ` by fixed composite Gauss–Legendre in `u = √ξ`.
fn gaussian_cosine(spec: &NoiseSpec, gl: &GaussLegendre, a: f64, z: f64, panels: usize) -> f64 {
    let xi_max = (46.0 / a).sqrt();
    2.0 * gl.integrate_composite(0.0, xi_max.sqrt(), panels, |u| {
        let xi = u * u;
        (-a * xi * xi).exp() * spec.phi.eval(xi) * (z * xi).cos() * 2.0 * u
    })
}

/// Smoothstep map of `[a, b]`: flattens algebraic endpoint behaviour.
fn graded<F: FnMut(f64) -> f64>(gl: &GaussLegendre, a: f64, b: f64, panels: usize, mut f: F) -> f64 {
    if b <= a {
        return 0.0;
    }
    gl.integrate_composite(0.0, 1.0, panels, |s| {
        let w = s * s * (3.0 - 2.0 * s);
        f(a + (b - a) * w) * (b - a) * 6.0 * s * (1.0 - s)
    })
}

/// `∫_{[d_lo, d_hi]} γ₀(d) g(d) dd`, with `s = d^{1+α}` absorbing a power singularity at 0.
fn lag_integral<F: FnMut(f64) -> f64>(kernel: &TemporalKernel, gl: &GaussLegendre, d_lo: f64, d_hi: f64, panels: usize, mut g: F) -> f64 {
    if d_hi <= d_lo {
        return 0.0;
    }
    match kernel.singular_exponent() {
        Some(alpha) => {
            let p = 1.0 + alpha;
            gl.integrate_composite(d_lo.powf(p), d_hi.powf(p), panels, |s| g(s.powf(1.0 / p)) / p)
        }
        None => gl.integrate_composite(d_lo, d_hi, panels, |d| kernel.eval(d).unwrap_or(0.0) * g(d)),
    }
}

/// Deterministic `E[ℐ^{i,j}_{t_i,t_j,ε}(z)]`:
/// `∬ γ₀(r−v) ∫ e^{−εξ²} φ(ξ) cos(zξ) e^{−((t_i−r)+(t_j−v))ξ²/2} dξ dr dv`.
///
/// Uses its own Gauss–Legendre rules (not the `Q_ε` table or cell masses) so
/// it can serve as an independent check of the Monte Carlo engine.
pub fn first_moment_oracle(spec: &NoiseSpec, t_i: f64, t_j: f64, z: f64, eps: f64, res: OracleResolution) -> Result<f64> {
    ensure_nonnegative("t_i", t_i)?;
    ensure_nonnegative("t_j", t_j)?;
    ensure_positive("eps", eps)?;
    crate::error::ensure_finite("z", z)?;
    if t_i == 0.0 || t_j == 0.0 {
        return Ok(0.0);
    }
    let gl = GaussLegendre::new(8);
    let p = res.time_panels;
    let q = |r: f64, v: f64| gaussian_cosine(spec, &gl, eps + 0.5 * ((t_i - r) + (t_j - v)), z, res.xi_panels);
    let inner = |r: f64| {
        // v < r: d = r − v ∈ [max(0, r − t_j), r]; v > r: d = v − r ∈ [0, t_j − r]
        let below = lag_integral(&spec.gamma0, &gl, (r - t_j).max(0.0), r, p, |d| q(r, r - d));
        let above = lag_integral(&spec.gamma0, &gl, 0.0, (t_j - r).max(0.0), p, |d| q(r, r + d));
        below + above
    };
    let split = t_j.min(t_i);
    Ok(graded(&gl, 0.0, split, p, inner) + graded(&gl, split, t_i, p, inner))
}

/// `G(ξ) = ∬_{[0,t]²} γ₀(r−v) e^{−(r+v)ξ²/2} dr dv`.
fn time_factor(spec: &NoiseSpec, t: f64, xi: f64) -> f64 {
    let c = 0.5 * xi * xi;
    // pairs with r − v = d contribute e^{−cd} ∫₀^{t−d} e^{−2cv} dv
    let w = |d: f64| {
        let len = t - d;
        let inner = if c * len < 1e-12 { len } else { -(-2.0 * c * len).exp_m1() / (2.0 * c) };
        (-c * d).exp() * inner
    };
    let v = match spec.gamma0.singular_exponent() {
        Some(alpha) => {
            let p = 1.0 + alpha;
            let mut f = |s: f64| w(s.powf(1.0 / p)) / p;
            adaptive_with_breaks(&mut f, &[0.0, t.powf(p)], 1e-15, 1e-11, 200).value
        }
        None => {
            let mut f = |d: f64| spec.gamma0.eval(d).unwrap_or(0.0) * w(d);
            adaptive_with_breaks(&mut f, &[0.0, t], 1e-15, 1e-11, 200).value
        }
    };
    2.0 * v
}

/// `(2R)^{−1} Var[Π₁ A_t(R)] = 2π ∬ γ₀(r−v) ∫ ℓ_R(ξ) φ(ξ) e^{−εξ²} e^{−(r+v)ξ²/2} dξ dr dv`,
/// one value per `R`. `eps = 0` gives the unmollified quantity.
pub fn first_chaos_decay(spec: &NoiseSpec, t: f64, rs: &[f64], eps: f64) -> Result<Vec<f64>> {
    ensure_nonnegative("t", t)?;
    ensure_nonnegative("eps", eps)?;
    rs.iter()
        .map(|&r| {
            ensure_positive("R", r)?;
            if t == 0.0 {
                return Ok(0.0);
            }
            let f = |xi: f64| spec.phi.eval(xi) * (-eps * xi * xi).exp() * time_factor(spec, t, xi);
            // resolve sin² oscillations up to X, then average sin² to ½
            let x_cut = 200.0 * PI / r;
            let breaks: Vec<f64> = (0..=200).map(|k| k as f64 * PI / r).collect();
            let mut near = |xi: f64| ell_r_unchecked(r, xi) * f(xi);
            let head = adaptive_with_breaks(&mut near, &breaks, 1e-14, 1e-10, 4000).value;
            let tail = adaptive_to_infinity(|xi| f(xi) / (2.0 * PI * r * xi * xi), x_cut, 1e-14, 1e-10).value;
            Ok(2.0 * PI * 2.0 * (head + tail))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::gamma::gamma;

    #[test]
    fn vanishes_on_empty_domain() {
        let s = NoiseSpec::default_h2();
        assert_eq!(first_moment_oracle(&s, 0.0, 1.0, 0.0, 0.1, OracleResolution::default()).unwrap(), 0.0);
        assert_eq!(first_chaos_decay(&s, 0.0, &[1.0], 0.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn even_in_z() {
        let s = NoiseSpec::default_h2();
        let r = OracleResolution::default();
        let a = first_moment_oracle(&s, 1.0, 0.5, 0.8, 0.1, r).unwrap();
        let b = first_moment_oracle(&s, 1.0, 0.5, -0.8, 0.1, r).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decreases_in_eps() {
        let s = NoiseSpec::default_h2();
        let r = OracleResolution::default();
        let vals: Vec<f64> = [0.1, 1.0, 10.0, 100.0]
            .iter()
            .map(|&e| first_moment_oracle(&s, 1.0, 1.0, 0.0, e, r).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        assert!(vals[3] < 0.05 * vals[0]);
    }

    #[test]
    fn large_eps_limit_is_product_of_closed_forms() {
        // for ε ≫ t the Gaussian time factor is negligible: E[ℐ] ≈ Q_ε(0)·8/3
        let s = NoiseSpec::default_h2();
        let eps = 1e4;
        let v = first_moment_oracle(&s, 1.0, 1.0, 0.0, eps, OracleResolution::default()).unwrap();
        assert_relative_eq!(v, gamma(0.75) * eps.powf(-0.75) * 8.0 / 3.0, max_relative = 1e-4);
    }

    #[test]
    fn self_converged_regression_value() {
        let s = NoiseSpec::default_h2();
        let r = OracleResolution::default();
        let a = first_moment_oracle(&s, 1.0, 1.0, 0.0, 0.01, r).unwrap();
        let b = first_moment_oracle(&s, 1.0, 1.0, 0.0, 0.01, r.doubled()).unwrap();
        assert!((a - b).abs() < 1e-4 * b, "{a} vs {b}");
        println!("oracle(t=1, eps=0.01, z=0) = {b:.9e}");
    }

    #[test]
    fn first_chaos_decays_and_obeys_majorant() {
        let s = NoiseSpec::default_h2();
        let rs = [10.0, 100.0, 1000.0];
        let v = first_chaos_decay(&s, 1.0, &rs, 0.0).unwrap();
        assert!(v[2] < v[1] && v[1] < v[0]);
        assert!(v[2] < 0.2 * v[0]);
        // G(ξ) ≤ ∬γ₀ ≤ t·Γ_t, and ∫ℓ_Rφ = 2/√(πR) for φ = |ξ|^{1/2}
        for (&r, &x) in rs.iter().zip(&v) {
            let majorant = 2.0 * PI * 1.0 * s.gamma_mass(1.0).unwrap() * 2.0 / (PI * r).sqrt();
            assert!(x > 0.0 && x <= majorant, "R={r}: {x} vs {majorant}");
        }
    }
}
