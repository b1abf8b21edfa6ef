//! Importance-sampled `K₁,ₚ`, `K₂,ₚ` functionals and the explicit bounds they
//! are checked against, plus the `∫ℓ_Rφ` decay curve.

mod kp;
mod telescoping;

pub use kp::{k1p, k2p, KEstimate};
pub use telescoping::{expand, telescoping_exponents, MAX_ORDER};

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{ensure_nonnegative, ensure_positive, LabError, Result};
use crate::exec::Execution;
use crate::noise_model::{ell_r_integral, ell_r_unchecked, Family, NoiseSpec};
use crate::quadrature::gauss::{adaptive_to_infinity, adaptive_with_breaks};

/// Weight `Θ` applied to the last frequency `η_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightTheta {
    Unit,
    /// Heat kernel `G(a, x) = (2πa)^{−1/2} e^{−x²/2a}`.
    HeatKernel { a: f64 },
    Ell { r: f64 },
    /// `ℓ_R · 1_{|x| ≥ δ}`.
    IndicatorComplement { r: f64, delta: f64 },
}

impl WeightTheta {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightTheta::Unit => Ok(()),
            WeightTheta::HeatKernel { a } => {
                if a > 0.0 && a < 1.0 {
                    Ok(())
                } else {
                    Err(LabError::invalid("a", a, "heat-kernel weight needs a in (0,1)"))
                }
            }
            WeightTheta::Ell { r } => ensure_positive("R", r).map(drop),
            WeightTheta::IndicatorComplement { r, delta } => {
                ensure_positive("R", r)?;
                ensure_positive("delta", delta).map(drop)
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            WeightTheta::Unit => 1.0,
            WeightTheta::HeatKernel { a } => (-x * x / (2.0 * a)).exp() / (2.0 * PI * a).sqrt(),
            WeightTheta::Ell { r } => ell_r_unchecked(r, x),
            WeightTheta::IndicatorComplement { r, delta } => {
                if x.abs() >= delta {
                    ell_r_unchecked(r, x)
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫ Θ(x)(1 + f(x)) dx` for even `f`; infinite for `Θ ≡ 1`.
    pub fn mass_against<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        self.validate()?;
        let g = |x: f64| 1.0 + f(x);
        Ok(match *self {
            WeightTheta::Unit => f64::INFINITY,
            WeightTheta::HeatKernel { a } => {
                let s = a.sqrt();
                let mut h = |x: f64| self.eval(x) * g(x);
                let head = adaptive_with_breaks(&mut h, &[0.0, s, 10.0 * s], 1e-15, 1e-12, 2000).value;
                let tail = adaptive_to_infinity(|x| self.eval(x) * g(x), 10.0 * s, 1e-16, 1e-12).value;
                2.0 * (head + tail)
            }
            WeightTheta::Ell { r } => ell_r_integral(r, g)?,
            WeightTheta::IndicatorComplement { r, delta } => {
                let full = ell_r_integral(r, g)?;
                let mut h = |x: f64| ell_r_unchecked(r, x) * g(x);
                let inner = adaptive_with_breaks(&mut h, &[0.0, delta], 1e-15, 1e-12, 2000).value;
                full - 2.0 * inner
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Which {
    F1,
    F4,
    F6,
    F8,
}

impl std::fmt::Display for Which {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Extra inputs a bound may need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// Frequency cutoff `N` (F1, F4).
    pub cutoff: Option<f64>,
    pub theta: WeightTheta,
    /// Calibrated `C₁` (F6) or `C₂` (F8).
    pub constant: Option<f64>,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            cutoff: None,
            theta: WeightTheta::Unit,
            constant: None,
        }
    }
}

fn ln_fact(p: usize) -> f64 {
    ln_gamma(p as f64 + 1.0)
}

/// Natural log of the right-hand side of the selected bound (may be `+∞`).
pub fn log_bound_rhs(spec: &NoiseSpec, which: Which, p: usize, t: f64, inputs: BoundInputs) -> Result<f64> {
    ensure_nonnegative("t", t)?;
    if p == 0 {
        return Err(LabError::invalid("p", p, "need p >= 1"));
    }
    let pf = p as f64;
    match which {
        Which::F1 | Which::F4 => {
            if spec.family != Family::H1 {
                return Err(LabError::ModelValidation(format!("{which} applies to the general (H1) family only")));
            }
            let n = inputs.cutoff.ok_or_else(|| LabError::Config(format!("{which} needs a cutoff N")))?;
            let (c_n, d_n) = spec.constants_cn_dn(n)?;
            let k0 = spec.kappa0;
            let expo = t * d_n / (2.0 * c_n);
            let base = (8.0 * k0 * c_n).ln();
            Ok(if which == Which::F1 {
                ln_fact(p) - (2.0 * k0).ln() + pf * base + expo
            } else {
                let m = inputs.theta.mass_against(|x| spec.phi.eval(x))?;
                ln_fact(p) + t.ln() + m.ln() - 2f64.ln() + (pf - 1.0) * base + expo
            })
        }
        Which::F6 | Which::F8 => {
            let (h0, h1) = spec
                .hurst()
                .ok_or_else(|| LabError::ModelValidation(format!("{which} applies to the fractional (H2) family only")))?;
            let hh = spec.roughness().expect("fractional");
            let c = inputs.constant.ok_or_else(|| LabError::Config(format!("{which} needs a calibrated constant")))?;
            ensure_positive("C", c)?;
            if which == Which::F8 {
                return Ok(ln_fact(p) + pf * c.ln() + pf * hh * t.ln() - ln_gamma(pf * hh + 1.0));
            }
            let e1 = pf * hh + (1.0 - h1) / (2.0 * h0);
            let e2 = pf * hh + 1.0 / (4.0 * h0);
            let m = inputs.theta.mass_against(|x| x.abs().powf(1.0 - 2.0 * h1))?;
            let lt = (e1 * t.ln()).max(e2 * t.ln());
            let lg = ln_gamma(e1).min(ln_gamma(e2));
            Ok(ln_fact(p) + m.ln() + pf * c.ln() + lt - lg)
        }
    }
}

pub fn bound_rhs(spec: &NoiseSpec, which: Which, p: usize, t: f64, inputs: BoundInputs) -> Result<f64> {
    log_bound_rhs(spec, which, p, t, inputs).map(f64::exp)
}

/// Smallest dyadic `N ≥ 1` with `8κ₀Γ_t C_N < 1`.
pub fn auto_cutoff(spec: &NoiseSpec, t: f64) -> Result<f64> {
    let gamma_t = spec.gamma_mass(t)?;
    let mut n = 1.0;
    for _ in 0..40 {
        let (c_n, _) = spec.constants_cn_dn(n)?;
        if 8.0 * spec.kappa0 * gamma_t * c_n < 1.0 {
            return Ok(n);
        }
        n *= 2.0;
    }
    Err(LabError::ModelValidation("no cutoff N with 8 kappa0 Gamma_t C_N < 1".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub which: Which,
    pub p: usize,
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub log_bound: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
    pub bias_proxy: f64,
}

impl BoundReport {
    pub fn new(which: Which, p: usize, t: f64, k: &KEstimate, log_bound: f64) -> Self {
        let est = k.estimate.mean;
        let lhs = est - 3.0 * k.estimate.stderr;
        let pass = lhs <= 0.0 || lhs.ln() <= log_bound;
        let bound = log_bound.exp();
        Self {
            which,
            p,
            t,
            estimate: est,
            stderr: k.estimate.stderr,
            log_bound,
            bound,
            margin: bound - est,
            pass,
            bias_proxy: k.bias_proxy,
        }
    }
}

/// CSV with columns `which,p,t,estimate,stderr,bound,margin,pass`.
pub fn write_bound_csv(path: &Path, reports: &[BoundReport]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "which,p,t,estimate,stderr,bound,margin,pass")?;
    for r in reports {
        writeln!(
            f,
            "{},{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{}",
            r.which, r.p, r.t, r.estimate, r.stderr, r.bound, r.margin, r.pass
        )?;
    }
    Ok(())
}

/// F1 for `p ∈ ps` with `N` from [`auto_cutoff`].
pub fn f1_suite(spec: &NoiseSpec, ps: &[usize], t: f64, n_samples: usize, seed: u64, exec: Execution) -> Result<Vec<BoundReport>> {
    if ps.is_empty() {
        return Ok(Vec::new());
    }
    let n = auto_cutoff(spec, t)?;
    ps.iter()
        .map(|&p| {
            let k = k1p(spec, &WeightTheta::Unit, p, t, n_samples, seed ^ p as u64, exec)?;
            let lb = log_bound_rhs(spec, Which::F1, p, t, BoundInputs { cutoff: Some(n), ..Default::default() })?;
            Ok(BoundReport::new(Which::F1, p, t, &k, lb))
        })
        .collect()
}

/// `C₂` such that F8 holds with equality at `p = 1` for the given `K₂,₁(1,t)`.
pub fn calibrate_c2(spec: &NoiseSpec, k21: f64, t: f64) -> Result<f64> {
    let hh = spec
        .roughness()
        .ok_or_else(|| LabError::ModelValidation("F8 applies to the fractional (H2) family only".into()))?;
    ensure_positive("K21", k21)?;
    ensure_positive("t", t)?;
    Ok(k21 * (ln_gamma(hh + 1.0) - hh * t.ln()).exp())
}

/// Smallest `C₂` for which F8 holds at order `p` given `K₂,ₚ(1,t) = k`.
pub fn implied_c2(spec: &NoiseSpec, k: f64, p: usize, t: f64) -> Result<f64> {
    let hh = spec
        .roughness()
        .ok_or_else(|| LabError::ModelValidation("F8 applies to the fractional (H2) family only".into()))?;
    ensure_positive("K", k)?;
    ensure_positive("t", t)?;
    let pf = p as f64;
    Ok(((k.ln() + ln_gamma(pf * hh + 1.0) - ln_fact(p) - pf * hh * t.ln()) / pf).exp())
}

/// F8 at `p = 1` (calibration row) and every `p ∈ ps`, with `C₂` from `p = 1`.
pub fn f8_suite(
    spec: &NoiseSpec,
    ps: &[usize],
    t: f64,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
    exec: Execution,
) -> Result<(f64, Vec<BoundReport>)> {
    if ps.is_empty() {
        return Ok((f64::NAN, Vec::new()));
    }
    let k1 = k2p(spec, &WeightTheta::Unit, 1, t, n_outer, n_inner, seed, exec)?;
    let c2 = calibrate_c2(spec, k1.estimate.mean, t)?;
    let inputs = BoundInputs { constant: Some(c2), ..Default::default() };
    let mut out = vec![BoundReport::new(Which::F8, 1, t, &k1, log_bound_rhs(spec, Which::F8, 1, t, inputs)?)];
    for &p in ps.iter().filter(|&&p| p != 1) {
        let k = k2p(spec, &WeightTheta::Unit, p, t, n_outer, n_inner, seed ^ p as u64, exec)?;
        out.push(BoundReport::new(Which::F8, p, t, &k, log_bound_rhs(spec, Which::F8, p, t, inputs)?));
    }
    Ok((c2, out))
}

/// `∫ℓ_Rφ` against its majorant `ε + C(ε)/R`, where `δ` is chosen with
/// `φ < ε` on `[−δ, δ]` and `C(ε) = π^{−1} ∫_{|ξ|≥δ} φ(ξ)/ξ² dξ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllPhiCurve {
    pub level: f64,
    pub delta: f64,
    pub c_level: f64,
    /// `(R, ∫ℓ_Rφ, ε + C(ε)/R)`.
    pub points: Vec<(f64, f64, f64)>,
}

impl EllPhiCurve {
    pub fn majorant_holds(&self) -> bool {
        self.points.iter().all(|&(_, v, m)| v <= m)
    }

    pub fn decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 < w[0].1)
    }
}

pub fn ell_phi_curve(spec: &NoiseSpec, rs: &[f64], level: f64) -> Result<EllPhiCurve> {
    ensure_positive("epsilon", level)?;
    let delta = spec
        .phi
        .small_ball_radius(level)
        .ok_or_else(|| LabError::ModelValidation(format!("phi does not drop below {level} near 0")))?;
    let c_level = spec.phi.inverse_square_tail(delta) / PI;
    let points = rs
        .iter()
        .map(|&r| Ok((r, ell_r_integral(r, |x| spec.phi.eval(x))?, level + c_level / r)))
        .collect::<Result<_>>()?;
    Ok(EllPhiCurve {
        level,
        delta,
        c_level,
        points,
    })
}
