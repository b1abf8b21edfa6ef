//! Covariance structure of the driving noise: temporal kernel `γ₀`,
//! spectral density `φ`, the hypothesis family, and derived constants.

mod config;
mod density;
mod validate;

pub use config::SpecConfig;
pub use density::{MonotoneTable, SpectralDensity, TemporalKernel};
pub use validate::{ValidationCheck, ValidationReport};

use std::f64::consts::PI;

use crate::error::{ensure_finite, ensure_nonnegative, ensure_positive, LabError, Result};
use crate::quadrature::gauss::adaptive_with_breaks;

/// Which set of hypotheses the spec claims to satisfy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// General `γ₀`, `φ` with modified Dalang and concavity conditions.
    H1,
    /// Fractional: `γ₀ = |t|^{2H₀−2}`, `φ = |ξ|^{1−2H₁}`.
    H2 { h0: f64, h1: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub family: Family,
    pub phi: SpectralDensity,
    pub gamma0: TemporalKernel,
    pub kappa0: f64,
}

impl NoiseSpec {
    /// Fractional noise. Admissibility (`H₀ + H₁ > 3/4` etc.) is checked by [`validate`](Self::validate).
    pub fn h2(h0: f64, h1: f64) -> Result<Self> {
        ensure_finite("H0", h0)?;
        ensure_finite("H1", h1)?;
        Ok(Self {
            family: Family::H2 { h0, h1 },
            phi: SpectralDensity::Power { exponent: 1.0 - 2.0 * h1 },
            gamma0: TemporalKernel::Power { h0 },
            kappa0: 1.0,
        })
    }

    pub fn h1(phi: SpectralDensity, gamma0: TemporalKernel, kappa0: f64) -> Result<Self> {
        ensure_positive("kappa0", kappa0)?;
        Ok(Self {
            family: Family::H1,
            phi,
            gamma0,
            kappa0,
        })
    }

    /// The default fractional spec `H₀ = 0.75`, `H₁ = 0.25`.
    pub fn default_h2() -> Self {
        Self::h2(0.75, 0.25).expect("finite parameters")
    }

    pub fn hurst(&self) -> Option<(f64, f64)> {
        match self.family {
            Family::H2 { h0, h1 } => Some((h0, h1)),
            Family::H1 => None,
        }
    }

    /// `φ(ξ)`.
    pub fn phi(&self, xi: f64) -> Result<f64> {
        ensure_finite("xi", xi)?;
        Ok(self.phi.eval(xi))
    }

    /// `γ₀(τ)`; the fractional kernel is a hard error at `τ = 0`.
    pub fn gamma0(&self, tau: f64) -> Result<f64> {
        self.gamma0.eval(tau)
    }

    /// `∬_{[a,b]×[c,d]} γ₀(r − v) dr dv`.
    pub fn gamma0_cell_mass(&self, a: f64, b: f64, c: f64, d: f64) -> Result<f64> {
        for (n, v) in [("a", a), ("b", b), ("c", c), ("d", d)] {
            ensure_finite(n, v)?;
        }
        if b < a || d < c {
            return Err(LabError::invalid("rect", format!("[{a},{b}]x[{c},{d}]"), "need a <= b and c <= d"));
        }
        Ok(self.gamma0.cell_mass(a, b, c, d))
    }

    /// `Γ_t = ∫_{−t}^{t} γ₀`.
    pub fn gamma_mass(&self, t: f64) -> Result<f64> {
        ensure_nonnegative("t", t)?;
        Ok(self.gamma0.mass(t))
    }

    /// Roughness `𝔥 = (2H₀ + H₁ − 1)/(2H₀)` (fractional family only).
    pub fn roughness(&self) -> Option<f64> {
        self.hurst().map(|(h0, h1)| (2.0 * h0 + h1 - 1.0) / (2.0 * h0))
    }

    /// `(C_N, D_N)` for the general family.
    ///
    /// The fractional family is rejected: `φ² / η²` is not integrable at
    /// infinity once `H₁ ≤ 1/4`, so the constants are not used there.
    pub fn constants_cn_dn(&self, n: f64) -> Result<(f64, f64)> {
        ensure_positive("N", n)?;
        if let Family::H2 { .. } = self.family {
            return Err(LabError::ModelValidation(
                "C_N/D_N are defined for the general (H1) family only".into(),
            ));
        }
        let g = |x: f64| {
            let p = self.phi.eval(x);
            1.0 + p + p * p
        };
        let c_n = 2.0 * doubling_tail(|x| g(x) / (x * x), n, 1e-8)
            .ok_or_else(|| LabError::ModelValidation(format!("C_N tail diverges at N = {n}")))?;
        let mut f = g;
        let d_n = 2.0 * adaptive_with_breaks(&mut f, &[0.0, n.min(1.0), n], 1e-14, 1e-12, 4000).value;
        Ok((c_n, d_n))
    }

    pub fn derived(&self, times: &[f64], cutoffs: &[f64]) -> Result<DerivedConstants> {
        let gamma_mass = times.iter().map(|&t| Ok((t, self.gamma_mass(t)?))).collect::<Result<_>>()?;
        let cn_dn = match self.family {
            Family::H1 => cutoffs
                .iter()
                .map(|&n| self.constants_cn_dn(n).map(|(c, d)| (n, c, d)))
                .collect::<Result<_>>()?,
            Family::H2 { .. } => Vec::new(),
        };
        Ok(DerivedConstants {
            gamma_mass,
            cn_dn,
            roughness: self.roughness(),
        })
    }

    pub fn validate(&self) -> ValidationReport {
        validate::validate(self)
    }
}

/// `Γ_t`, `(C_N, D_N)` and `𝔥` for requested times and cutoffs.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedConstants {
    pub gamma_mass: Vec<(f64, f64)>,
    pub cn_dn: Vec<(f64, f64, f64)>,
    pub roughness: Option<f64>,
}

/// `∫_a^∞ f` by integrating dyadic blocks `[a 2^j, a 2^{j+1}]` until a block
/// falls below `rel` of the running total. `None` if it fails to settle.
pub(crate) fn doubling_tail<F: FnMut(f64) -> f64>(mut f: F, a: f64, rel: f64) -> Option<f64> {
    let mut total = 0.0;
    let mut lo = a;
    let mut prev_block = f64::INFINITY;
    let mut stalled = 0;
    for _ in 0..200 {
        let hi = 2.0 * lo;
        let block = adaptive_with_breaks(&mut f, &[lo, hi], 1e-300, 1e-12, 200).value;
        if !block.is_finite() {
            return None;
        }
        total += block;
        if block.abs() <= rel * total.abs() {
            // remaining geometric tail is at most comparable to the last block
            return Some(total);
        }
        if block >= 0.999 * prev_block {
            stalled += 1;
            if stalled >= 8 {
                return None;
            }
        } else {
            stalled = 0;
        }
        prev_block = block;
        lo = hi;
    }
    None
}

/// Fejér-type kernel `ℓ_R(ξ) = sin²(Rξ)/(πRξ²)`, with `ℓ_R(0) = R/π`.
pub fn ell_r(r: f64, xi: f64) -> Result<f64> {
    ensure_positive("R", r)?;
    ensure_finite("xi", xi)?;
    Ok(ell_r_unchecked(r, xi))
}

/// [`ell_r`] without argument checks.
#[inline]
pub fn ell_r_unchecked(r: f64, xi: f64) -> f64 {
    let x = r * xi;
    if x.abs() < 1e-4 {
        r / PI * (1.0 - x * x / 3.0)
    } else {
        let s = x.sin();
        s * s / (PI * r * xi * xi)
    }
}

/// `∫ℝ ℓ_R(ξ) f(ξ) dξ` for even `f`, in the variable `u = Rξ`: oscillations
/// are resolved on `[0, 2000π]` and `sin²` is averaged to ½ beyond.
pub fn ell_r_integral<F: Fn(f64) -> f64>(r: f64, f: F) -> Result<f64> {
    ensure_positive("R", r)?;
    const PERIODS: usize = 2000;
    let u_cut = PERIODS as f64 * PI;
    let breaks: Vec<f64> = (0..=PERIODS).map(|k| k as f64 * PI).collect();
    let mut near = |u: f64| {
        let s = if u < 1e-4 { 1.0 - u * u / 3.0 } else { (u.sin() / u).powi(2) };
        s * f(u / r)
    };
    let head = adaptive_with_breaks(&mut near, &breaks, 1e-15, 1e-12, 20 * PERIODS).value;
    let tail = crate::quadrature::gauss::adaptive_to_infinity(|u| f(u / r) / (2.0 * u * u), u_cut, 1e-16, 1e-12).value;
    Ok(2.0 / PI * (head + tail))
}
