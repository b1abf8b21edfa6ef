use serde::Serialize;

use super::{doubling_tail, Family, NoiseSpec};
use crate::quadrature::gauss::adaptive_with_breaks;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Offending value on failure, or the computed quantity on success.
    pub witness: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &'static str, passed: bool, witness: String) -> ValidationCheck {
    ValidationCheck { name, passed, witness }
}

/// Deterministic probe frequencies: ±10^k for k in [−3, 3] at quarter decades, plus 0.
fn probe_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    for i in -12..=12 {
        let x = 10f64.powf(i as f64 / 4.0);
        g.push(x);
        g.push(-x);
    }
    g
}

pub(super) fn validate(spec: &NoiseSpec) -> ValidationReport {
    let mut checks = Vec::new();

    match spec.family {
        Family::H2 { h0, h1 } => {
            checks.push(check("H0 in (1/2,1)", h0 > 0.5 && h0 < 1.0, format!("H0={h0}")));
            checks.push(check("H1 in (0,1/2)", h1 > 0.0 && h1 < 0.5, format!("H1={h1}")));
            let s = h0 + h1;
            checks.push(check("H0+H1 > 3/4", s > 0.75, format!("H0+H1={s}")));
        }
        Family::H1 => {
            let k = spec.kappa0;
            checks.push(check("kappa0 > 0", k > 0.0 && k.is_finite(), format!("kappa0={k}")));
        }
    }

    let grid = probe_grid();

    let p0 = spec.phi.eval(0.0);
    checks.push(check("phi(0) = 0", p0 == 0.0, format!("phi(0)={p0}")));

    let odd = grid.iter().map(|&x| (x, spec.phi.eval(x) - spec.phi.eval(-x))).find(|(_, d)| *d != 0.0);
    checks.push(match odd {
        Some((x, d)) => check("phi even", false, format!("phi({x})-phi({})={d}", -x)),
        None => check("phi even", true, format!("{} probes", grid.len())),
    });

    let neg = grid.iter().map(|&x| (x, spec.phi.eval(x))).find(|(_, v)| !(*v >= 0.0 && v.is_finite()));
    checks.push(match neg {
        Some((x, v)) => check("phi nonnegative", false, format!("phi({x})={v}")),
        None => check("phi nonnegative", true, format!("{} probes", grid.len())),
    });

    // modified Dalang: ∫ φ²/(1+ξ²) dξ. The fractional family is admitted on
    // its own terms (H₁ ≤ 1/4 makes this integral diverge).
    if spec.family == Family::H1 {
        let dalang = |x: f64| {
            let p = spec.phi.eval(x);
            p * p / (1.0 + x * x)
        };
        let mut head_f = dalang;
        let head = adaptive_with_breaks(&mut head_f, &[0.0, 1.0], 1e-14, 1e-12, 500).value;
        checks.push(match doubling_tail(dalang, 1.0, 1e-8) {
            Some(tail) => check("modified Dalang", true, format!("integral={:.9e}", 2.0 * (head + tail))),
            None => check("modified Dalang", false, "truncated integral does not stabilize".into()),
        });
    }

    let kappa = match spec.family {
        Family::H2 { .. } => 1.0,
        Family::H1 => spec.kappa0,
    };
    let mut worst: Option<(f64, f64, f64)> = None;
    for &x in &grid {
        for &y in &grid {
            let lhs = spec.phi.eval(x + y);
            let rhs = kappa * (spec.phi.eval(x) + spec.phi.eval(y));
            if lhs > rhs * (1.0 + 1e-12) + 1e-300 {
                let excess = lhs - rhs;
                if worst.is_none_or(|(_, _, e)| excess > e) {
                    worst = Some((x, y, excess));
                }
            }
        }
    }
    checks.push(match worst {
        Some((x, y, e)) => check("concavity", false, format!("x={x}, y={y}, excess={e:.6e} (kappa0={kappa})")),
        None => check("concavity", true, format!("{} pairs, kappa0={kappa}", grid.len() * grid.len())),
    });

    let gbad = grid
        .iter()
        .filter(|x| **x != 0.0)
        .map(|&t| (t, spec.gamma0.eval(t)))
        .find(|(_, v)| !matches!(v, Ok(v) if *v >= 0.0 && v.is_finite()));
    checks.push(match gbad {
        Some((t, v)) => check("gamma0 nonnegative", false, format!("gamma0({t})={v:?}")),
        None => check("gamma0 nonnegative", true, format!("{} probes", grid.len() - 1)),
    });

    let g1 = match spec.gamma0.singular_exponent() {
        Some(a) if a <= -1.0 => f64::INFINITY,
        _ => spec.gamma0.mass(1.0),
    };
    checks.push(check("gamma0 locally integrable", g1.is_finite(), format!("Gamma_1={g1}")));

    ValidationReport { checks }
}

#[cfg(test)]
mod tests {
    use super::super::{SpectralDensity, TemporalKernel};
    use super::*;

    #[test]
    fn default_fractional_passes() {
        let r = NoiseSpec::h2(0.75, 0.25).unwrap().validate();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn hurst_sum_below_threshold_fails() {
        let r = NoiseSpec::h2(0.6, 0.1).unwrap().validate();
        assert!(!r.passed());
        let c = r.get("H0+H1 > 3/4").unwrap();
        assert!(!c.passed);
        assert!(c.witness.contains("0.7"));
    }

    #[test]
    fn constant_density_fails_at_origin() {
        let s = NoiseSpec::h1(SpectralDensity::Constant { value: 1.0 }, TemporalKernel::Exponential { rate: 1.0 }, 1.0).unwrap();
        let r = s.validate();
        assert!(!r.get("phi(0) = 0").unwrap().passed);
    }

    #[test]
    fn gauss_bump_is_not_subadditive_with_unit_constant() {
        let s = NoiseSpec::h1(SpectralDensity::GaussBump, TemporalKernel::Exponential { rate: 1.0 }, 1.0).unwrap();
        let r = s.validate();
        assert!(!r.get("concavity").unwrap().passed);
        assert!(r.get("modified Dalang").unwrap().passed);
    }

    #[test]
    fn saturated_density_passes() {
        let s = NoiseSpec::h1(SpectralDensity::Saturated { beta: 1.0 }, TemporalKernel::Power { h0: 0.75 }, 1.0).unwrap();
        assert!(s.validate().passed());
    }

    #[test]
    fn dalang_violation_detected() {
        let s = NoiseSpec::h1(SpectralDensity::Power { exponent: 0.5 }, TemporalKernel::Constant { value: 1.0 }, 1.0).unwrap();
        let r = s.validate();
        assert!(!r.get("modified Dalang").unwrap().passed);
    }

    #[test]
    fn non_integrable_time_kernel_detected() {
        let s = NoiseSpec::h1(SpectralDensity::Saturated { beta: 1.0 }, TemporalKernel::Power { h0: 0.4 }, 1.0).unwrap();
        assert!(!s.validate().get("gamma0 locally integrable").unwrap().passed);
    }
}
