use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};

use crate::error::{ensure_positive, LabError, Result};

/// Uniform point of `SIM_p(t) = {w ∈ ℝ₊^p : Σw ≤ t}`; its volume is `t^p/p!`.
pub fn sample_simplex<R: Rng + ?Sized>(rng: &mut R, p: usize, t: f64) -> Result<Vec<f64>> {
    sample_dirichlet_simplex(rng, &vec![1.0; p + 1], t).map(|(w, _)| w)
}

/// Draw `w ∈ SIM_p(t)` with `(w, t − Σw)/t ~ Dirichlet(alpha)`, where `alpha`
/// has `p + 1` entries (the last one is the slack coordinate).
///
/// Returns the point and the log of its density on `SIM_p(t)`.
pub fn sample_dirichlet_simplex<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
    ensure_positive("t", t)?;
    if alpha.len() < 2 {
        return Err(LabError::invalid("p", alpha.len().saturating_sub(1), "need p >= 1"));
    }
    for &a in alpha {
        ensure_positive("alpha", a)?;
    }
    let mut g: Vec<f64> = alpha
        .iter()
        .map(|&a| {
            if a == 1.0 {
                Exp1.sample(rng)
            } else {
                Gamma::new(a, 1.0).expect("positive shape").sample(rng)
            }
        })
        .collect();
    let total: f64 = g.iter().sum();
    for x in &mut g {
        *x /= total;
    }
    let log_density = dirichlet_log_density(alpha, &g) - (alpha.len() - 1) as f64 * t.ln();
    let w = g[..alpha.len() - 1].iter().map(|x| x * t).collect();
    Ok((w, log_density))
}

/// Log-density of `Dirichlet(alpha)` at a point of the standard simplex
/// (all coordinates, summing to one).
pub fn dirichlet_log_density(alpha: &[f64], x: &[f64]) -> f64 {
    let a0: f64 = alpha.iter().sum();
    let mut v = statrs::function::gamma::ln_gamma(a0);
    for (&a, &xi) in alpha.iter().zip(x) {
        v += (a - 1.0) * xi.ln() - statrs::function::gamma::ln_gamma(a);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, StreamTag};

    #[test]
    fn coordinates_in_simplex() {
        let mut rng = RngStream::new(7, 0, StreamTag::Simplex).rng();
        for p in 1..6 {
            for _ in 0..1000 {
                let w = sample_simplex(&mut rng, p, 2.5).unwrap();
                assert_eq!(w.len(), p);
                assert!(w.iter().all(|&x| x >= 0.0));
                assert!(w.iter().sum::<f64>() <= 2.5 * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn uniform_density_is_inverse_volume() {
        let mut rng = RngStream::new(7, 1, StreamTag::Simplex).rng();
        let (_, ld) = sample_dirichlet_simplex(&mut rng, &[1.0; 4], 2.0).unwrap();
        // volume of SIM_3(2) = 8/6
        assert!((ld - (6.0f64 / 8.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let mut rng = RngStream::new(7, 2, StreamTag::Simplex).rng();
        assert!(sample_simplex(&mut rng, 0, 1.0).is_err());
        assert!(sample_simplex(&mut rng, 2, 0.0).is_err());
        assert!(sample_dirichlet_simplex(&mut rng, &[1.0, -1.0], 1.0).is_err());
    }
}
