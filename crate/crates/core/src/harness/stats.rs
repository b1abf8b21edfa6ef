//! Moment statistics and normality tests against `N(mean, var)`.
//!
//! Both tests plug in the sample mean and variance. The KS p-value uses the
//! fully specified Kolmogorov law (conservative under estimated parameters,
//! no Lilliefors correction); the AD p-value uses the modified statistic
//! `A²(1 + 0.75/n + 2.25/n²)` for estimated mean and variance.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{LabError, Result};

pub const MIN_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub var: f64,
    pub skew: f64,
    pub excess_kurtosis: f64,
    pub ks_stat: f64,
    pub ks_p: f64,
    pub ad_stat: f64,
    pub ad_p: f64,
    /// Zero variance: moments undefined, both tests rejected.
    pub degenerate: bool,
}

impl SampleStats {
    /// `|skew| < skew_band`, `|excess kurtosis| < kurt_band`, and KS or AD `p > alpha`.
    pub fn normal_at(&self, skew_band: f64, kurt_band: f64, alpha: f64) -> bool {
        !self.degenerate && self.skew.abs() < skew_band && self.excess_kurtosis.abs() < kurt_band && (self.ks_p > alpha || self.ad_p > alpha)
    }
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        // the alternating series converges slowly here; Q is 1 to double precision
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// p-value of the modified Anderson–Darling statistic (mean and variance estimated).
pub fn ad_p_value(a2_star: f64) -> f64 {
    let a = a2_star;
    let p = if a < 0.2 {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    } else if a < 0.34 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else if a < 0.6 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a < 13.0 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else {
        0.0
    };
    p.clamp(0.0, 1.0)
}

pub fn stats_tests(samples: &[f64]) -> Result<SampleStats> {
    let n = samples.len();
    if n < MIN_SAMPLES {
        return Err(LabError::InsufficientSamples { got: n, need: MIN_SAMPLES });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(LabError::NonFinite("stats samples"));
    }
    let nf = n as f64;
    let mean = crate::exec::pairwise_sum(samples) / nf;
    let dev: Vec<f64> = samples.iter().map(|x| x - mean).collect();
    let m2 = dev.iter().map(|d| d * d).sum::<f64>() / nf;
    let var = m2 * nf / (nf - 1.0);
    if !(m2 > 1e-300) || m2 <= 1e-28 * mean * mean {
        return Ok(SampleStats {
            n,
            mean,
            var: 0.0,
            skew: f64::NAN,
            excess_kurtosis: f64::NAN,
            ks_stat: f64::NAN,
            ks_p: 0.0,
            ad_stat: f64::NAN,
            ad_p: 0.0,
            degenerate: true,
        });
    }
    let m3 = dev.iter().map(|d| d * d * d).sum::<f64>() / nf;
    let m4 = dev.iter().map(|d| d * d * d * d).sum::<f64>() / nf;
    let skew = m3 / m2.powf(1.5);
    let excess_kurtosis = m4 / (m2 * m2) - 3.0;

    let sd = var.sqrt();
    let normal = Normal::new(0.0, 1.0).map_err(|e| LabError::Config(e.to_string()))?;
    let mut z: Vec<f64> = dev.iter().map(|d| d / sd).collect();
    z.sort_by(|a, b| a.total_cmp(b));
    let cdf: Vec<f64> = z.iter().map(|&v| normal.cdf(v).clamp(1e-300, 1.0 - 1e-16)).collect();

    let mut d = 0.0f64;
    for (i, &f) in cdf.iter().enumerate() {
        let lo = i as f64 / nf;
        let hi = (i + 1) as f64 / nf;
        d = d.max(hi - f).max(f - lo);
    }
    let sq = nf.sqrt();
    let ks_p = kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d);

    let mut s = 0.0;
    for i in 0..n {
        let w = (2 * i + 1) as f64;
        s += w * (cdf[i].ln() + (1.0 - cdf[n - 1 - i]).ln());
    }
    let a2 = -nf - s / nf;
    let a2_star = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    Ok(SampleStats {
        n,
        mean,
        var,
        skew,
        excess_kurtosis,
        ks_stat: d,
        ks_p,
        ad_stat: a2_star,
        ad_p: ad_p_value(a2_star),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, StreamTag};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, Exp, StandardNormal};

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut r = RngStream::new(seed, 0, StreamTag::Synthetic).rng();
        (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
    }

    #[test]
    fn rejects_short_input() {
        assert!(matches!(stats_tests(&[1.0; 49]), Err(LabError::InsufficientSamples { got: 49, need: 50 })));
    }

    #[test]
    fn constant_input_is_degenerate() {
        let s = stats_tests(&[2.5; 80]).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.var, 0.0);
        assert_eq!(s.ks_p, 0.0);
        assert_eq!(s.ad_p, 0.0);
        assert!(!s.normal_at(1.0, 1.0, 0.01));
    }

    #[test]
    fn moment_bands_for_standard_normal() {
        let s = stats_tests(&normals(5, 10_000)).unwrap();
        assert!(s.skew.abs() < 0.08, "{}", s.skew);
        assert!(s.excess_kurtosis.abs() < 0.16, "{}", s.excess_kurtosis);
        assert!(s.ks_p > 0.01 && s.ad_p > 0.01);
    }

    #[test]
    fn kolmogorov_reference_values() {
        // Q(1.3581) = 0.05 and Q(1.6276) = 0.01
        assert_relative_eq!(kolmogorov_sf(1.358_1), 0.05, max_relative = 1e-3);
        assert_relative_eq!(kolmogorov_sf(1.627_6), 0.01, max_relative = 2e-3);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn ad_reference_values() {
        // case-3 critical values: 0.752 at 5%, 1.035 at 1%
        assert!((ad_p_value(0.752) - 0.05).abs() < 0.003);
        assert!((ad_p_value(1.035) - 0.01).abs() < 0.001);
    }

    #[test]
    fn mixture_is_rejected_by_ad() {
        let mut r = RngStream::new(9, 0, StreamTag::Synthetic).rng();
        let v: Vec<f64> = (0..500)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                if r.random::<bool>() {
                    z - 3.0
                } else {
                    z + 3.0
                }
            })
            .collect();
        assert!(stats_tests(&v).unwrap().ad_p < 0.01);
    }

    #[test]
    fn exponential_is_rejected_by_ks() {
        let mut r = RngStream::new(10, 0, StreamTag::Synthetic).rng();
        let e = Exp::new(1.0).unwrap();
        let v: Vec<f64> = (0..500).map(|_| e.sample(&mut r)).collect();
        assert!(stats_tests(&v).unwrap().ks_p < 0.01);
    }
}
