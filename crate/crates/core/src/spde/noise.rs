//! Finite-dimensional spectral noise: complex Gaussian coefficients on a
//! frequency grid times piecewise-constant time cells.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure_positive, LabError, Result};
use crate::noise_model::NoiseSpec;

/// Jitter retries for the Gram Cholesky, each scaling the diagonal shift by 100.
const JITTER_STEPS: usize = 6;

/// Frequencies `ξ_k = (k + ½)Δξ`, `k = 0..K`, with the spectral weight `φ(ξ_k)Δξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    pub dxi: f64,
    pub xi: Vec<f64>,
    /// `φ(ξ_k)·Δξ`.
    pub weight: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(spec: &NoiseSpec, k: usize, xi_max: f64) -> Result<Self> {
        ensure_positive("xi_max", xi_max)?;
        if k == 0 {
            return Err(LabError::invalid("K", 0, "need at least one frequency"));
        }
        let dxi = xi_max / k as f64;
        let xi: Vec<f64> = (0..k).map(|j| (j as f64 + 0.5) * dxi).collect();
        let weight = xi.iter().map(|&x| Ok(spec.phi(x)? * dxi)).collect::<Result<Vec<_>>>()?;
        Ok(Self { dxi, xi, weight })
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// Spatial period `2π/Δξ` of the synthesised field (it is anti-periodic over half of it).
    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.dxi
    }
}

/// Gram matrix `G_{mm'} = ∬_{I_m×I_{m'}} γ₀(r − r')` of `cells` uniform cells on `[0, t_end]`.
pub fn temporal_gram(spec: &NoiseSpec, t_end: f64, cells: usize) -> Result<Vec<f64>> {
    ensure_positive("T", t_end)?;
    if cells == 0 {
        return Err(LabError::invalid("M", 0, "need at least one time cell"));
    }
    let h = t_end / cells as f64;
    // Uniform cells and a stationary kernel: G is Toeplitz.
    let lag: Vec<f64> = (0..cells)
        .map(|d| spec.gamma0_cell_mass(0.0, h, d as f64 * h, (d + 1) as f64 * h))
        .collect::<Result<_>>()?;
    let mut g = vec![0.0; cells * cells];
    for i in 0..cells {
        for j in 0..cells {
            g[i * cells + j] = lag[i.abs_diff(j)];
        }
    }
    Ok(g)
}

/// Lower Cholesky factor of a row-major `n×n` matrix, or the failing pivot.
fn cholesky(a: &[f64], n: usize) -> std::result::Result<Vec<f64>, usize> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(i);
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Cholesky with a growing diagonal jitter on failure. Returns the factor and the jitter used.
pub fn cholesky_with_jitter(a: &[f64], n: usize) -> Result<(Vec<f64>, f64)> {
    if a.len() != n * n {
        return Err(LabError::invalid("matrix", a.len(), "not square"));
    }
    let mut pivot = match cholesky(a, n) {
        Ok(l) => return Ok((l, 0.0)),
        Err(p) => p,
    };
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut jitter = 1e-14 * scale;
    for _ in 0..JITTER_STEPS {
        let mut b = a.to_vec();
        for i in 0..n {
            b[i * n + i] += jitter;
        }
        match cholesky(&b, n) {
            Ok(l) => return Ok((l, jitter)),
            Err(p) => pivot = p,
        }
        jitter *= 100.0;
    }
    Err(LabError::Cholesky { pivot })
}

/// One draw of the discretised noise. Immutable after construction.
///
/// `zeta[k·M + m]` is the coefficient of frequency `ξ_k` on time cell `m`;
/// the value at `−ξ_k` is its conjugate.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
    pub layout: Arc<NoiseLayout>,
    pub zeta: Vec<Complex64>,
}

/// Noise-independent part of a realization; reused across replicates.
#[derive(Debug, Clone)]
pub struct NoiseLayout {
    pub t_end: f64,
    pub cells: usize,
    pub freq: FrequencyGrid,
    pub gram: Vec<f64>,
    pub chol: Vec<f64>,
    pub jitter: f64,
}

impl NoiseLayout {
    pub fn new(spec: &NoiseSpec, t_end: f64, k: usize, xi_max: f64, cells: usize) -> Result<Self> {
        let freq = FrequencyGrid::new(spec, k, xi_max)?;
        let gram = temporal_gram(spec, t_end, cells)?;
        let (chol, jitter) = cholesky_with_jitter(&gram, cells)?;
        Ok(Self {
            t_end,
            cells,
            freq,
            gram,
            chol,
            jitter,
        })
    }

    pub fn cell_width(&self) -> f64 {
        self.t_end / self.cells as f64
    }

    /// `ζ_{·,k} = L·(n₁ + i n₂)·√(φ(ξ_k)Δξ / 2)` for i.i.d. standard normals.
    pub fn sample<R: Rng + ?Sized>(self: &Arc<Self>, rng: &mut R) -> NoiseRealization {
        let m = self.cells;
        let mut zeta = vec![Complex64::new(0.0, 0.0); self.freq.len() * m];
        let mut n = vec![Complex64::new(0.0, 0.0); m];
        for (k, &w) in self.freq.weight.iter().enumerate() {
            let s = (0.5 * w).sqrt();
            for v in n.iter_mut() {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                *v = Complex64::new(a, b);
            }
            let row = &mut zeta[k * m..(k + 1) * m];
            for i in 0..m {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..=i {
                    acc += n[j] * self.chol[i * m + j];
                }
                row[i] = acc * s;
            }
        }
        NoiseRealization {
            layout: Arc::clone(self),
            zeta,
        }
    }
}

/// Draw a realization on `[0, t_end]` with `k` frequencies up to `xi_max` and `cells` time cells.
pub fn sample_noise<R: Rng + ?Sized>(spec: &NoiseSpec, t_end: f64, k: usize, xi_max: f64, cells: usize, rng: &mut R) -> Result<NoiseRealization> {
    Ok(Arc::new(NoiseLayout::new(spec, t_end, k, xi_max, cells)?).sample(rng))
}

impl NoiseRealization {
    pub fn cells(&self) -> usize {
        self.layout.cells
    }

    pub fn freq(&self) -> &FrequencyGrid {
        &self.layout.freq
    }

    /// `ζ_{m,k}` for `k ≥ 0`, or its conjugate for the mirrored frequency.
    pub fn coefficient(&self, m: usize, k: usize, negative: bool) -> Complex64 {
        let z = self.zeta[k * self.cells() + m];
        if negative {
            z.conj()
        } else {
            z
        }
    }

    /// `W_d(h) = Σ_{±k} Σ_m conj(ℱh(m, ξ)) ζ_{m}(ξ)` for a Hermitian element given on `k ≥ 0`.
    /// `h[k·n + m]` covers the first `n ≤ M` cells.
    pub fn pairing(&self, h: &[Complex64], n: usize) -> f64 {
        let c = self.cells();
        let mut s = 0.0;
        for k in 0..self.freq().len() {
            let z = &self.zeta[k * c..k * c + n];
            let hk = &h[k * n..(k + 1) * n];
            for m in 0..n {
                s += (hk[m].conj() * z[m]).re;
            }
        }
        2.0 * s
    }

    /// Discrete inner product `⟨h, g⟩_d` summed over `±ξ_k`.
    pub fn inner(&self, h: &[Complex64], g: &[Complex64], n: usize) -> f64 {
        let l = &self.layout;
        gram_inner(&l.gram, l.cells, &l.freq.weight, h, g, n)
    }
}

/// `2 Σ_k φ_kΔξ Re(h_k^* G g_k)` over the leading `n×n` block of `G`.
pub(crate) fn gram_inner(gram: &[f64], stride: usize, weight: &[f64], h: &[Complex64], g: &[Complex64], n: usize) -> f64 {
    let mut total = 0.0;
    for (k, &w) in weight.iter().enumerate() {
        let hk = &h[k * n..(k + 1) * n];
        let gk = &g[k * n..(k + 1) * n];
        let mut s = 0.0;
        for i in 0..n {
            let row = &gram[i * stride..i * stride + n];
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                acc += gk[j] * row[j];
            }
            s += (hk[i].conj() * acc).re;
        }
        total += w * s;
    }
    2.0 * total
}

/// `2 Σ_k φ_kΔξ h_k^* G h_k`, using the symmetry of `G`.
pub(crate) fn gram_norm_sq(gram: &[f64], stride: usize, weight: &[f64], h: &[Complex64], n: usize) -> f64 {
    let mut total = 0.0;
    for (k, &w) in weight.iter().enumerate() {
        let hk = &h[k * n..(k + 1) * n];
        let mut s = 0.0;
        for i in 0..n {
            let row = &gram[i * stride..i * stride + n];
            let hi = hk[i];
            s += row[i] * hi.norm_sqr();
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..i {
                acc += hk[j] * row[j];
            }
            s += 2.0 * (hi.conj() * acc).re;
        }
        total += w * s;
    }
    2.0 * total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, StreamTag};
    use approx::assert_relative_eq;

    fn layout() -> Arc<NoiseLayout> {
        Arc::new(NoiseLayout::new(&NoiseSpec::default_h2(), 1.0, 12, 3.0, 8).unwrap())
    }

    #[test]
    fn gram_is_symmetric_toeplitz_with_exact_total_mass() {
        let s = NoiseSpec::default_h2();
        let g = temporal_gram(&s, 1.0, 16).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!(g[i * 16 + j], g[j * 16 + i]);
            }
        }
        // Cell masses add up to the full square: ∬₀¹|r−v|^{−1/2} = 8/3.
        assert_relative_eq!(g.iter().sum::<f64>(), 8.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn cholesky_reproduces_gram() {
        let l = layout();
        let n = l.cells;
        for i in 0..n {
            for j in 0..n {
                let s: f64 = (0..n).map(|k| l.chol[i * n + k] * l.chol[j * n + k]).sum();
                assert_relative_eq!(s, l.gram[i * n + j], max_relative = 1e-10);
            }
        }
        assert_eq!(l.jitter, 0.0);
    }

    #[test]
    fn jitter_rescues_semidefinite_and_rejects_indefinite() {
        let a = [1.0, 1.0, 1.0, 1.0];
        let (_, j) = cholesky_with_jitter(&a, 2).unwrap();
        assert!(j > 0.0);
        let b = [1.0, 2.0, 2.0, 1.0];
        assert!(matches!(cholesky_with_jitter(&b, 2), Err(LabError::Cholesky { .. })));
    }

    #[test]
    fn hermitian_extension_is_exact() {
        let l = layout();
        let z = l.sample(&mut RngStream::new(3, 0, StreamTag::Noise).rng());
        let c = z.coefficient(2, 5, false);
        assert_eq!(z.coefficient(2, 5, true), c.conj());
    }

    #[test]
    fn pairing_variance_matches_discrete_norm() {
        // ℱh ≡ 1 on one (cell, frequency) pair.
        let l = layout();
        let n = l.cells;
        let mut h = vec![Complex64::new(0.0, 0.0); l.freq.len() * n];
        h[4 * n + 3] = Complex64::new(1.0, 0.0);
        let target = gram_norm_sq(&l.gram, n, &l.freq.weight, &h, n);
        let mut rng = RngStream::new(11, 0, StreamTag::Noise).rng();
        let reps = 10_000;
        let w: Vec<f64> = (0..reps).map(|_| l.sample(&mut rng).pairing(&h, n)).collect();
        let mean = w.iter().sum::<f64>() / reps as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!((var / target - 1.0).abs() < 0.05, "var {var} vs {target}");
    }

    #[test]
    fn orthogonal_elements_are_uncorrelated() {
        let l = layout();
        let n = l.cells;
        let mut h = vec![Complex64::new(0.0, 0.0); l.freq.len() * n];
        let mut g = h.clone();
        h[2 * n + 1] = Complex64::new(1.0, 0.0);
        g[7 * n + 5] = Complex64::new(0.0, 1.0);
        assert_eq!(gram_inner(&l.gram, n, &l.freq.weight, &h, &g, n), 0.0);
        let mut rng = RngStream::new(12, 0, StreamTag::Noise).rng();
        let reps = 10_000;
        let pairs: Vec<(f64, f64)> = (0..reps)
            .map(|_| {
                let z = l.sample(&mut rng);
                (z.pairing(&h, n), z.pairing(&g, n))
            })
            .collect();
        let sh = gram_norm_sq(&l.gram, n, &l.freq.weight, &h, n).sqrt();
        let sg = gram_norm_sq(&l.gram, n, &l.freq.weight, &g, n).sqrt();
        let corr = pairs.iter().map(|(a, b)| a * b).sum::<f64>() / reps as f64 / (sh * sg);
        assert!(corr.abs() < 4.0 / (reps as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn norm_agrees_with_inner() {
        let l = layout();
        let n = 5;
        let mut rng = RngStream::new(1, 1, StreamTag::Custom(1)).rng();
        let h: Vec<Complex64> = (0..l.freq.len() * n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let a = gram_norm_sq(&l.gram, l.cells, &l.freq.weight, &h, n);
        let b = gram_inner(&l.gram, l.cells, &l.freq.weight, &h, &h, n);
        assert_relative_eq!(a, b, max_relative = 1e-12);
        assert!(a > 0.0);
    }
}
