use statrs::function::gamma::ln_gamma;

use super::engine::{g_fn, FkEngine, PathEnsemble};
use super::{FkConfig, McEstimate};
use crate::error::{LabError, Result};
use crate::noise_model::NoiseSpec;
use crate::quadrature::gauss::GaussLegendre;

/// Largest exponent accepted before `exp` is declared an overflow.
pub const EXP_GUARD: f64 = 700.0;
/// Endpoint-to-centre ratio of `E[𝔤(ℐ)]` required to accept `z_max`.
pub const TAIL_RATIO_MAX: f64 = 1e-3;

/// `E[∏ u(t_i, x_i)] = E[exp(Σ_{i<j} ℐ^{i,j}_{t_i,t_j,ε}(x_i − x_j))]`.
pub fn moment_estimate(spec: &NoiseSpec, points: &[(f64, f64)], cfg: &FkConfig) -> Result<McEstimate> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(LabError::invalid("points", 0, "need at least one point"));
    }
    if points.len() == 1 {
        return Ok(McEstimate::exact(1.0, cfg.seed));
    }
    let times: Vec<f64> = points.iter().map(|p| p.0).collect();
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    if t_max == 0.0 {
        return Ok(McEstimate::exact(1.0, cfg.seed));
    }
    let ens = PathEnsemble::sample(cfg, &times)?;
    let spread = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) - points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let eng = FkEngine::new(spec, cfg, t_max, 2.0 * ens.max_abs + spread + 1.0)?;
    let values = cfg.execution.try_map(cfg.n_paths, |r| {
        let mids = &ens.mids[r];
        let mut sum = 0.0;
        let mut out = [0.0];
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                eng.profile(&mids[i], &mids[j], &[points[i].1 - points[j].1], &mut out);
                sum += out[0];
            }
        }
        if sum > EXP_GUARD || !sum.is_finite() {
            return Err(LabError::ExpOverflow { exponent: sum, replicate: r });
        }
        Ok(sum.exp())
    })?;
    Ok(McEstimate::from_samples(&values, cfg.seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZOptions {
    /// Weight `z` by `max(0, 1 − |z|/2R)`.
    pub geometric_r: Option<f64>,
    /// Highest chaos order `P` for which `∫ ℐ^p/p! dz` is recorded (`p = 2..=P`).
    pub max_chaos: usize,
}

impl Default for ZOptions {
    fn default() -> Self {
        Self {
            geometric_r: None,
            max_chaos: 8,
        }
    }
}

/// Per-replicate `z`-integrals of functionals of one shared profile `z ↦ ℐ(z)`.
#[derive(Debug, Clone)]
pub struct ZSamples {
    /// `∫ 𝔤(ℐ(z)) dz`.
    pub g: Vec<f64>,
    /// `∫ (e^{ℐ(z)} − 1) dz`.
    pub ex1: Vec<f64>,
    /// `∫ ℐ(z) dz`.
    pub first: Vec<f64>,
    /// `chaos[p − 2]` holds `∫ ℐ(z)^p / p! dz`.
    pub chaos: Vec<Vec<f64>>,
    /// `E𝔤(ℐ(±z_max)) / E𝔤(ℐ(0))`.
    pub tail_ratio: f64,
    /// Tail allowance `2·z_max·E𝔤(ℐ(±z_max))` for `|z| > z_max`.
    pub tail_bound: f64,
    pub z_max: f64,
    pub seed: u64,
}

impl ZSamples {
    fn estimate(&self, v: &[f64]) -> McEstimate {
        McEstimate::from_samples(v, self.seed)
    }

    /// `∫ E[𝔤(ℐ(z))] dz`.
    pub fn g_form(&self) -> McEstimate {
        self.estimate(&self.g)
    }

    /// `∫ E[e^{ℐ(z)} − 1] dz`.
    pub fn ex1_form(&self) -> McEstimate {
        self.estimate(&self.ex1)
    }

    pub fn first_form(&self) -> McEstimate {
        self.estimate(&self.first)
    }

    /// `(1/p!) ∫ E[ℐ(z)^p] dz`.
    pub fn chaos(&self, p: usize) -> Option<McEstimate> {
        p.checked_sub(2).and_then(|i| self.chaos.get(i)).map(|v| self.estimate(v))
    }

    /// `Σ_{p=2}^{P}` of the chaos terms.
    pub fn chaos_partial_sum(&self, max_p: usize) -> McEstimate {
        let k = max_p.saturating_sub(1).min(self.chaos.len());
        let sums: Vec<f64> = (0..self.g.len()).map(|r| self.chaos[..k].iter().map(|c| c[r]).sum()).collect();
        self.estimate(&sums)
    }

    /// Paired difference `Σ_{p=2}^{P} chaos − 𝔤-form` on the shared samples.
    pub fn series_gap(&self, max_p: usize) -> McEstimate {
        let k = max_p.saturating_sub(1).min(self.chaos.len());
        let d: Vec<f64> = (0..self.g.len())
            .map(|r| self.chaos[..k].iter().map(|c| c[r]).sum::<f64>() - self.g[r])
            .collect();
        self.estimate(&d)
    }
}

/// `x^p / p!` with the factorial in log space.
fn power_over_factorial(x: f64, p: usize) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let mag = (p as f64 * x.abs().ln() - ln_gamma(p as f64 + 1.0)).exp();
    if x < 0.0 && p % 2 == 1 {
        -mag
    } else {
        mag
    }
}

/// Sample one ensemble of path pairs over `[0,t₁]`, `[0,t₂]` and integrate
/// functionals of `ℐ^{1,2}_{t₁,t₂,ε}(z)` over `z ∈ [−z_max, z_max]`.
pub fn z_functionals(spec: &NoiseSpec, t1: f64, t2: f64, cfg: &FkConfig, opts: ZOptions) -> Result<ZSamples> {
    cfg.validate()?;
    let n_chaos = opts.max_chaos.saturating_sub(1);
    if t1 == 0.0 || t2 == 0.0 {
        let zeros = vec![0.0; cfg.n_paths];
        return Ok(ZSamples {
            g: zeros.clone(),
            ex1: zeros.clone(),
            first: zeros.clone(),
            chaos: vec![zeros; n_chaos],
            tail_ratio: 0.0,
            tail_bound: 0.0,
            z_max: cfg.z_max,
            seed: cfg.seed,
        });
    }
    let ens = PathEnsemble::sample(cfg, &[t1, t2])?;
    let eng = FkEngine::new(spec, cfg, t1.max(t2), 2.0 * ens.max_abs + cfg.z_max + 1.0)?;

    let gl = GaussLegendre::new(8);
    let panels = cfg.z_nodes.div_ceil(8);
    let mut zs = Vec::new();
    let mut ws = Vec::new();
    for (z, w) in gl.composite_points(-cfg.z_max, cfg.z_max, panels) {
        let geo = opts.geometric_r.map_or(1.0, |r| (1.0 - z.abs() / (2.0 * r)).max(0.0));
        zs.push(z);
        ws.push(w * geo);
    }
    let nq = zs.len();
    zs.extend([0.0, -cfg.z_max, cfg.z_max]);

    struct Row {
        g: f64,
        ex1: f64,
        first: f64,
        chaos: Vec<f64>,
        centre: f64,
        edge: f64,
    }
    let rows = cfg.execution.try_map(cfg.n_paths, |r| {
        let mut prof = vec![0.0; zs.len()];
        eng.profile(&ens.mids[r][0], &ens.mids[r][1], &zs, &mut prof);
        if let Some(&m) = prof.iter().find(|v| **v > EXP_GUARD || !v.is_finite()) {
            return Err(LabError::ExpOverflow { exponent: m, replicate: r });
        }
        let mut row = Row {
            g: 0.0,
            ex1: 0.0,
            first: 0.0,
            chaos: vec![0.0; n_chaos],
            centre: g_fn(prof[nq]),
            edge: 0.5 * (g_fn(prof[nq + 1]) + g_fn(prof[nq + 2])),
        };
        for (&i, &w) in prof[..nq].iter().zip(&ws) {
            row.g += w * g_fn(i);
            row.ex1 += w * i.exp_m1();
            row.first += w * i;
            for (k, c) in row.chaos.iter_mut().enumerate() {
                *c += w * power_over_factorial(i, k + 2);
            }
        }
        Ok(row)
    })?;

    let centre = crate::exec::pairwise_sum(&rows.iter().map(|r| r.centre).collect::<Vec<_>>()) / rows.len() as f64;
    let edge = crate::exec::pairwise_sum(&rows.iter().map(|r| r.edge).collect::<Vec<_>>()) / rows.len() as f64;
    let tail_ratio = if centre > 0.0 { edge / centre } else { 0.0 };
    // the geometric weight vanishes beyond 2R, so no truncation happens there
    let windowed = opts.geometric_r.is_some_and(|r| cfg.z_max >= 2.0 * r);
    if tail_ratio > TAIL_RATIO_MAX && !windowed {
        return Err(LabError::ZTruncation {
            z_max: cfg.z_max,
            ratio: tail_ratio,
            threshold: TAIL_RATIO_MAX,
        });
    }
    Ok(ZSamples {
        g: rows.iter().map(|r| r.g).collect(),
        ex1: rows.iter().map(|r| r.ex1).collect(),
        first: rows.iter().map(|r| r.first).collect(),
        chaos: (0..n_chaos).map(|k| rows.iter().map(|r| r.chaos[k]).collect()).collect(),
        tail_ratio,
        tail_bound: if windowed { 0.0 } else { 2.0 * cfg.z_max * edge },
        z_max: cfg.z_max,
        seed: cfg.seed,
    })
}

/// `E[𝒢_{t₁}𝒢_{t₂}] = 2 ∫ E[𝔤(ℐ^{1,2}_{t₁,t₂}(z))] dz`, with the tail allowance.
pub fn limiting_covariance(spec: &NoiseSpec, t1: f64, t2: f64, cfg: &FkConfig) -> Result<(McEstimate, f64)> {
    let s = z_functionals(spec, t1, t2, cfg, ZOptions { geometric_r: None, max_chaos: 0 })?;
    Ok((s.g_form().scaled(2.0), 2.0 * s.tail_bound))
}

/// `(1/p!) ∫ E[(ℐ^{1,2}_{t₁,t₂}(z))^p] dz` for `p ≥ 2`.
pub fn chaos_covariance(spec: &NoiseSpec, t1: f64, t2: f64, p: usize, cfg: &FkConfig) -> Result<McEstimate> {
    if p < 2 {
        return Err(LabError::invalid("p", p, "chaos order must be >= 2"));
    }
    let s = z_functionals(spec, t1, t2, cfg, ZOptions { geometric_r: None, max_chaos: p })?;
    Ok(s.chaos(p).expect("order recorded"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(eps: f64) -> FkConfig {
        FkConfig {
            eps,
            cells_per_unit: 16,
            z_max: 12.0,
            z_nodes: 64,
            n_paths: 200,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn power_over_factorial_matches_direct() {
        assert!((power_over_factorial(2.0, 3) - 8.0 / 6.0).abs() < 1e-14);
        assert!((power_over_factorial(-2.0, 3) + 8.0 / 6.0).abs() < 1e-14);
        assert!((power_over_factorial(-2.0, 4) - 16.0 / 24.0).abs() < 1e-14);
        assert!(power_over_factorial(3.0, 40).is_finite());
    }

    #[test]
    fn single_point_moment_is_one() {
        let m = moment_estimate(&NoiseSpec::default_h2(), &[(1.0, 0.0)], &quick(1.0)).unwrap();
        assert_eq!(m.mean, 1.0);
        assert_eq!(m.stderr, 0.0);
    }

    #[test]
    fn zero_time_moment_is_one() {
        let m = moment_estimate(&NoiseSpec::default_h2(), &[(0.0, 0.0), (0.0, 0.0)], &quick(1.0)).unwrap();
        assert_eq!(m.mean, 1.0);
    }

    #[test]
    fn coincident_second_moment_at_least_one() {
        let m = moment_estimate(&NoiseSpec::default_h2(), &[(0.5, 0.0), (0.5, 0.0)], &quick(0.1)).unwrap();
        assert!(m.mean - 1.0 >= -3.0 * m.stderr);
    }

    #[test]
    fn zero_time_covariance_is_zero() {
        let (c, tail) = limiting_covariance(&NoiseSpec::default_h2(), 0.0, 0.0, &quick(1.0)).unwrap();
        assert_eq!((c.mean, tail), (0.0, 0.0));
        assert_eq!(chaos_covariance(&NoiseSpec::default_h2(), 0.0, 0.0, 2, &quick(1.0)).unwrap().mean, 0.0);
    }

    #[test]
    fn short_truncation_is_rejected() {
        let cfg = FkConfig { z_max: 0.5, ..quick(1.0) };
        let e = limiting_covariance(&NoiseSpec::default_h2(), 0.5, 0.5, &cfg).unwrap_err();
        assert!(matches!(e, LabError::ZTruncation { .. }));
    }

    #[test]
    fn chaos_order_below_two_rejected() {
        assert!(chaos_covariance(&NoiseSpec::default_h2(), 0.5, 0.5, 1, &quick(1.0)).is_err());
    }
}
