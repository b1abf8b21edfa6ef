use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::element::{cells_for, envelope, fill_element};
use super::noise::{gram_norm_sq, NoiseLayout, NoiseRealization};
use super::SpdeConfig;
use crate::brownian::BrownianPath;
use crate::error::{ensure_nonnegative, LabError, Result};
use crate::fk::{McEstimate, EXP_GUARD};
use crate::noise_model::NoiseSpec;
use crate::quadrature::TimeGrid;
use crate::rng::{RngStream, StreamTag};

/// Noise layout plus an x-grid, with the phases `e^{iξ_k x}` tabulated once.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub layout: Arc<NoiseLayout>,
    pub eps: f64,
    pub sub_steps: usize,
    pub n_inner: usize,
    pub xs: Vec<f64>,
    pub dx: f64,
    envelope: Vec<f64>,
    phases: Vec<Complex64>,
}

/// `u^{ε,a}` on an x-grid for several times, from one noise realization.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSample {
    pub ts: Vec<f64>,
    pub xs: Vec<f64>,
    /// `u[i·xs.len() + j]` at `(ts[i], xs[j])`.
    pub u: Vec<f64>,
    pub n_inner: usize,
    pub eps: f64,
    pub cell_width: f64,
}

impl SolutionSample {
    pub fn at(&self, ti: usize, xi: usize) -> f64 {
        self.u[ti * self.xs.len() + xi]
    }

    /// Trapezoid rule for `∫_{−R}^{R} (u(t,x) − 1) dx` on the sample's x-grid.
    pub fn average(&self, ti: usize, r: f64) -> Result<f64> {
        ensure_nonnegative("R", r)?;
        let idx: Vec<usize> = (0..self.xs.len()).filter(|&j| self.xs[j].abs() <= r * (1.0 + 1e-12) + 1e-12).collect();
        let (Some(&lo), Some(&hi)) = (idx.first(), idx.last()) else {
            return Err(LabError::invalid("R", r, "no grid point inside the window"));
        };
        let tol = 1e-9 * r.max(1.0);
        if (self.xs[lo] + r).abs() > tol || (self.xs[hi] - r).abs() > tol {
            return Err(LabError::invalid("R", r, "window edges must be x-grid points"));
        }
        let mut s = 0.0;
        for j in lo..hi {
            let a = self.at(ti, j) - 1.0;
            let b = self.at(ti, j + 1) - 1.0;
            s += 0.5 * (a + b) * (self.xs[j + 1] - self.xs[j]);
        }
        Ok(s)
    }
}

impl FieldGrid {
    /// Layout on `[0, t_max]` whose period accommodates `[−r_window, r_window]`.
    pub fn new(spec: &NoiseSpec, cfg: &SpdeConfig, t_max: f64, xs: Vec<f64>, r_window: f64) -> Result<Self> {
        cfg.validate()?;
        let cells = cfg.cells_for(t_max)?.max(1);
        let t_end = cells as f64 * cfg.cell_width();
        let layout = Arc::new(NoiseLayout::new(spec, t_end, cfg.frequencies_for(r_window), cfg.xi_max(), cells)?);
        let env = envelope(&layout, cfg.eps);
        let k = layout.freq.len();
        let mut phases = Vec::with_capacity(xs.len() * k);
        for &x in &xs {
            phases.extend(layout.freq.xi.iter().map(|&xi| Complex64::from_polar(1.0, xi * x)));
        }
        let dx = if xs.len() > 1 { xs[1] - xs[0] } else { 0.0 };
        Ok(Self {
            layout,
            eps: cfg.eps,
            sub_steps: cfg.sub_steps,
            n_inner: cfg.n_inner,
            xs,
            dx,
            envelope: env,
            phases,
        })
    }

    /// Uniform x-grid on `[−r, r]` with spacing `cfg.dx_for(t_max)`.
    pub fn window(spec: &NoiseSpec, cfg: &SpdeConfig, t_max: f64, r: f64) -> Result<Self> {
        ensure_nonnegative("R", r)?;
        let dx = cfg.dx_for(t_max);
        let half = (r / dx).round() as i64;
        if ((half as f64) * dx - r).abs() > 1e-9 * r.max(1.0) {
            return Err(LabError::invalid("R", r, format!("must be a multiple of dx = {dx}")));
        }
        let xs = (-half..=half).map(|i| i as f64 * dx).collect();
        Self::new(spec, cfg, t_max, xs, r)
    }

    pub fn t_end(&self) -> f64 {
        self.layout.t_end
    }

    pub fn sample_noise(&self, stream: RngStream) -> NoiseRealization {
        self.layout.sample(&mut stream.rng())
    }

    /// Average of `exp(W_d(A) − ½‖A‖²_d)` over `n_inner` paths drawn from `stream`.
    ///
    /// One backward path `β` on `[0, T]` serves every `t`: `B_τ = β_{T−t+τ} − β_{T−t}`,
    /// so the trajectories `r ↦ x + B_{t−r}` for different `t` differ by a shift.
    pub fn solve(&self, noise: &NoiseRealization, ts: &[f64], stream: RngStream, replicate: usize) -> Result<SolutionSample> {
        let l = &*self.layout;
        let s = self.sub_steps;
        let n_max = l.cells;
        let counts = ts.iter().map(|&t| cells_for(l, t)).collect::<Result<Vec<_>>>()?;
        let grid = TimeGrid::uniform(l.t_end, n_max * s)?;
        let k_len = l.freq.len();
        let nx = self.xs.len();
        let mut acc = vec![0.0; ts.len() * nx];
        let (mut data, mut phase, mut path) = (Vec::new(), Vec::new(), Vec::new());
        let mut y = vec![Complex64::new(0.0, 0.0); k_len];
        for b in 0..self.n_inner {
            let beta = BrownianPath::sample(stream.child(b as u64), &grid);
            let beta = beta.values();
            for (ti, &n) in counts.iter().enumerate() {
                let row = &mut acc[ti * nx..(ti + 1) * nx];
                if n == 0 {
                    row.iter_mut().for_each(|v| *v += 1.0);
                    continue;
                }
                let o = (n_max - n) * s;
                path.clear();
                path.extend(beta[o..=o + n * s].iter().map(|v| v - beta[o]));
                fill_element(l, &self.envelope, &path, n, s, &mut data, &mut phase);
                let norm = gram_norm_sq(&l.gram, l.cells, &l.freq.weight, &data, n);
                for k in 0..k_len {
                    let z = &noise.zeta[k * l.cells..k * l.cells + n];
                    let h = &data[k * n..(k + 1) * n];
                    y[k] = h.iter().zip(z).map(|(a, b)| a.conj() * b).sum();
                }
                for (j, v) in row.iter_mut().enumerate() {
                    let ph = &self.phases[j * k_len..(j + 1) * k_len];
                    let w: f64 = ph.iter().zip(&y).map(|(p, q)| p.re * q.re - p.im * q.im).sum();
                    let e = 2.0 * w - 0.5 * norm;
                    if e > EXP_GUARD || !e.is_finite() {
                        return Err(LabError::ExpOverflow { exponent: e, replicate });
                    }
                    *v += e.exp();
                }
            }
        }
        let inv = 1.0 / self.n_inner as f64;
        acc.iter_mut().for_each(|v| *v *= inv);
        Ok(SolutionSample {
            ts: ts.to_vec(),
            xs: self.xs.clone(),
            u: acc,
            n_inner: self.n_inner,
            eps: self.eps,
            cell_width: l.cell_width(),
        })
    }
}

/// `u^{ε,a}(t, x)` for one realization: mean of the compensated exponential over `cfg.n_inner` paths.
pub fn wick_solution(noise: &NoiseRealization, t: f64, x: f64, cfg: &SpdeConfig, stream: RngStream) -> Result<f64> {
    let grid = grid_for(noise, cfg, vec![x], x.abs())?;
    Ok(grid.solve(noise, &[t], stream, 0)?.u[0])
}

/// `A_t(R)` for one realization; the inner ensemble is shared across x.
pub fn spatial_average(noise: &NoiseRealization, t: f64, r: f64, cfg: &SpdeConfig, stream: RngStream) -> Result<f64> {
    let dx = cfg.dx_for(t);
    let half = (r / dx).round() as i64;
    let xs = (-half..=half).map(|i| i as f64 * dx).collect();
    let grid = grid_for(noise, cfg, xs, r)?;
    grid.solve(noise, &[t], stream, 0)?.average(0, r)
}

/// Field grid reusing the layout of an existing realization.
fn grid_for(noise: &NoiseRealization, cfg: &SpdeConfig, xs: Vec<f64>, r: f64) -> Result<FieldGrid> {
    cfg.validate()?;
    let layout = Arc::clone(&noise.layout);
    let env = envelope(&layout, cfg.eps);
    let mut phases = Vec::new();
    for &x in &xs {
        phases.extend(layout.freq.xi.iter().map(|&xi| Complex64::from_polar(1.0, xi * x)));
    }
    if r > 0.0 && layout.freq.period() < 2.0 * r {
        return Err(LabError::invalid("R", r, "window wider than the noise period"));
    }
    let dx = if xs.len() > 1 { xs[1] - xs[0] } else { 0.0 };
    Ok(FieldGrid {
        layout,
        eps: cfg.eps,
        sub_steps: cfg.sub_steps,
        n_inner: cfg.n_inner,
        xs,
        dx,
        envelope: env,
        phases,
    })
}

/// `e_k(v) / C(n, k)`: the mean of `∏` over all `k`-subsets of distinct entries.
pub fn elementary_mean(values: &[f64], k: usize) -> Option<f64> {
    let n = values.len();
    if k > n {
        return None;
    }
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for &v in values {
        for j in (1..=k).rev() {
            e[j] += e[j - 1] * v;
        }
    }
    let binom = (0..k).fold(1.0, |c, i| c * (n - i) as f64 / (i + 1) as f64);
    Some(e[k] / binom)
}

/// `A^{(e)}_{t}(R)` for every replicate, ensemble, time and radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageTable {
    pub ts: Vec<f64>,
    pub rs: Vec<f64>,
    pub ensembles: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Index `((rep·E + e)·|ts| + ti)·|rs| + ri`.
    pub data: Vec<f64>,
}

impl AverageTable {
    pub fn value(&self, rep: usize, e: usize, ti: usize, ri: usize) -> f64 {
        self.data[((rep * self.ensembles + e) * self.ts.len() + ti) * self.rs.len() + ri]
    }

    /// Ensemble-averaged `A_t(R)` per replicate.
    pub fn combined(&self, ti: usize, ri: usize) -> Vec<f64> {
        (0..self.replicates)
            .map(|r| (0..self.ensembles).map(|e| self.value(r, e, ti, ri)).sum::<f64>() / self.ensembles as f64)
            .collect()
    }

    /// Unbiased `E[A_{t₁}(R) A_{t₂}(R)]` from distinct-ensemble cross products.
    pub fn cross_moment(&self, t1: usize, t2: usize, ri: usize) -> Result<McEstimate> {
        let e = self.ensembles;
        if e < 2 {
            return Err(LabError::invalid("ensembles", e, "cross products need at least two"));
        }
        let v: Vec<f64> = (0..self.replicates)
            .map(|r| {
                let mut s = 0.0;
                for a in 0..e {
                    for b in 0..e {
                        if a != b {
                            s += self.value(r, a, t1, ri) * self.value(r, b, t2, ri);
                        }
                    }
                }
                s / (e * (e - 1)) as f64
            })
            .collect();
        Ok(McEstimate::from_samples(&v, self.seed))
    }

    /// Unbiased `Var(A_t(R))` (the exact mean is 0).
    pub fn variance(&self, ti: usize, ri: usize) -> Result<McEstimate> {
        self.cross_moment(ti, ti, ri)
    }

    /// Unbiased `E[(A_t − A_s)^k]` from `k` distinct ensembles.
    pub fn increment_power(&self, ti: usize, si: usize, ri: usize, k: usize) -> Result<McEstimate> {
        if k > self.ensembles {
            return Err(LabError::invalid("k", k, format!("needs at least {k} ensembles, have {}", self.ensembles)));
        }
        let v: Vec<f64> = (0..self.replicates)
            .map(|r| {
                let d: Vec<f64> = (0..self.ensembles).map(|e| self.value(r, e, ti, ri) - self.value(r, e, si, ri)).collect();
                elementary_mean(&d, k).unwrap_or(f64::NAN)
            })
            .collect();
        Ok(McEstimate::from_samples(&v, self.seed))
    }

    /// `R^{−1/2}‖A_t − A_s‖_k` with a delta-method standard error.
    pub fn increment_norm(&self, ti: usize, si: usize, ri: usize, k: usize) -> Result<McEstimate> {
        let m = self.increment_power(ti, si, ri, k)?;
        let r = self.rs[ri];
        let kf = k as f64;
        let base = m.mean.max(0.0);
        let norm = base.powf(1.0 / kf);
        let se = if base > 0.0 { norm / (kf * base) * m.stderr } else { m.stderr.powf(1.0 / kf) };
        Ok(McEstimate {
            mean: norm / r.sqrt(),
            stderr: se / r.sqrt(),
            n: m.n,
            seed: m.seed,
        })
    }
}

/// Simulate `replicates` noise draws and record `A_t(R)` for every `(t, R)` and inner ensemble.
pub fn spatial_average_replicates(spec: &NoiseSpec, cfg: &SpdeConfig, ts: &[f64], rs: &[f64], replicates: usize) -> Result<AverageTable> {
    cfg.validate()?;
    if ts.is_empty() || rs.is_empty() {
        return Err(LabError::invalid("grid", 0, "need at least one t and one R"));
    }
    let t_max = ts.iter().cloned().fold(0.0, f64::max);
    let r_max = rs.iter().cloned().fold(0.0, f64::max);
    let grid = FieldGrid::window(spec, cfg, t_max, r_max)?;
    let e = cfg.ensembles;
    let rows = cfg.execution.try_map(replicates, |rep| {
        let noise = grid.sample_noise(RngStream::new(cfg.seed, rep as u64, StreamTag::Noise));
        let inner = RngStream::new(cfg.seed, rep as u64, StreamTag::Inner);
        let mut out = Vec::with_capacity(e * ts.len() * rs.len());
        for ens in 0..e {
            let sol = grid.solve(&noise, ts, inner.child(ens as u64), rep)?;
            for ti in 0..ts.len() {
                for &r in rs {
                    out.push(sol.average(ti, r)?);
                }
            }
        }
        Ok::<_, LabError>(out)
    })?;
    Ok(AverageTable {
        ts: ts.to_vec(),
        rs: rs.to_vec(),
        ensembles: e,
        replicates,
        seed: cfg.seed,
        data: rows.concat(),
    })
}

/// `u^{(e)}(t, x)` per replicate and inner ensemble.
pub fn point_replicates(spec: &NoiseSpec, cfg: &SpdeConfig, t: f64, x: f64, replicates: usize) -> Result<Vec<Vec<f64>>> {
    let grid = FieldGrid::new(spec, cfg, t, vec![x], x.abs())?;
    cfg.execution.try_map(replicates, |rep| {
        let noise = grid.sample_noise(RngStream::new(cfg.seed, rep as u64, StreamTag::Noise));
        let inner = RngStream::new(cfg.seed, rep as u64, StreamTag::Inner);
        (0..cfg.ensembles)
            .map(|e| Ok(grid.solve(&noise, &[t], inner.child(e as u64), rep)?.u[0]))
            .collect::<Result<Vec<f64>>>()
    })
}

/// Estimate `R^{−1/2}‖A_t(R) − A_s(R)‖_k` over `replicates` noise draws.
pub fn increment_moment(spec: &NoiseSpec, t: f64, s: f64, r: f64, k: usize, replicates: usize, cfg: &SpdeConfig) -> Result<McEstimate> {
    if k == 0 || k % 2 == 1 {
        return Err(LabError::invalid("k", k, "must be even and positive"));
    }
    if !(s <= t) {
        return Err(LabError::invalid("s", s, "need s <= t"));
    }
    if s == t {
        return Ok(McEstimate::exact(0.0, cfg.seed));
    }
    let cfg = SpdeConfig {
        ensembles: cfg.ensembles.max(k),
        ..cfg.clone()
    };
    let tab = spatial_average_replicates(spec, &cfg, &[t, s], &[r], replicates)?;
    tab.increment_norm(0, 1, 0, k)
}

/// Snapshot CSV with columns `t,x,u`.
pub fn write_snapshot(path: &Path, sample: &SolutionSample) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "x", "u"])?;
    for (i, t) in sample.ts.iter().enumerate() {
        for (j, x) in sample.xs.iter().enumerate() {
            w.write_record([format!("{t:.8e}"), format!("{x:.8e}"), format!("{:.8e}", sample.at(i, j))])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamTag;
    use approx::assert_relative_eq;

    fn quick() -> SpdeConfig {
        SpdeConfig {
            eps: 1.0,
            cells_per_unit: 16,
            n_inner: 4,
            ..Default::default()
        }
    }

    #[test]
    fn single_mode_lognormal_identity() {
        // ζ ~ N(0, σ²): E[exp(ζ − σ²/2)] = exp(σ²/2 − σ²/2) = 1, via the Gaussian integral.
        let gl = crate::quadrature::gauss::GaussLegendre::new(64);
        for sigma2 in [0.01, 0.5, 2.0, 6.0] {
            let s: f64 = f64::sqrt(sigma2);
            let f = |z: f64| (z - 0.5 * sigma2).exp() * (-z * z / (2.0 * sigma2)).exp() / (2.0 * std::f64::consts::PI * sigma2).sqrt();
            let m = gl.integrate_composite(-12.0 * s + 0.5 * sigma2, 12.0 * s + sigma2, 16, f);
            assert!((m - 1.0).abs() < 1e-10, "σ² = {sigma2}: {m}");
        }
    }

    #[test]
    fn time_zero_is_one_and_average_zero() {
        let s = NoiseSpec::default_h2();
        let c = quick();
        let g = FieldGrid::window(&s, &c, 1.0, 2.0).unwrap();
        let z = g.sample_noise(RngStream::new(1, 0, StreamTag::Noise));
        let sol = g.solve(&z, &[0.0, 0.5], RngStream::new(1, 0, StreamTag::Inner), 0).unwrap();
        assert!((0..sol.xs.len()).all(|j| sol.at(0, j) == 1.0));
        assert_eq!(sol.average(0, 2.0).unwrap(), 0.0);
        assert_eq!(sol.average(1, 0.0).unwrap(), 0.0);
        assert!(sol.u.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn single_point_api_matches_grid() {
        let s = NoiseSpec::default_h2();
        let c = quick();
        let g = FieldGrid::window(&s, &c, 1.0, 1.0).unwrap();
        let z = g.sample_noise(RngStream::new(4, 0, StreamTag::Noise));
        let st = RngStream::new(4, 0, StreamTag::Inner);
        let sol = g.solve(&z, &[1.0], st, 0).unwrap();
        let mid = sol.xs.iter().position(|&x| x == 0.0).unwrap();
        assert_relative_eq!(wick_solution(&z, 1.0, 0.0, &c, st).unwrap(), sol.at(0, mid), max_relative = 1e-12);
        assert_relative_eq!(spatial_average(&z, 1.0, 1.0, &c, st).unwrap(), sol.average(0, 1.0).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn elementary_means() {
        assert_eq!(elementary_mean(&[2.0, 3.0], 2), Some(6.0));
        assert_relative_eq!(elementary_mean(&[1.0, 2.0, 3.0], 2).unwrap(), 11.0 / 3.0);
        assert_eq!(elementary_mean(&[1.0], 2), None);
        assert_eq!(elementary_mean(&[5.0, 7.0], 0), Some(1.0));
    }

    #[test]
    fn equal_times_give_zero_increment() {
        let s = NoiseSpec::default_h2();
        let m = increment_moment(&s, 0.5, 0.5, 2.0, 2, 10, &quick()).unwrap();
        assert_eq!(m.mean, 0.0);
        assert!(increment_moment(&s, 0.5, 0.25, 2.0, 3, 10, &quick()).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("snap.csv");
        let sample = SolutionSample {
            ts: vec![0.5],
            xs: vec![-1.0, 0.0],
            u: vec![1.5, 0.25],
            n_inner: 1,
            eps: 1.0,
            cell_width: 0.1,
        };
        write_snapshot(&p, &sample).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next(), Some("t,x,u"));
        assert_eq!(text.lines().count(), 3);
    }
}
