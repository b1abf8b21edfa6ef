use crate::brownian::BrownianPath;
use crate::error::{LabError, Result};
use crate::noise_model::NoiseSpec;
use crate::quadrature::{QEpsTable, TimeGrid};
use crate::rng::{RngStream, StreamTag};

use super::FkConfig;

/// `𝔤(x) = eˣ − x − 1`, accurate near 0.
#[inline]
pub fn g_fn(x: f64) -> f64 {
    x.exp_m1() - x
}

/// Evaluates `ℐ` on uniform cells of width `h = 1/M`, with `γ₀` cell masses
/// by lag and `Q_ε` from an interpolation table.
#[derive(Debug, Clone)]
pub struct FkEngine {
    cfg: FkConfig,
    table: QEpsTable,
    /// `mass_lag[k + n_max]` is the mass of cells whose indices differ by `k`.
    mass_lag: Vec<f64>,
    n_max: usize,
}

impl FkEngine {
    /// Engine for times up to `t_max` and `Q_ε` arguments up to `x_max`.
    pub fn new(spec: &NoiseSpec, cfg: &FkConfig, t_max: f64, x_max: f64) -> Result<Self> {
        cfg.validate()?;
        let n_max = cfg.cells_for(t_max)?;
        let h = cfg.cell_width();
        let lags = -(n_max as i64)..=(n_max as i64);
        let mass_lag = lags.map(|k| spec.gamma0.cell_mass(k as f64 * h, (k + 1) as f64 * h, 0.0, h)).collect();
        let x_max = x_max.max(1.0);
        let k = ((x_max / (0.12 * cfg.eps.sqrt())).ceil() as usize).clamp(64, 1 << 16);
        let table = QEpsTable::build(&spec.phi, cfg.eps, x_max, k)?;
        Ok(Self {
            cfg: cfg.clone(),
            table,
            mass_lag,
            n_max,
        })
    }

    pub fn config(&self) -> &FkConfig {
        &self.cfg
    }

    pub fn table(&self) -> &QEpsTable {
        &self.table
    }

    /// Path grid for time `t`: half cells, so every cell midpoint is a node.
    pub fn path_grid(&self, t: f64) -> Result<TimeGrid> {
        TimeGrid::uniform(t, 2 * self.cfg.cells_for(t)?)
    }

    /// `ℐ^{i,j}_{t_i,t_j,ε}(z)` for two paths sampled on [`path_grid`](Self::path_grid).
    pub fn eval_i(&self, path_i: &BrownianPath, path_j: &BrownianPath, t_i: f64, t_j: f64, z: f64) -> Result<f64> {
        let xs = self.midpoint_values(path_i, t_i)?;
        let ys = self.midpoint_values(path_j, t_j)?;
        let mut out = [0.0];
        self.profile(&xs, &ys, &[z], &mut out);
        Ok(out[0])
    }

    /// `B_{t − r_a}` at the cell midpoints `r_a = (a + ½)h`, `a < t·M`.
    pub fn midpoint_values(&self, path: &BrownianPath, t: f64) -> Result<Vec<f64>> {
        let n = self.cfg.cells_for(t)?;
        if n > self.n_max {
            return Err(LabError::invalid("t", t, "exceeds the engine's time horizon"));
        }
        let h = self.cfg.cell_width();
        (0..n).map(|a| path.value_at(t - (a as f64 + 0.5) * h)).collect()
    }

    /// `out[q] = Σ_{a,b} mass(a − b) · Q_ε(xs[a] − ys[b] + zs[q])`.
    pub fn profile(&self, xs: &[f64], ys: &[f64], zs: &[f64], out: &mut [f64]) {
        debug_assert_eq!(zs.len(), out.len());
        out.iter_mut().for_each(|o| *o = 0.0);
        for (a, &x) in xs.iter().enumerate() {
            for (b, &y) in ys.iter().enumerate() {
                let w = self.mass_lag[a + self.n_max - b];
                let d = x - y;
                for (o, &z) in out.iter_mut().zip(zs) {
                    *o += w * self.table.eval(d + z);
                }
            }
        }
    }
}

/// Midpoint values for `n_paths` replicates of `slots` independent paths.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    /// `mids[r][i]` = midpoint values of path `i` in replicate `r`.
    pub mids: Vec<Vec<Vec<f64>>>,
    pub max_abs: f64,
}

impl PathEnsemble {
    /// Path `i` of replicate `r` runs over `[0, times[i]]` and uses stream
    /// `(seed, r, FkPaths).child(i)`.
    pub fn sample(cfg: &FkConfig, times: &[f64]) -> Result<Self> {
        let n: Vec<usize> = times.iter().map(|&t| cfg.cells_for(t)).collect::<Result<_>>()?;
        let h = cfg.cell_width();
        let mids = cfg.execution.map(cfg.n_paths, |r| {
            n.iter()
                .enumerate()
                .map(|(i, &ni)| {
                    if ni == 0 {
                        return Vec::new();
                    }
                    let grid = TimeGrid::uniform(ni as f64 * h, 2 * ni).expect("positive horizon");
                    let path = BrownianPath::sample(RngStream::new(cfg.seed, r as u64, StreamTag::FkPaths).child(i as u64), &grid);
                    // node 2(n − a) − 1 is time t − (a + ½)h
                    (0..ni).map(|a| path.values()[2 * (ni - a) - 1]).collect()
                })
                .collect::<Vec<Vec<f64>>>()
        });
        let max_abs = mids.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self { mids, max_abs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::gamma::gamma;

    #[test]
    fn g_fn_small_and_large() {
        assert_eq!(g_fn(0.0), 0.0);
        assert_relative_eq!(g_fn(1e-6), 0.5e-12, max_relative = 1e-6);
        assert_relative_eq!(g_fn(1.0), std::f64::consts::E - 2.0, max_relative = 1e-15);
        assert!(g_fn(-5.0) > 0.0);
    }

    #[test]
    fn frozen_paths_give_product_of_closed_forms() {
        let spec = NoiseSpec::default_h2();
        let cfg = FkConfig { eps: 1.0, cells_per_unit: 16, n_paths: 100, ..Default::default() };
        let eng = FkEngine::new(&spec, &cfg, 1.0, 4.0).unwrap();
        let g = eng.path_grid(1.0).unwrap();
        let zero = BrownianPath::from_values(&g, vec![0.0; g.nodes().len()]).unwrap();
        let v = eng.eval_i(&zero, &zero, 1.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(v, gamma(0.75) * 8.0 / 3.0, max_relative = 2e-6);
        assert_relative_eq!(v, 3.2678, max_relative = 1e-4);
    }

    #[test]
    fn misaligned_path_rejected() {
        let spec = NoiseSpec::default_h2();
        let cfg = FkConfig { eps: 1.0, cells_per_unit: 16, n_paths: 100, ..Default::default() };
        let eng = FkEngine::new(&spec, &cfg, 1.0, 4.0).unwrap();
        let coarse = TimeGrid::uniform(1.0, 16).unwrap();
        let p = BrownianPath::sample(RngStream::new(1, 0, StreamTag::FkPaths), &coarse);
        assert!(matches!(eng.eval_i(&p, &p, 1.0, 1.0, 0.0), Err(LabError::OffGridQuery { .. })));
    }

    #[test]
    fn ensemble_matches_direct_evaluation() {
        let spec = NoiseSpec::default_h2();
        let cfg = FkConfig { eps: 0.5, cells_per_unit: 16, n_paths: 100, ..Default::default() };
        let ens = PathEnsemble::sample(&cfg, &[1.0, 0.5]).unwrap();
        let eng = FkEngine::new(&spec, &cfg, 1.0, 2.0 * ens.max_abs + 2.0).unwrap();
        let g1 = eng.path_grid(1.0).unwrap();
        let g2 = eng.path_grid(0.5).unwrap();
        let p1 = BrownianPath::sample(RngStream::new(cfg.seed, 7, StreamTag::FkPaths).child(0), &g1);
        let p2 = BrownianPath::sample(RngStream::new(cfg.seed, 7, StreamTag::FkPaths).child(1), &g2);
        let direct = eng.eval_i(&p1, &p2, 1.0, 0.5, 0.7).unwrap();
        let mut out = [0.0];
        eng.profile(&ens.mids[7][0], &ens.mids[7][1], &[0.7], &mut out);
        assert_eq!(direct, out[0]);
    }

    #[test]
    fn empty_time_domain_is_zero() {
        let spec = NoiseSpec::default_h2();
        let cfg = FkConfig { eps: 1.0, cells_per_unit: 16, n_paths: 100, ..Default::default() };
        let eng = FkEngine::new(&spec, &cfg, 1.0, 4.0).unwrap();
        let mut out = [1.0, 1.0];
        eng.profile(&[], &[0.1, 0.2], &[0.0, 1.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }
}
