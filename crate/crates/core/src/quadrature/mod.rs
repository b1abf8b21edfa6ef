//! Numerical integration engines: singular product integration in time,
//! the regularized spectral integral `Q_ε`, and simplex sampling.

pub mod gauss;
mod grid;
mod qtable;
mod simplex;

pub use grid::TimeGrid;
pub use qtable::{q_eps, QEpsTable, TABLE_TOL};
pub use simplex::{dirichlet_log_density, sample_dirichlet_simplex, sample_simplex};

use crate::error::Result;
use crate::noise_model::NoiseSpec;

/// `∫₀^{t_i}∫₀^{t_j} γ₀(r − v) f(r, v) dr dv` with `f` at cell midpoints and
/// exact `γ₀` cell masses. `t_i`, `t_j` must be grid nodes.
pub fn singular_double_integral<F: FnMut(f64, f64) -> f64>(
    spec: &NoiseSpec,
    mut f: F,
    t_i: f64,
    t_j: f64,
    grid: &TimeGrid,
) -> Result<f64> {
    let ni = grid.index_of(t_i)?;
    let nj = grid.index_of(t_j)?;
    let x = grid.nodes();
    let mut total = 0.0;
    for a in 0..ni {
        let rm = 0.5 * (x[a] + x[a + 1]);
        for b in 0..nj {
            let vm = 0.5 * (x[b] + x[b + 1]);
            let w = spec.gamma0.cell_mass(x[a], x[a + 1], x[b], x[b + 1]);
            if w != 0.0 {
                total += w * f(rm, vm);
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_integrand_is_exact() {
        let s = NoiseSpec::default_h2();
        for m in [1, 3, 16] {
            let g = TimeGrid::uniform(1.0, m).unwrap();
            let v = singular_double_integral(&s, |_, _| 1.0, 1.0, 1.0, &g).unwrap();
            assert_relative_eq!(v, 8.0 / 3.0, max_relative = 1e-13);
        }
    }

    #[test]
    fn zero_integrand() {
        let g = TimeGrid::uniform(1.0, 8).unwrap();
        assert_eq!(singular_double_integral(&NoiseSpec::default_h2(), |_, _| 0.0, 1.0, 1.0, &g).unwrap(), 0.0);
    }

    #[test]
    fn bilinear_integrand_converges() {
        // ∬₀¹ r v |r−v|^{-1/2} = 16/21 via the lag substitution
        let exact = 16.0 / 21.0;
        let s = NoiseSpec::default_h2();
        let v64 = singular_double_integral(&s, |r, v| r * v, 1.0, 1.0, &TimeGrid::uniform(1.0, 64).unwrap()).unwrap();
        let v128 = singular_double_integral(&s, |r, v| r * v, 1.0, 1.0, &TimeGrid::uniform(1.0, 128).unwrap()).unwrap();
        assert!((v64 - v128).abs() < 0.01 * v128);
        assert!((v64 - exact).abs() < 0.02 * exact);
        assert!((v128 - exact).abs() < 0.02 * exact);
    }

    #[test]
    fn off_grid_endpoint_rejected() {
        let g = TimeGrid::uniform(1.0, 8).unwrap();
        assert!(singular_double_integral(&NoiseSpec::default_h2(), |_, _| 1.0, 0.3, 1.0, &g).is_err());
    }
}
