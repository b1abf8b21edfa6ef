//! Space-time elements `A^{ε,a,B}_{t,x}` in the Fourier-in-space picture.

use num_complex::Complex64;

use super::noise::{gram_norm_sq, NoiseLayout, NoiseRealization};
use crate::error::{LabError, Result};

/// `ℱA(m, ξ_k)` for one Brownian path and target `(t, x)`.
///
/// The time mollifier `a` equals one cell width. Averaging `(1/a)∫₀^{a∧(t−r)}`
/// over a cell is done with `S` midpoint sub-steps in each of `r` and `s`,
/// which collapses to a triangle rule over `τ = t − r − s` on the sub-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedElement {
    pub t: f64,
    pub x: f64,
    /// Cells inside `[0, t]`.
    pub cells: usize,
    /// `data[k·cells + m]`, absolute cell index `m`.
    pub data: Vec<Complex64>,
}

/// Number of layout cells covering `[0, t]`; `t` must sit on a cell boundary.
pub fn cells_for(layout: &NoiseLayout, t: f64) -> Result<usize> {
    let x = t / layout.cell_width();
    let n = x.round();
    if (x - n).abs() > 1e-9 * x.max(1.0) || t < 0.0 || n as usize > layout.cells {
        return Err(LabError::invalid(
            "t",
            t,
            format!("must be a multiple of the cell width {} inside [0, {}]", layout.cell_width(), layout.t_end),
        ));
    }
    Ok(n as usize)
}

/// Fill `out[k·n + m]` (absolute cell `m`) with `ℱA` at `x = 0`.
///
/// `path[j]` is `B` at `τ = j·h/S`, `j = 0..=n·S`.
pub(crate) fn fill_element(layout: &NoiseLayout, envelope: &[f64], path: &[f64], n: usize, sub_steps: usize, out: &mut Vec<Complex64>, phase: &mut Vec<Complex64>) {
    let s = sub_steps as isize;
    let k_len = layout.freq.len();
    out.clear();
    out.resize(k_len * n, Complex64::new(0.0, 0.0));
    if n == 0 {
        return;
    }
    let nodes = n * sub_steps + 1;
    // e^{−iξ_k B_τ} for every sub-grid node, built by recurrence in k.
    phase.clear();
    phase.resize(nodes * k_len, Complex64::new(0.0, 0.0));
    let dxi = layout.freq.dxi;
    for (j, &b) in path.iter().take(nodes).enumerate() {
        let step = Complex64::from_polar(1.0, -dxi * b);
        let mut z = Complex64::from_polar(1.0, -0.5 * dxi * b);
        let row = &mut phase[j * k_len..(j + 1) * k_len];
        for (k, slot) in row.iter_mut().enumerate() {
            if k % 32 == 0 {
                z = Complex64::from_polar(1.0, -layout.freq.xi[k] * b);
            }
            *slot = z;
            z *= step;
        }
    }
    let norm = 1.0 / (s * s) as f64;
    for m_rel in 0..n {
        let m_abs = n - 1 - m_rel;
        let centre = m_rel as isize * s;
        for d in -(s - 1)..s {
            let j = centre + d;
            if j < 0 {
                continue;
            }
            let w = (s - d.abs()) as f64 * norm;
            let row = &phase[j as usize * k_len..(j as usize + 1) * k_len];
            for k in 0..k_len {
                out[k * n + m_abs] += row[k] * w;
            }
        }
    }
    for k in 0..k_len {
        let e = envelope[k];
        for v in &mut out[k * n..(k + 1) * n] {
            *v *= e;
        }
    }
}

/// `e^{−εξ_k²/2}`.
pub(crate) fn envelope(layout: &NoiseLayout, eps: f64) -> Vec<f64> {
    layout.freq.xi.iter().map(|x| (-0.5 * eps * x * x).exp()).collect()
}

impl SmoothedElement {
    /// Build from node values `path[j] = B_{j·h/S}` covering `[0, t]`.
    pub fn new(layout: &NoiseLayout, path: &[f64], t: f64, x: f64, eps: f64, sub_steps: usize) -> Result<Self> {
        crate::error::ensure_positive("eps", eps)?;
        if sub_steps == 0 {
            return Err(LabError::invalid("sub_steps", 0, "need at least one sub-step"));
        }
        let n = cells_for(layout, t)?;
        if path.len() < n * sub_steps + 1 {
            return Err(LabError::invalid("path", path.len(), format!("need {} nodes", n * sub_steps + 1)));
        }
        let env = envelope(layout, eps);
        let mut data = Vec::new();
        fill_element(layout, &env, path, n, sub_steps, &mut data, &mut Vec::new());
        if x != 0.0 {
            for (k, &xi) in layout.freq.xi.iter().enumerate() {
                let p = Complex64::from_polar(1.0, -xi * x);
                for v in &mut data[k * n..(k + 1) * n] {
                    *v *= p;
                }
            }
        }
        Ok(Self { t, x, cells: n, data })
    }

    /// `‖A‖²_d`.
    pub fn norm_sq(&self, layout: &NoiseLayout) -> f64 {
        gram_norm_sq(&layout.gram, layout.cells, &layout.freq.weight, &self.data, self.cells)
    }

    /// `W_d(A)`.
    pub fn pairing(&self, noise: &NoiseRealization) -> f64 {
        noise.pairing(&self.data, self.cells)
    }

    /// `exp(W_d(A) − ½‖A‖²_d)`.
    pub fn wick_exponential(&self, noise: &NoiseRealization) -> f64 {
        (self.pairing(noise) - 0.5 * self.norm_sq(&noise.layout)).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise_model::NoiseSpec;
    use crate::rng::{RngStream, StreamTag};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn layout() -> Arc<NoiseLayout> {
        Arc::new(NoiseLayout::new(&NoiseSpec::default_h2(), 1.0, 40, 4.0, 16).unwrap())
    }

    #[test]
    fn frozen_path_has_closed_form_transform() {
        // B ≡ 0: every full cell carries e^{−εξ²/2}; the newest cell loses the
        // triangle half with τ < 0, i.e. weight (S(S+1)/2)/S².
        let l = layout();
        let s = 4;
        let path = vec![0.0; 16 * s + 1];
        let e = SmoothedElement::new(&l, &path, 1.0, 0.0, 0.5, s).unwrap();
        let k = 7;
        let env = (-0.25 * l.freq.xi[k] * l.freq.xi[k]).exp();
        assert_relative_eq!(e.data[k * 16 + 3].re, env, max_relative = 1e-12);
        assert_relative_eq!(e.data[k * 16 + 15].re, env * 10.0 / 16.0, max_relative = 1e-12);
        assert_eq!(e.data[k * 16 + 3].im, 0.0);
    }

    #[test]
    fn shift_in_x_is_a_phase() {
        let l = layout();
        let mut rng = RngStream::new(2, 0, StreamTag::Inner).rng();
        let grid = crate::quadrature::TimeGrid::uniform(0.5, 32).unwrap();
        let p = crate::brownian::BrownianPath::sample(RngStream::new(2, 0, StreamTag::Inner), &grid);
        let a = SmoothedElement::new(&l, p.values(), 0.5, 0.0, 0.3, 4).unwrap();
        let b = SmoothedElement::new(&l, p.values(), 0.5, 1.7, 0.3, 4).unwrap();
        assert_relative_eq!(a.norm_sq(&l), b.norm_sq(&l), max_relative = 1e-12);
        let z = l.sample(&mut rng);
        assert!((a.pairing(&z) - b.pairing(&z)).abs() > 0.0);
    }

    #[test]
    fn zero_time_gives_empty_element() {
        let l = layout();
        let e = SmoothedElement::new(&l, &[0.0], 0.0, 0.0, 1.0, 4).unwrap();
        assert_eq!(e.cells, 0);
        let z = l.sample(&mut RngStream::new(0, 0, StreamTag::Noise).rng());
        assert_eq!(e.wick_exponential(&z), 1.0);
    }

    #[test]
    fn off_grid_time_rejected() {
        let l = layout();
        assert!(SmoothedElement::new(&l, &[0.0; 100], 0.3, 0.0, 1.0, 4).is_err());
    }
}
