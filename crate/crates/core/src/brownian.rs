//! Standard Brownian paths sampled exactly on a [`TimeGrid`].

use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::quadrature::TimeGrid;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl BrownianPath {
    /// Cumulative sum of independent `N(0, Δt)` increments; `B₀ = 0`.
    pub fn sample(stream: RngStream, grid: &TimeGrid) -> Self {
        let mut rng = stream.rng();
        let nodes = grid.nodes();
        let mut values = Vec::with_capacity(nodes.len());
        values.push(0.0);
        let mut b = 0.0;
        for w in nodes.windows(2) {
            let z: f64 = StandardNormal.sample(&mut rng);
            b += z * (w[1] - w[0]).sqrt();
            values.push(b);
        }
        Self { grid: grid.clone(), values }
    }

    /// Wrap precomputed node values (`values[0]` must be 0).
    pub fn from_values(grid: &TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.nodes().len() || values.first() != Some(&0.0) {
            return Err(crate::error::LabError::invalid(
                "values",
                format!("len {}", values.len()),
                "need one value per node, starting at 0",
            ));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(crate::error::LabError::NonFinite("path values"));
        }
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Values at the grid nodes, in order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `B_s` for a grid node `s`; anything else is an error, never interpolated.
    pub fn value_at(&self, s: f64) -> Result<f64> {
        Ok(self.values[self.grid.index_of(s)?])
    }

    /// `τ ↦ B_{τ+s} − B_s` on the nodes from `s` onward (uniform grids only).
    /// Has the law of a Brownian motion on `[0, T − s]`.
    pub fn restarted_at(&self, s: f64) -> Result<Self> {
        let k = self.grid.index_of(s)?;
        let grid = TimeGrid::uniform(self.grid.t_end() - self.grid.nodes()[k], self.grid.cells() - k)?;
        let base = self.values[k];
        Ok(Self {
            grid,
            values: self.values[k..].iter().map(|v| v - base).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamTag;

    #[test]
    fn starts_at_zero_and_is_deterministic() {
        let g = TimeGrid::uniform(1.0, 32).unwrap();
        let s = RngStream::new(11, 3, StreamTag::FkPaths);
        let a = BrownianPath::sample(s, &g);
        let b = BrownianPath::sample(s, &g);
        assert_eq!(a, b);
        assert_eq!(a.value_at(0.0).unwrap(), 0.0);
        assert_eq!(a.value_at(1.0).unwrap(), *a.values().last().unwrap());
        assert!(a.value_at(1.0 / 64.0).is_err());
    }

    #[test]
    fn restart_subtracts_base() {
        let g = TimeGrid::uniform(2.0, 8).unwrap();
        let p = BrownianPath::sample(RngStream::new(1, 0, StreamTag::FkPaths), &g);
        let r = p.restarted_at(0.5).unwrap();
        assert_eq!(r.grid().cells(), 6);
        assert_eq!(r.value_at(0.0).unwrap(), 0.0);
        assert!((r.value_at(1.5).unwrap() - (p.value_at(2.0).unwrap() - p.value_at(0.5).unwrap())).abs() < 1e-15);
    }
}
