use crate::error::{ensure_positive, LabError, Result};

/// Sorted time nodes on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    uniform: bool,
}

impl TimeGrid {
    /// `cells` equal cells on `[0, t_end]`. Node `k` is exactly `k·t_end/cells`.
    pub fn uniform(t_end: f64, cells: usize) -> Result<Self> {
        ensure_positive("t_end", t_end)?;
        if cells == 0 {
            return Err(LabError::invalid("cells", cells, "need at least one cell"));
        }
        let nodes = (0..=cells).map(|k| k as f64 * t_end / cells as f64).collect();
        Ok(Self { nodes, uniform: true })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] != 0.0 {
            return Err(LabError::invalid("nodes", format!("{nodes:?}"), "need >= 2 nodes starting at 0"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || !nodes.iter().all(|x| x.is_finite()) {
            return Err(LabError::invalid("nodes", format!("{nodes:?}"), "must be finite and strictly increasing"));
        }
        Ok(Self { nodes, uniform: false })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn t_end(&self) -> f64 {
        *self.nodes.last().expect("non-empty")
    }

    /// Cell width of a uniform grid.
    pub fn step(&self) -> Option<f64> {
        self.uniform.then(|| self.t_end() / self.cells() as f64)
    }

    /// Index of the node equal to `s` (up to rounding in the node formula).
    pub fn index_of(&self, s: f64) -> Result<usize> {
        let off = || LabError::OffGridQuery { time: s };
        if !s.is_finite() {
            return Err(off());
        }
        let tol = 1e-9 * self.t_end() / self.cells() as f64;
        if self.uniform {
            let h = self.t_end() / self.cells() as f64;
            let k = (s / h).round();
            if k < 0.0 || k as usize > self.cells() || (k * h - s).abs() > tol {
                return Err(off());
            }
            Ok(k as usize)
        } else {
            let i = self.nodes.partition_point(|&x| x < s - tol);
            match self.nodes.get(i) {
                Some(&x) if (x - s).abs() <= tol => Ok(i),
                _ => Err(off()),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_endpoints() {
        let g = TimeGrid::uniform(2.0, 8).unwrap();
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(g.t_end(), 2.0);
        assert_eq!(g.cells(), 8);
        assert_eq!(g.index_of(0.75).unwrap(), 3);
        assert!(g.index_of(0.8).is_err());
        assert!(g.index_of(2.25).is_err());
    }

    #[test]
    fn irregular_grid() {
        let g = TimeGrid::from_nodes(vec![0.0, 0.1, 0.5, 1.0]).unwrap();
        assert_eq!(g.index_of(0.5).unwrap(), 2);
        assert!(g.index_of(0.3).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::from_nodes(vec![0.1, 0.5]).is_err());
    }
}
