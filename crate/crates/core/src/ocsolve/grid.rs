use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placement of the cell edges on `[0, A]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Mesh {
    /// `N` equal cells.
    Uniform,
    /// Cells equal in `log(1 + x / scale)`, so the width grows with `x`.
    ///
    /// The transition kernel from `x` spreads over a range proportional to
    /// `1 + x`, and this mesh keeps that range resolved by a similar number
    /// of cells everywhere.
    Graded { scale: f64 },
}

impl Default for Mesh {
    fn default() -> Self {
        Mesh::Graded { scale: 1.0 }
    }
}

/// `N` cells on `[0, A]` with collocation nodes at the cell midpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    a: f64,
    n: usize,
    mesh: Mesh,
}

impl Grid {
    /// Uniform grid.
    pub fn new(a: f64, n: usize) -> Result<Self> {
        Self::with_mesh(a, n, Mesh::Uniform)
    }

    pub fn with_mesh(a: f64, n: usize, mesh: Mesh) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::domain("A", format!("threshold must be positive and finite, got {a}")));
        }
        if n < 2 {
            return Err(Error::domain("grid", format!("need at least 2 nodes, got {n}")));
        }
        if let Mesh::Graded { scale } = mesh {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::domain("mesh", format!("grading scale must be positive, got {scale}")));
            }
        }
        Ok(Grid { a, n, mesh })
    }

    pub fn threshold(&self) -> f64 {
        self.a
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    /// Left edge of cell `j`; `edge(0) = 0` and `edge(n) = A`.
    pub fn edge(&self, j: usize) -> f64 {
        if j == 0 {
            return 0.0;
        }
        if j >= self.n {
            return self.a;
        }
        let s = j as f64 / self.n as f64;
        match self.mesh {
            Mesh::Uniform => s * self.a,
            Mesh::Graded { scale } => scale * (s * (self.a / scale).ln_1p()).exp_m1(),
        }
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.n).map(|j| self.edge(j)).collect()
    }

    pub fn node(&self, i: usize) -> f64 {
        0.5 * (self.edge(i) + self.edge(i + 1))
    }

    pub fn nodes(&self) -> Vec<f64> {
        let e = self.edges();
        e.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Width of cell `i`, which is also its quadrature weight.
    pub fn width(&self, i: usize) -> f64 {
        self.edge(i + 1) - self.edge(i)
    }

    pub fn weights(&self) -> Vec<f64> {
        let e = self.edges();
        e.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index of the cell containing `x`, clamped to the grid.
    pub fn cell(&self, x: f64) -> usize {
        if x.is_nan() || x <= 0.0 {
            return 0;
        }
        let s = match self.mesh {
            Mesh::Uniform => x / self.a,
            Mesh::Graded { scale } => (x / scale).ln_1p() / (self.a / scale).ln_1p(),
        };
        let mut j = ((s * self.n as f64).floor().max(0.0) as usize).min(self.n - 1);
        // Guard against rounding at the edges.
        while j > 0 && x < self.edge(j) {
            j -= 1;
        }
        while j + 1 < self.n && x >= self.edge(j + 1) {
            j += 1;
        }
        j
    }
}

/// Values of a function at the nodes of a grid, read back piecewise constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::domain("values", format!("expected {} values, got {}", grid.len(), values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("grid function holds a non-finite value {v}")));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.values[self.grid.cell(x)]
    }

    /// `int_0^A u(x) dx` under the piecewise-constant reading.
    pub fn integral(&self) -> f64 {
        self.values.iter().zip(self.grid.weights()).map(|(v, w)| v * w).sum()
    }

    /// `int_0^A x u(x) dx` under the piecewise-constant reading.
    pub fn first_moment(&self) -> f64 {
        let e = self.grid.edges();
        self.values.iter().zip(e.windows(2)).map(|(v, w)| v * 0.5 * (w[1] * w[1] - w[0] * w[0])).sum()
    }

    /// Treats the values as a density and returns its CDF at the cell edges.
    pub fn edge_cdf(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len() + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for (v, w) in self.values.iter().zip(self.grid.weights()) {
            acc += v.max(0.0) * w;
            out.push(acc);
        }
        let total = acc;
        if total > 0.0 {
            out.iter_mut().for_each(|c| *c /= total);
        }
        out
    }
}

/// Inverse-CDF sampler for a piecewise-constant density on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSampler {
    edges: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridSampler {
    pub fn new(density: &GridFunction) -> Result<Self> {
        if density.values().iter().any(|v| *v < 0.0) || density.integral() <= 0.0 {
            return Err(Error::domain("density", "must be nonnegative with positive mass"));
        }
        Ok(GridSampler { edges: density.grid().edges(), cdf: density.edge_cdf() })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let n = self.edges.len() - 1;
        // First edge with cdf > u; the draw is uniform inside that cell.
        let j = self.cdf.partition_point(|&c| c <= u).clamp(1, n) - 1;
        let (lo, hi) = (self.cdf[j], self.cdf[j + 1]);
        let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.5 };
        self.edges[j] + frac.clamp(0.0, 1.0) * (self.edges[j + 1] - self.edges[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn nodes_are_midpoints() {
        let g = Grid::new(10.0, 5).unwrap();
        assert_eq!(g.nodes(), vec![1.0, 3.0, 5.0, 7.0, 9.0]);
        assert_eq!(g.weights().iter().sum::<f64>(), 10.0);
        assert_eq!(g.cell(0.0), 0);
        assert_eq!(g.cell(9.99), 4);
        assert_eq!(g.cell(10.0), 4);
        assert!(Grid::new(0.0, 5).is_err());
        assert!(Grid::new(1.0, 1).is_err());
        assert!(Grid::with_mesh(1.0, 4, Mesh::Graded { scale: 0.0 }).is_err());
    }

    #[test]
    fn graded_mesh_invariants() {
        let g = Grid::with_mesh(3452.0, 500, Mesh::Graded { scale: 1.0 }).unwrap();
        let e = g.edges();
        assert_eq!(e[0], 0.0);
        assert_eq!(e[500], 3452.0);
        assert!(e.windows(2).all(|w| w[1] > w[0]));
        assert!((g.weights().iter().sum::<f64>() - 3452.0).abs() < 1e-9);
        // Relative width (w_i / (1 + x_i)) is roughly constant.
        let rel: Vec<f64> = (0..500).map(|i| g.width(i) / (1.0 + g.node(i))).collect();
        let (lo, hi) = rel.iter().fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(hi / lo < 1.05);
        for i in 0..500 {
            assert_eq!(g.cell(g.node(i)), i);
            assert_eq!(g.cell(e[i]), i);
        }
    }

    #[test]
    fn piecewise_constant_reading() {
        let g = Grid::new(2.0, 4).unwrap();
        let f = GridFunction::new(g, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(f.eval(0.6), 2.0);
        assert!((f.integral() - 5.0).abs() < 1e-15);
        assert!(GridFunction::new(g, vec![1.0]).is_err());
        assert!(GridFunction::new(g, vec![1.0, f64::NAN, 0.0, 0.0]).is_err());
        let ones = GridFunction::new(g, vec![1.0; 4]).unwrap();
        assert!((ones.first_moment() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn sampler_reproduces_density() {
        for mesh in [Mesh::Uniform, Mesh::Graded { scale: 1.0 }] {
            let g = Grid::with_mesh(4.0, 4, mesh).unwrap();
            let w = g.weights();
            let masses = [0.2, 0.0, 0.6, 0.2];
            let f = GridFunction::new(g, (0..4).map(|i| masses[i] / w[i]).collect()).unwrap();
            let s = GridSampler::new(&f).unwrap();
            let mut rng = stream_rng(3, 0);
            let n = 200_000;
            let mut counts = [0usize; 4];
            for _ in 0..n {
                let x = s.sample(&mut rng);
                assert!((0.0..=4.0).contains(&x));
                counts[g.cell(x)] += 1;
            }
            assert_eq!(counts[1], 0);
            assert!((counts[2] as f64 / n as f64 - 0.6).abs() < 0.01);
            assert!((counts[0] as f64 / n as f64 - 0.2).abs() < 0.01);
        }
    }
}
