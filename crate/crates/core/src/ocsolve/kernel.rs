use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatMut, MatRef};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ChangePointModel, Regime};

use super::grid::Grid;

/// How the transition kernel is collapsed onto the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelRule {
    /// `M[i][j] = P(V_1 in cell j | V_0 = x_i)`, the kernel integrated exactly
    /// over each cell from the LR distribution function.
    #[default]
    CellIntegral,
    /// `M[i][j] = K(x_i, x_j) * h`, the kernel density at the node.
    MidpointDensity,
    /// Piecewise-linear interpolation between nodes (constant on the two end
    /// half-cells), integrated exactly against the kernel using the partial
    /// means of the LR.
    Linear,
}

/// Discretized transition kernel `K_d(x, y) = d/dy P_d(Lambda <= y / xi(x))`
/// for `xi(x) = (1 + x) * scale`, truncated to `[0, A]`.
#[derive(Debug, Clone)]
pub struct Kernel {
    model: ChangePointModel,
    grid: Grid,
    regime: Regime,
    xi_scale: f64,
    rule: KernelRule,
    matrix: Mat<f64>,
    survival: Vec<f64>,
}

impl Kernel {
    pub fn build(model: &ChangePointModel, grid: Grid, regime: Regime, xi_scale: f64, rule: KernelRule) -> Result<Self> {
        if !(xi_scale.is_finite() && xi_scale >= 1.0) {
            return Err(Error::domain("xi_scale", format!("must be finite and at least 1, got {xi_scale}")));
        }
        let n = grid.len();
        let mut flat = vec![0.0; n * n];
        let mut survival = vec![0.0; n];
        let geom = Geometry::new(&grid);
        flat.par_chunks_mut(n).zip(survival.par_iter_mut()).enumerate().for_each(|(i, (row, s))| {
            *s = fill_row(model, &geom, regime, xi_scale, rule, geom.nodes[i], row);
        });
        if let Some(bad) = flat.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Numerical(format!("kernel entry {bad} is not a finite nonnegative number")));
        }
        let matrix = Mat::from_fn(n, n, |i, j| flat[i * n + j]);
        Ok(Kernel { model: model.clone(), grid, regime, xi_scale, rule, matrix, survival })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn xi_scale(&self) -> f64 {
        self.xi_scale
    }

    pub fn rule(&self) -> KernelRule {
        self.rule
    }

    pub fn matrix(&self) -> MatRef<'_, f64> {
        self.matrix.as_ref()
    }

    /// `1 - sum_j M[i][j]`: the one-step stopping probability from node `i`.
    pub fn survival(&self) -> &[f64] {
        &self.survival
    }

    /// Largest row sum.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.grid.len()).map(|i| self.matrix.row(i).iter().sum::<f64>()).fold(0.0, f64::max)
    }

    /// Kernel row for an arbitrary start `x` and its stopping probability.
    pub fn row_at(&self, x: f64) -> (Vec<f64>, f64) {
        let mut row = vec![0.0; self.grid.len()];
        let geom = Geometry::new(&self.grid);
        let s = fill_row(&self.model, &geom, self.regime, self.xi_scale, self.rule, x, &mut row);
        (row, s)
    }

    /// Pointwise kernel density `K(x, y)`.
    pub fn density(&self, x: f64, y: f64) -> f64 {
        let xi = (1.0 + x) * self.xi_scale;
        self.model.lr_pdf(self.regime, y / xi) / xi
    }

    /// `M u` for `k` stacked columns held column-major in `u`.
    pub fn apply_cols(&self, u: &[f64], k: usize) -> Vec<f64> {
        let n = self.grid.len();
        let mut out = vec![0.0; n * k];
        matmul(
            MatMut::from_column_major_slice_mut(&mut out, n, k),
            Accum::Replace,
            self.matrix.as_ref(),
            MatRef::from_column_major_slice(u, n, k),
            1.0,
            faer::get_global_parallelism(),
        );
        out
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.apply_cols(u, 1)
    }

    /// `w M` for a row vector `w`.
    pub fn apply_left(&self, w: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let mut out = vec![0.0; n];
        matmul(
            MatMut::from_column_major_slice_mut(&mut out, n, 1),
            Accum::Replace,
            self.matrix.as_ref().transpose(),
            MatRef::from_column_major_slice(w, n, 1),
            1.0,
            faer::get_global_parallelism(),
        );
        out
    }
}

struct Geometry {
    edges: Vec<f64>,
    nodes: Vec<f64>,
    a: f64,
}

impl Geometry {
    fn new(grid: &Grid) -> Self {
        Geometry { edges: grid.edges(), nodes: grid.nodes(), a: grid.threshold() }
    }
}

// Fills one kernel row and returns the stopping probability from `x`.
fn fill_row(
    model: &ChangePointModel,
    geom: &Geometry,
    regime: Regime,
    xi_scale: f64,
    rule: KernelRule,
    x: f64,
    row: &mut [f64],
) -> f64 {
    let xi = (1.0 + x) * xi_scale;
    match rule {
        KernelRule::CellIntegral => {
            let mut lo = model.lr_tails(regime, 0.0);
            for (j, cell) in row.iter_mut().enumerate() {
                let hi = model.lr_tails(regime, geom.edges[j + 1] / xi);
                *cell = prob_between(lo, hi);
                lo = hi;
            }
            lo.1
        }
        KernelRule::MidpointDensity => {
            for (j, cell) in row.iter_mut().enumerate() {
                let h = geom.edges[j + 1] - geom.edges[j];
                *cell = model.lr_pdf(regime, geom.nodes[j] / xi) * h / xi;
            }
            (1.0 - row.iter().sum::<f64>()).max(0.0)
        }
        KernelRule::Linear => {
            let nodes = &geom.nodes;
            let n = nodes.len();
            let at = |y: f64| (model.lr_tails(regime, y / xi), model.lr_partial_mean(regime, y / xi));
            row.fill(0.0);
            let mut prev = at(0.0);
            let first = at(nodes[0]);
            row[0] += prob_between(prev.0, first.0);
            prev = first;
            for j in 0..n - 1 {
                let next = at(nodes[j + 1]);
                let p = prob_between(prev.0, next.0);
                let h = nodes[j + 1] - nodes[j];
                // int (y - x_j) K(x, y) dy over [x_j, x_{j+1}], as a share of p.
                let q = xi * mean_between(prev.1, next.1) - nodes[j] * p;
                let upper = (q / h).clamp(0.0, p);
                row[j] += p - upper;
                row[j + 1] += upper;
                prev = next;
            }
            let last = at(geom.a);
            row[n - 1] += prob_between(prev.0, last.0);
            last.0 .1
        }
    }
}

// P(a < Lambda <= b) from `(cdf, sf)` pairs, differencing the smaller tail.
fn prob_between(a: (f64, f64), b: (f64, f64)) -> f64 {
    (if b.0 <= 0.5 { b.0 - a.0 } else { a.1 - b.1 }).max(0.0)
}

// E[Lambda; a < Lambda <= b] from `(lower, upper)` partial means.
fn mean_between(a: (f64, f64), b: (f64, f64)) -> f64 {
    (if b.1.is_finite() && b.0 > b.1 { a.1 - b.1 } else { b.0 - a.0 }).max(0.0)
}
