use std::sync::Arc;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, MatMut};

use crate::error::{Error, Result};

use super::grid::GridFunction;
use super::kernel::Kernel;

/// Largest spectral radius of `discount * M` accepted for a solve.
pub const MAX_SPECTRAL_RADIUS: f64 = 1.0 - 1e-6;

/// Relative residual every solution must meet.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// `I - discount * M`, factored once and reused for every right-hand side.
#[derive(Debug)]
pub struct FredholmOperator {
    kernel: Arc<Kernel>,
    discount: f64,
    lu: PartialPivLu<f64>,
    radius: f64,
}

impl FredholmOperator {
    pub fn new(kernel: Arc<Kernel>, discount: f64) -> Result<Self> {
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::domain("discount", format!("must lie in (0, 1], got {discount}")));
        }
        let n = kernel.grid().len();
        let m = kernel.matrix();
        let a = Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - discount * m[(i, j)]);
        let lu = a.partial_piv_lu();
        let mut op = FredholmOperator { kernel, discount, lu, radius: f64::NAN };
        op.radius = op.estimate_radius()?;
        if op.radius >= MAX_SPECTRAL_RADIUS {
            return Err(Error::SpectralRadius { radius: op.radius });
        }
        Ok(op)
    }

    pub fn kernel(&self) -> &Arc<Kernel> {
        &self.kernel
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Spectral radius of `discount * M`.
    pub fn spectral_radius(&self) -> f64 {
        self.radius
    }

    // For a nonnegative matrix the Perron root is the eigenvalue nearest 1,
    // so inverse iteration with (I - dM)^{-1} picks it out quickly: its
    // dominant eigenvalue is 1 / (1 - radius).
    fn estimate_radius(&self) -> Result<f64> {
        let n = self.kernel.grid().len();
        if self.discount * self.kernel.max_row_sum() < 0.5 {
            // Row sums bound the radius; no iteration needed for a clear contraction.
            return self.power_estimate(n);
        }
        let mut x = vec![1.0 / n as f64; n];
        let mut mu_prev = f64::NAN;
        for _ in 0..500 {
            let y = self.raw_solve(&x);
            let norm: f64 = y.iter().map(|v| v.abs()).sum();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::SpectralRadius { radius: 1.0 });
            }
            let mu = norm;
            x = y.into_iter().map(|v| v / norm).collect();
            if (mu - mu_prev).abs() <= 1e-13 * mu {
                return Ok(1.0 - 1.0 / mu);
            }
            mu_prev = mu;
        }
        Ok(1.0 - 1.0 / mu_prev)
    }

    fn power_estimate(&self, n: usize) -> Result<f64> {
        let mut x = vec![1.0; n];
        let mut est = 0.0;
        for _ in 0..50 {
            let y = self.kernel.apply(&x);
            let norm = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            est = self.discount * norm;
            if norm == 0.0 {
                return Ok(0.0);
            }
            x = y.into_iter().map(|v| v / norm).collect();
        }
        Ok(est)
    }

    fn raw_solve(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut out = v.to_vec();
        self.lu.solve_in_place(MatMut::from_column_major_slice_mut(&mut out, n, 1));
        out
    }

    fn raw_solve_transpose(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut out = v.to_vec();
        self.lu.solve_transpose_in_place(MatMut::from_column_major_slice_mut(&mut out, n, 1));
        out
    }

    /// `u - v - d M u`, returned with the relative max-norm residual.
    pub fn residual(&self, u: &[f64], v: &[f64]) -> (Vec<f64>, f64) {
        let mu = self.kernel.apply(u);
        let r: Vec<f64> = (0..u.len()).map(|i| v[i] + self.discount * mu[i] - u[i]).collect();
        let scale = u.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        let rel = r.iter().fold(0.0f64, |m, x| m.max(x.abs())) / scale;
        (r, rel)
    }

    /// Solves `u = v + d M u` and returns `u` with its relative residual.
    pub fn solve(&self, v: &[f64]) -> Result<(Vec<f64>, f64)> {
        let n = self.kernel.grid().len();
        if v.len() != n {
            return Err(Error::domain("rhs", format!("expected {n} values, got {}", v.len())));
        }
        let mut u = self.raw_solve(v);
        let (mut r, mut rel) = self.residual(&u, v);
        for _ in 0..3 {
            if rel <= RESIDUAL_TOL {
                break;
            }
            let du = self.raw_solve(&r);
            u.iter_mut().zip(&du).for_each(|(a, b)| *a += b);
            (r, rel) = self.residual(&u, v);
        }
        if !(rel <= RESIDUAL_TOL) {
            return Err(Error::Numerical(format!("Fredholm residual {rel:e} exceeds {RESIDUAL_TOL:e}")));
        }
        Ok((u, rel))
    }

    /// Solves the adjoint system `w = v + d w M` for a row vector `w`.
    pub fn solve_left(&self, v: &[f64]) -> Vec<f64> {
        self.raw_solve_transpose(v)
    }
}

/// Solves `u = v + discount * M u` on the kernel's grid.
pub fn solve_fredholm(kernel: Arc<Kernel>, v: &GridFunction, discount: f64) -> Result<GridFunction> {
    if v.grid() != kernel.grid() {
        return Err(Error::domain("rhs", "right-hand side lives on a different grid"));
    }
    let op = FredholmOperator::new(kernel, discount)?;
    let (u, _) = op.solve(v.values())?;
    GridFunction::new(*v.grid(), u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_model, ModelParams, Regime};
    use crate::ocsolve::grid::Grid;
    use crate::ocsolve::kernel::KernelRule;

    fn kernel(p: ModelParams, a: f64, n: usize, regime: Regime) -> Arc<Kernel> {
        let m = make_model(p).unwrap();
        Arc::new(Kernel::build(&m, Grid::new(a, n).unwrap(), regime, 1.0, KernelRule::CellIntegral).unwrap())
    }

    #[test]
    fn u2b_arl_matches_separable_closed_form() {
        // For A = 1 the kernel is 1/(2(1+x)) on [0, 1], so u(x) = 1 + M/(1+x)
        // with M = (A/2) / (1 - log(1+A)/2).
        let k = kernel(ModelParams::U2b, 1.0, 400, Regime::Pre);
        let g = *k.grid();
        let op = FredholmOperator::new(k, 1.0).unwrap();
        let (u, rel) = op.solve(&vec![1.0; g.len()]).unwrap();
        assert!(rel <= RESIDUAL_TOL);
        let big_m = 0.5 / (1.0 - 0.5 * 2f64.ln());
        for (i, ui) in u.iter().enumerate() {
            let exact = 1.0 + big_m / (1.0 + g.node(i));
            assert!((ui - exact).abs() < 1e-6 * exact, "node {i}: {ui} vs {exact}");
        }
        // Radius of the rank-one kernel is int_0^1 X(t) Y'(t) dt = log(2)/2.
        assert!((op.spectral_radius() - 0.5 * 2f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn zero_kernel_returns_rhs() {
        // With A tiny relative to the LR support the kernel is effectively zero.
        let k = kernel(ModelParams::ExpShift { theta: 0.1 }, 1e-3, 10, Regime::Pre);
        let g = *k.grid();
        let v = GridFunction::new(g, (0..10).map(|i| i as f64).collect()).unwrap();
        let u = solve_fredholm(k, &v, 1.0).unwrap();
        assert_eq!(u.values(), v.values());
    }

    #[test]
    fn residuals_are_tiny_and_discount_contracts() {
        let k = kernel(ModelParams::Beta { delta: 1.0 }, 43.0, 300, Regime::Pre);
        let n = k.grid().len();
        let full = FredholmOperator::new(k.clone(), 1.0).unwrap();
        let disc = FredholmOperator::new(k, 0.9).unwrap();
        assert!(disc.spectral_radius() < full.spectral_radius());
        assert!((disc.spectral_radius() - 0.9 * full.spectral_radius()).abs() < 1e-9);
        let v: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / n as f64).collect();
        for op in [&full, &disc] {
            let (_, rel) = op.solve(&v).unwrap();
            assert!(rel <= RESIDUAL_TOL);
        }
        // The radius is an eigenvalue: compare with a plain power iteration.
        let mut x = vec![1.0; n];
        let mut lam = 0.0;
        for _ in 0..3000 {
            let y = full.kernel().apply(&x);
            lam = y.iter().sum::<f64>() / x.iter().sum::<f64>();
            let s: f64 = y.iter().sum();
            x = y.into_iter().map(|v| v / s).collect();
        }
        assert!((lam - full.spectral_radius()).abs() < 1e-8, "{lam} vs {}", full.spectral_radius());
    }

    #[test]
    fn rejects_bad_discount() {
        let k = kernel(ModelParams::U2b, 1.0, 10, Regime::Pre);
        assert!(FredholmOperator::new(k.clone(), 0.0).unwrap_err().is_domain());
        assert!(FredholmOperator::new(k, 1.5).is_err());
    }
}
