//! Closed-form solutions for kernels that factor as `K(x, y) = X(x) Y'(y)`,
//! and the exact minimax analysis of the uniform-to-beta model built on them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::numeric::{brent, integrate};

const QUAD_TOL: f64 = 1e-13;

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `P(Lambda <= y / (1 + x)) = X(x) Y(y)` on `0 <= y <= A <= max_threshold`.
#[derive(Clone)]
pub struct SeparableKernel {
    pub x: RealFn,
    pub y: RealFn,
    pub y_prime: RealFn,
    /// Largest threshold for which the factorization holds.
    pub max_threshold: f64,
}

impl std::fmt::Debug for SeparableKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SeparableKernel").field("max_threshold", &self.max_threshold).finish_non_exhaustive()
    }
}

impl SeparableKernel {
    /// Pre-change uniform-to-beta kernel: `P_inf(t) = t/2`.
    pub fn u2b_pre() -> Self {
        SeparableKernel {
            x: Arc::new(|x| 0.5 / (1.0 + x)),
            y: Arc::new(|y| y),
            y_prime: Arc::new(|_| 1.0),
            max_threshold: 2.0,
        }
    }

    /// Post-change uniform-to-beta kernel: `P_0(t) = (t/2)^2`.
    pub fn u2b_post() -> Self {
        SeparableKernel {
            x: Arc::new(|x| 0.25 / ((1.0 + x) * (1.0 + x))),
            y: Arc::new(|y| y * y),
            y_prime: Arc::new(|y| 2.0 * y),
            max_threshold: 2.0,
        }
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        (self.x)(x) * (self.y_prime)(y)
    }
}

/// `u(x) = v(x) + M X(x)`.
#[derive(Clone)]
pub struct SeparableSolution {
    pub m: f64,
    v: RealFn,
    x: RealFn,
}

impl std::fmt::Debug for SeparableSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SeparableSolution").field("m", &self.m).finish_non_exhaustive()
    }
}

impl SeparableSolution {
    pub fn eval(&self, x: f64) -> f64 {
        (self.v)(x) + self.m * (self.x)(x)
    }

    pub fn as_fn(&self) -> RealFn {
        let s = self.clone();
        Arc::new(move |x| s.eval(x))
    }
}

/// Solves `u(x) = v(x) + int_0^A X(x) Y'(y) u(y) dy` in closed form.
pub fn separable_solve(kernel: &SeparableKernel, v: RealFn, a: f64) -> Result<SeparableSolution> {
    ensure_positive("A", a)?;
    if a > kernel.max_threshold {
        return Err(Error::domain("A", format!("kernel factors only up to A = {}, got {a}", kernel.max_threshold)));
    }
    let yp = kernel.y_prime.clone();
    let xf = kernel.x.clone();
    let vv = v.clone();
    let num = integrate(|t| vv(t) * yp(t), 0.0, a, QUAD_TOL)?;
    let own = integrate(|t| xf(t) * yp(t), 0.0, a, QUAD_TOL)?;
    let den = 1.0 - own;
    if den.abs() < 1e-12 {
        return Err(Error::Resonance { denominator: den });
    }
    Ok(SeparableSolution { m: num / den, v, x: kernel.x.clone() })
}

/// `gamma_bar = 1 / (1 - log(3) / 2)`, the upper end of the minimax range.
pub fn u2b_gamma_bar() -> f64 {
    1.0 / (1.0 - 0.5 * 3f64.ln())
}

fn check_gamma(gamma: f64) -> Result<()> {
    let bar = u2b_gamma_bar();
    if !(gamma > 1.0 && gamma < bar) {
        return Err(Error::domain("gamma", format!("must lie in (1, {bar:.6}), got {gamma}")));
    }
    Ok(())
}

/// Exact operating characteristics of the uniform-to-beta model at threshold `A`.
#[derive(Debug, Clone)]
pub struct U2bExact {
    a: f64,
    ell: SeparableSolution,
    delta0: SeparableSolution,
    psi: SeparableSolution,
    /// `int_0^A delta_0(y) dy`.
    delta0_mass: f64,
}

impl U2bExact {
    pub fn new(a: f64) -> Result<Self> {
        let pre = SeparableKernel::u2b_pre();
        let post = SeparableKernel::u2b_post();
        let ell = separable_solve(&pre, Arc::new(|_| 1.0), a)?;
        let delta0 = separable_solve(&post, Arc::new(|_| 1.0), a)?;
        let psi = separable_solve(&pre, delta0.as_fn(), a)?;
        let d = delta0.clone();
        let delta0_mass = integrate(move |t| d.eval(t), 0.0, a, QUAD_TOL)?;
        Ok(U2bExact { a, ell, delta0, psi, delta0_mass })
    }

    pub fn threshold(&self) -> f64 {
        self.a
    }

    /// Dominant eigenvalue of the pre-change kernel, `log(1 + A) / 2`.
    pub fn lambda(&self) -> f64 {
        0.5 * self.a.ln_1p()
    }

    /// `E_inf[T]` from `V_0 = r`.
    pub fn arl(&self, r: f64) -> f64 {
        self.ell.eval(r)
    }

    pub fn add0(&self, r: f64) -> f64 {
        self.delta0.eval(r)
    }

    /// `ADD_nu` for `nu >= 1`: one step of the kernel erases the start, so
    /// every later delay equals the quasi-stationary (uniform) average of `delta_0`.
    pub fn add_inf(&self) -> f64 {
        self.delta0_mass / self.a
    }

    pub fn add_nu(&self, r: f64, nu: usize) -> f64 {
        if nu == 0 {
            self.add0(r)
        } else {
            self.add_inf()
        }
    }

    pub fn jp(&self, r: f64) -> f64 {
        self.add0(r).max(self.add_inf())
    }

    pub fn iadd(&self, r: f64) -> f64 {
        self.psi.eval(r)
    }

    pub fn stadd(&self, r: f64) -> f64 {
        self.iadd(r) / self.arl(r)
    }

    pub fn lower_bound(&self, r: f64) -> f64 {
        (r * self.add0(r) + self.iadd(r)) / (r + self.arl(r))
    }

    /// SRP start: the quasi-stationary law is uniform on `[0, A]`.
    pub fn srp_arl(&self) -> f64 {
        1.0 / (1.0 - self.lambda())
    }

    pub fn srp_add(&self) -> f64 {
        self.add_inf()
    }

    pub fn srp_stadd(&self) -> Result<f64> {
        let psi = self.psi.clone();
        let ell = self.ell.clone();
        let a = self.a;
        let num = integrate(move |t| psi.eval(t), 0.0, a, QUAD_TOL)?;
        let den = integrate(move |t| ell.eval(t), 0.0, a, QUAD_TOL)?;
        Ok(num / den)
    }

    pub fn local_pfa(&self, r: f64, k: usize, m: usize) -> Result<f64> {
        u2b_local_pfa(self.a, r, k, m)
    }
}

/// `(A, r_A)`: the minimax SR-r threshold and head start for ARL `gamma`.
///
/// `A` solves `A + (gamma-1) sqrt(1+A) log(1+A) - 2 (gamma-1) sqrt(1+A) = 0`;
/// the root is found on the separable-solve ARL so the algebra is checked
/// rather than assumed.
pub fn u2b_calibrate(gamma: f64) -> Result<(f64, f64)> {
    check_gamma(gamma)?;
    let head = |a: f64| (1.0 + a).sqrt() - 1.0;
    let f = |a: f64| -> Result<f64> { Ok(U2bExact::new(a)?.arl(head(a)) - gamma) };
    let a = brent(f, 1e-12, 2.0, 1e-15, 1e-13, 200)?;
    Ok((a, head(a)))
}

/// SRP threshold `B = exp(2 (1 - 1/gamma)) - 1` with `E_inf[T] = gamma`.
pub fn u2b_srp_threshold(gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok((2.0 * (1.0 - 1.0 / gamma)).exp_m1())
}

/// `P_inf(k < T <= k + m | T > k)` for SR-r with head start `r`: a
/// zero-modified geometric law.
pub fn u2b_local_pfa(a: f64, r: f64, k: usize, m: usize) -> Result<f64> {
    ensure_positive("A", a)?;
    if a > 2.0 {
        return Err(Error::domain("A", format!("closed form needs A <= 2, got {a}")));
    }
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::domain("r", format!("must be finite and nonnegative, got {r}")));
    }
    if m == 0 {
        return Err(Error::domain("m", "window must be at least 1"));
    }
    let lambda = 0.5 * a.ln_1p();
    let first = (a / (2.0 * (1.0 + r))).min(1.0);
    Ok(if k >= 1 { 1.0 - lambda.powi(m as i32) } else { 1.0 - first * lambda.powi(m as i32 - 1) })
}

/// One point of the exact SRP versus SR-r comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct U2bCurvePoint {
    pub gamma: f64,
    pub a: f64,
    pub r_a: f64,
    pub jp_srr: f64,
    pub b: f64,
    pub jp_srp: f64,
    pub jb: f64,
}

pub fn u2b_performance_point(gamma: f64) -> Result<U2bCurvePoint> {
    let (a, r_a) = u2b_calibrate(gamma)?;
    let srr = U2bExact::new(a)?;
    let b = u2b_srp_threshold(gamma)?;
    let srp = U2bExact::new(b)?;
    Ok(U2bCurvePoint { gamma, a, r_a, jp_srr: srr.jp(r_a), b, jp_srp: srp.srp_add(), jb: srr.lower_bound(r_a) })
}

/// `n` points log-spaced in `gamma` over `[lo, hi]` inside `(1, gamma_bar)`.
pub fn u2b_gamma_grid(n: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    check_gamma(lo)?;
    check_gamma(hi)?;
    if n < 2 || lo >= hi {
        return Err(Error::domain("gamma grid", "need n >= 2 and lo < hi"));
    }
    let (l, h) = (lo.ln(), hi.ln());
    Ok((0..n).map(|i| (l + (h - l) * i as f64 / (n - 1) as f64).exp()).collect())
}

pub fn u2b_performance_curves(gammas: &[f64]) -> Result<Vec<U2bCurvePoint>> {
    gammas.iter().map(|&g| u2b_performance_point(g)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorization_and_homogeneous_case() {
        let pre = SeparableKernel::u2b_pre();
        let post = SeparableKernel::u2b_post();
        for i in 0..100 {
            for j in 0..100 {
                let x = 3.0 * i as f64 / 99.0;
                let y = 2.0 * j as f64 / 99.0;
                let t = y / (1.0 + x);
                assert!(((pre.x)(x) * (pre.y)(y) - t / 2.0).abs() <= 1e-12);
                assert!(((post.x)(x) * (post.y)(y) - (t / 2.0).powi(2)).abs() <= 1e-12);
                assert!(pre.density(x, y) >= 0.0);
            }
        }
        let zero = separable_solve(&pre, Arc::new(|_| 0.0), 1.0).unwrap();
        assert_eq!(zero.m, 0.0);
        assert_eq!(zero.eval(0.7), 0.0);
        assert!(separable_solve(&pre, Arc::new(|_| 1.0), 2.5).unwrap_err().is_domain());
    }

    #[test]
    fn arl_matches_hand_algebra() {
        // M = A / (1 - log(1+A)/2) for v = 1.
        for a in [0.3, 1.0, 1.9] {
            let e = U2bExact::new(a).unwrap();
            let m = a / (1.0 - 0.5 * a.ln_1p());
            assert!((e.ell.m - m).abs() < 1e-12 * m);
            assert!((e.arl(0.0) - (1.0 + 0.5 * m)).abs() < 1e-12);
        }
    }

    #[test]
    fn calibration_solves_the_transcendental_equation() {
        for gamma in [1.2, 1.5, 2.0, 2.1] {
            let (a, r) = u2b_calibrate(gamma).unwrap();
            let s = (1.0 + a).sqrt();
            let eq = a + (gamma - 1.0) * s * a.ln_1p() - 2.0 * (gamma - 1.0) * s;
            assert!(eq.abs() < 1e-10, "{gamma}: {eq}");
            let e = U2bExact::new(a).unwrap();
            assert!((e.arl(r) - gamma).abs() < 1e-9);
            // The head start equalizes ADD_0 and ADD_inf.
            assert!((e.add0(r) - e.add_inf()).abs() < 1e-9);
        }
        let (a_small, _) = u2b_calibrate(1.0 + 1e-6).unwrap();
        assert!(a_small < 1e-5);
        assert!(u2b_calibrate(2.5).unwrap_err().is_domain());
        assert!(u2b_calibrate(1.0).is_err());
    }

    #[test]
    fn srp_threshold_and_suboptimality() {
        assert!((u2b_srp_threshold(2.0).unwrap() - (1f64.exp() - 1.0)).abs() < 1e-15);
        assert!(u2b_srp_threshold(1.0 + 1e-9).unwrap() < 1e-8);
        for gamma in [1.2, 1.5, 1.8, 2.1] {
            let b = u2b_srp_threshold(gamma).unwrap();
            assert!((U2bExact::new(b).unwrap().srp_arl() - gamma).abs() < 1e-12);
            let p = u2b_performance_point(gamma).unwrap();
            assert!(p.jp_srp > p.jp_srr);
            assert!((p.jp_srr - p.jb).abs() < 1e-9 * p.jb, "{p:?}");
        }
    }

    #[test]
    fn curves_are_monotone() {
        let grid = u2b_gamma_grid(50, 1.05, 2.2).unwrap();
        assert_eq!(grid.len(), 50);
        let pts = u2b_performance_curves(&grid).unwrap();
        for w in pts.windows(2) {
            assert!(w[1].jp_srr > w[0].jp_srr && w[1].jp_srp > w[0].jp_srp);
        }
        assert!(pts.iter().all(|p| p.jp_srr <= p.jp_srp));
    }

    #[test]
    fn local_pfa_branches() {
        let a: f64 = 1.3;
        let l = 0.5 * a.ln_1p();
        for k in [1, 2, 10] {
            assert_eq!(u2b_local_pfa(a, 0.4, k, 3).unwrap(), 1.0 - l.powi(3));
        }
        assert!((u2b_local_pfa(a, 0.4, 0, 1).unwrap() - (1.0 - a / 2.8)).abs() < 1e-15);
        assert!((u2b_local_pfa(2.0, 0.0, 1, 1).unwrap() - (1.0 - 0.5 * 3f64.ln())).abs() < 1e-15);
        assert!(u2b_local_pfa(a, 0.0, 0, 0).is_err());
    }
}

#[cfg(test)]
mod solver_agreement {
    use super::*;
    use crate::models::{make_model, ModelParams};
    use crate::ocsolve::{OcConfig, OcSolver, Start};

    #[test]
    fn grid_solver_reproduces_closed_forms() {
        let model = make_model(ModelParams::U2b).unwrap();
        for gamma in [1.2, 1.5, 1.8, 2.1] {
            let (a, r) = u2b_calibrate(gamma).unwrap();
            let exact = U2bExact::new(a).unwrap();
            let s = OcSolver::new(&model, a, 1.0, OcConfig::default()).unwrap();
            let at = Start::Point(r);
            let pairs = [
                (s.arl(at).unwrap(), exact.arl(r)),
                (s.delay0(at).unwrap(), exact.add0(r)),
                (s.delay0(Start::QuasiStationary).unwrap(), exact.add_inf()),
                (s.iadd(at).unwrap(), exact.iadd(r)),
                (s.lower_bound(r).unwrap(), exact.lower_bound(r)),
            ];
            for (num, ex) in pairs {
                assert!((num / ex - 1.0).abs() < 1e-6, "gamma {gamma}: {num} vs {ex}");
            }
            let pfa = s.local_pfa(at, 2, 3).unwrap();
            for (k, v) in pfa.profile.iter().enumerate() {
                assert!((v - exact.local_pfa(r, k, 2).unwrap()).abs() < 1e-6);
            }
        }
    }
}
