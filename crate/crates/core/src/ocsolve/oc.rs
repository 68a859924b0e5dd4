use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ChangePointModel, Regime};
use crate::procedures::ProcedureKind;

use super::fredholm::FredholmOperator;
use super::grid::{Grid, GridFunction, Mesh};
use super::kernel::{Kernel, KernelRule};

/// Default number of grid cells.
pub const DEFAULT_GRID: usize = 2000;

/// Numerical settings shared by every operating-characteristic computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcConfig {
    pub grid_n: usize,
    pub mesh: Mesh,
    pub rule: KernelRule,
    /// `ADD_nu` has plateaued once successive values differ by less than
    /// `plateau_tol * ADD_nu` for `plateau_run` consecutive `nu`.
    pub plateau_tol: f64,
    pub plateau_run: usize,
    pub max_nu: usize,
}

impl Default for OcConfig {
    fn default() -> Self {
        OcConfig { grid_n: DEFAULT_GRID, mesh: Mesh::default(), rule: KernelRule::CellIntegral, plateau_tol: 1e-6, plateau_run: 10, max_nu: 10_000 }
    }
}

impl OcConfig {
    pub fn with_grid(self, grid_n: usize) -> Self {
        OcConfig { grid_n, ..self }
    }
}

/// Where the statistic starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Start {
    /// `V_0 = x`.
    Point(f64),
    /// `V_0` drawn from the quasi-stationary distribution (the SRP start).
    QuasiStationary,
}

impl Start {
    pub fn for_kind(kind: &ProcedureKind) -> Start {
        match kind.fixed_start() {
            Some(x) => Start::Point(x),
            None => Start::QuasiStationary,
        }
    }
}

/// Quasi-stationary distribution of the pre-change statistic on `[0, A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiStationary {
    /// Piecewise-constant density, integrating to one.
    pub density: GridFunction,
    /// Dominant eigenvalue of the pre-change kernel.
    pub lambda: f64,
    /// `1 - lambda`, computed from the stopping probabilities without cancellation.
    pub one_minus_lambda: f64,
    /// Mean of the distribution.
    pub mean: f64,
    /// ARL of the procedure started from this distribution, `1 / (1 - lambda)`.
    pub arl: f64,
    pub iterations: usize,
}

impl QuasiStationary {
    /// Cell masses, summing to one.
    pub fn masses(&self) -> Vec<f64> {
        self.density.values().iter().zip(self.density.grid().weights()).map(|(q, h)| q * h).collect()
    }
}

/// Delays `ADD_nu = E_nu[T - nu | T > nu]` for `nu = 0, 1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddCurve {
    pub values: Vec<f64>,
    /// `log P_inf(T > nu)` for each `nu` in `values`.
    pub log_survival: Vec<f64>,
    pub plateau_reached: bool,
    /// Last value of the curve, where the plateau rule stopped it.
    pub add_inf: f64,
}

impl AddCurve {
    /// `(J_P, argmax nu)`: the largest delay over the computed curve.
    pub fn supremum(&self) -> (f64, usize) {
        self.values.iter().enumerate().fold((f64::NEG_INFINITY, 0), |best, (nu, &v)| if v > best.0 { (v, nu) } else { best })
    }
}

/// Conditional false-alarm probabilities `P_inf(k < T <= k+m | T > k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPfa {
    pub window: usize,
    pub profile: Vec<f64>,
    pub supremum: f64,
    pub argmax: usize,
    pub plateau_reached: bool,
}

/// Bayesian operating characteristics under the zero-modified geometric prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesOc {
    pub pi: f64,
    pub p: f64,
    pub pfa: f64,
    pub add: f64,
    pub chi: f64,
    pub psi: f64,
}

fn cached<'a, T>(cell: &'a OnceLock<T>, make: impl FnOnce() -> Result<T>) -> Result<&'a T> {
    if let Some(v) = cell.get() {
        return Ok(v);
    }
    let v = make()?;
    Ok(cell.get_or_init(|| v))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Integral-equation solver for one model, statistic shape and threshold.
///
/// Kernels, factorizations and solutions are computed on first use and kept.
#[derive(Debug)]
pub struct OcSolver {
    model: ChangePointModel,
    grid: Grid,
    xi_scale: f64,
    config: OcConfig,
    pre: Arc<Kernel>,
    post: OnceLock<Arc<Kernel>>,
    pre_op: OnceLock<FredholmOperator>,
    post_op: OnceLock<FredholmOperator>,
    ell: OnceLock<Vec<f64>>,
    delta0: OnceLock<Vec<f64>>,
    psi: OnceLock<Vec<f64>>,
    qsd: OnceLock<QuasiStationary>,
    max_residual: Mutex<f64>,
}

impl OcSolver {
    /// Solver for `xi(v) = (1 + v) * xi_scale` on `[0, A]`.
    pub fn new(model: &ChangePointModel, threshold: f64, xi_scale: f64, config: OcConfig) -> Result<Self> {
        let grid = Grid::with_mesh(threshold, config.grid_n, config.mesh)?;
        if !(config.plateau_tol > 0.0) || config.plateau_run == 0 || config.max_nu == 0 {
            return Err(Error::domain("plateau", "tolerance, run length and step cap must be positive"));
        }
        let pre = Arc::new(Kernel::build(model, grid, Regime::Pre, xi_scale, config.rule)?);
        Ok(OcSolver {
            model: model.clone(),
            grid,
            xi_scale,
            config,
            pre,
            post: OnceLock::new(),
            pre_op: OnceLock::new(),
            post_op: OnceLock::new(),
            ell: OnceLock::new(),
            delta0: OnceLock::new(),
            psi: OnceLock::new(),
            qsd: OnceLock::new(),
            max_residual: Mutex::new(0.0),
        })
    }

    pub fn for_kind(model: &ChangePointModel, kind: &ProcedureKind, threshold: f64, config: OcConfig) -> Result<Self> {
        kind.validate()?;
        Self::new(model, threshold, kind.xi_scale(), config)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn threshold(&self) -> f64 {
        self.grid.threshold()
    }

    pub fn config(&self) -> &OcConfig {
        &self.config
    }

    pub fn model(&self) -> &ChangePointModel {
        &self.model
    }

    pub fn pre_kernel(&self) -> &Arc<Kernel> {
        &self.pre
    }

    pub fn post_kernel(&self) -> Result<&Arc<Kernel>> {
        cached(&self.post, || Ok(Arc::new(Kernel::build(&self.model, self.grid, Regime::Post, self.xi_scale, self.config.rule)?)))
    }

    pub fn pre_operator(&self) -> Result<&FredholmOperator> {
        cached(&self.pre_op, || FredholmOperator::new(self.pre.clone(), 1.0))
    }

    fn post_operator(&self) -> Result<&FredholmOperator> {
        cached(&self.post_op, || FredholmOperator::new(self.post_kernel()?.clone(), 1.0))
    }

    /// Largest relative residual over all Fredholm solves so far.
    pub fn max_residual(&self) -> f64 {
        *self.max_residual.lock().expect("residual lock")
    }

    fn record(&self, solved: (Vec<f64>, f64)) -> Vec<f64> {
        let mut m = self.max_residual.lock().expect("residual lock");
        *m = m.max(solved.1);
        solved.0
    }

    fn wrap(&self, values: &[f64]) -> Result<GridFunction> {
        GridFunction::new(self.grid, values.to_vec())
    }

    fn ell_nodes(&self) -> Result<&Vec<f64>> {
        cached(&self.ell, || Ok(self.record(self.pre_operator()?.solve(&vec![1.0; self.grid.len()])?)))
    }

    fn delta0_nodes(&self) -> Result<&Vec<f64>> {
        cached(&self.delta0, || Ok(self.record(self.post_operator()?.solve(&vec![1.0; self.grid.len()])?)))
    }

    fn psi_nodes(&self) -> Result<&Vec<f64>> {
        cached(&self.psi, || {
            let d0 = self.delta0_nodes()?.clone();
            Ok(self.record(self.pre_operator()?.solve(&d0)?))
        })
    }

    /// `l(x) = E_inf[T | V_0 = x]` at the nodes.
    pub fn arl_function(&self) -> Result<GridFunction> {
        self.wrap(self.ell_nodes()?)
    }

    /// `delta_0(x) = E_0[T | V_0 = x]` at the nodes.
    pub fn delay0_function(&self) -> Result<GridFunction> {
        self.wrap(self.delta0_nodes()?)
    }

    /// `psi(x) = sum_nu E_inf[(T - nu)^+ | V_0 = x]` at the nodes.
    pub fn iadd_function(&self) -> Result<GridFunction> {
        self.wrap(self.psi_nodes()?)
    }

    // Pre-change kernel row at an arbitrary start, scaled by `discount`.
    fn pre_row(&self, x: f64) -> Vec<f64> {
        self.pre.row_at(x).0
    }

    /// ARL to false alarm from the given start.
    pub fn arl(&self, start: Start) -> Result<f64> {
        match start {
            Start::Point(x) => Ok(1.0 + dot(&self.pre_row(x), self.ell_nodes()?)),
            Start::QuasiStationary => Ok(self.quasi_stationary()?.arl),
        }
    }

    /// `ADD_0 = E_0[T]` from the given start.
    pub fn delay0(&self, start: Start) -> Result<f64> {
        let d0 = self.delta0_nodes()?;
        match start {
            Start::Point(x) => Ok(1.0 + dot(&self.post_kernel()?.row_at(x).0, d0)),
            Start::QuasiStationary => Ok(dot(&self.quasi_stationary()?.masses(), d0)),
        }
    }

    /// Integral delay `psi` from the given start.
    pub fn iadd(&self, start: Start) -> Result<f64> {
        let psi = self.psi_nodes()?;
        match start {
            Start::Point(x) => Ok(self.delay0(start)? + dot(&self.pre_row(x), psi)),
            Start::QuasiStationary => Ok(dot(&self.quasi_stationary()?.masses(), psi)),
        }
    }

    /// Stationary average delay of the repeated procedure, `psi / l`.
    pub fn stadd(&self, start: Start) -> Result<f64> {
        Ok(self.iadd(start)? / self.arl(start)?)
    }

    /// `J_B = (r delta_0(r) + psi(r)) / (r + l(r))` for the SR-r head start `r`.
    pub fn lower_bound(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::domain("r", format!("head start must be nonnegative, got {r}")));
        }
        let s = Start::Point(r);
        Ok((r * self.delay0(s)? + self.iadd(s)?) / (r + self.arl(s)?))
    }

    /// Left Perron vector of the pre-change kernel, by inverse iteration on the
    /// transposed factorization.
    pub fn quasi_stationary(&self) -> Result<&QuasiStationary> {
        cached(&self.qsd, || {
            let op = self.pre_operator()?;
            let n = self.grid.len();
            let mut w = vec![1.0 / n as f64; n];
            let mut iterations = 0;
            let mut converged = false;
            while iterations < 1000 {
                iterations += 1;
                let mut next = op.solve_left(&w);
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
                let s: f64 = next.iter().sum();
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::Numerical("quasi-stationary iteration collapsed".into()));
                }
                next.iter_mut().for_each(|v| *v /= s);
                let change: f64 = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum();
                w = next;
                if change < 1e-13 {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Numerical("quasi-stationary iteration did not converge".into()));
            }
            let one_minus = dot(&w, self.pre.survival());
            let lambda = 1.0 - one_minus;
            // Isolation check: the Rayleigh quotient of w must agree with the
            // Perron root found when the operator was factored.
            let direct = 1.0 - op.spectral_radius();
            if (direct - one_minus).abs() > 1e-6 * one_minus {
                return Err(Error::Numerical(format!(
                    "dominant eigenvalue is not isolated: 1 - lambda = {one_minus:e} vs {direct:e}"
                )));
            }
            let nodes = self.grid.nodes();
            let mean = w.iter().zip(&nodes).map(|(m, x)| m * x).sum();
            let density = GridFunction::new(self.grid, w.iter().zip(self.grid.weights()).map(|(m, h)| m / h).collect())?;
            Ok(QuasiStationary { density, lambda, one_minus_lambda: one_minus, mean, arl: 1.0 / one_minus, iterations })
        })
    }

    /// The SRP procedure at this threshold, ready to simulate or run online.
    pub fn srp_kind(&self) -> Result<ProcedureKind> {
        Ok(ProcedureKind::Srp { qsd: self.quasi_stationary()?.density.clone() })
    }

    /// `(ARL, ADD)` of the SRP procedure at this threshold.
    pub fn srp_oc(&self) -> Result<(f64, f64)> {
        Ok((self.quasi_stationary()?.arl, self.delay0(Start::QuasiStationary)?))
    }

    // Runs `delta_nu`, `rho_nu` forward, evaluating them at the start.
    // Stops at `steps` or, when `stop_on_plateau`, once ADD_nu stabilizes.
    fn iterate(&self, start: Start, steps: usize, stop_on_plateau: bool) -> Result<AddCurve> {
        let n = self.grid.len();
        let probe: Vec<f64> = match start {
            Start::Point(x) => self.pre_row(x),
            Start::QuasiStationary => self.quasi_stationary()?.masses(),
        };
        let mut cols = Vec::with_capacity(2 * n);
        cols.extend_from_slice(self.delta0_nodes()?);
        cols.extend(std::iter::repeat_n(1.0, n));
        let mut values = vec![self.delay0(start)?];
        let mut log_survival = vec![0.0];
        let mut log_scale = 0.0;
        let mut stable = 0;
        let mut plateau = false;
        for _nu in 1..=steps {
            let (d, r) = cols.split_at(n);
            let (dx, rx) = (dot(&probe, d), dot(&probe, r));
            if !(rx > 0.0) {
                return Err(Error::Numerical("survival probability underflowed in the delay recursion".into()));
            }
            let add = dx / rx;
            let prev = *values.last().expect("nonempty");
            values.push(add);
            log_survival.push(rx.ln() + log_scale);
            if (add - prev).abs() < self.config.plateau_tol * add.abs() {
                stable += 1;
                if stable >= self.config.plateau_run {
                    plateau = true;
                    if stop_on_plateau {
                        break;
                    }
                }
            } else {
                stable = 0;
            }
            cols = self.pre.apply_cols(&cols, 2);
            let s = cols[n..].iter().fold(0.0f64, |m, v| m.max(*v));
            if !(s > 0.0) {
                return Err(Error::Numerical("survival probability underflowed in the delay recursion".into()));
            }
            cols.iter_mut().for_each(|v| *v /= s);
            log_scale += s.ln();
        }
        let add_inf = *values.last().expect("nonempty");
        Ok(AddCurve { values, log_survival, plateau_reached: plateau, add_inf })
    }

    /// `ADD_nu` for `nu = 0, 1, ...` until the plateau rule fires or `max_nu`.
    pub fn add_curve(&self, start: Start) -> Result<AddCurve> {
        self.iterate(start, self.config.max_nu, true)
    }

    /// `ADD_nu` for exactly `nu = 0..=nu_max`.
    pub fn add_curve_to(&self, start: Start, nu_max: usize) -> Result<AddCurve> {
        self.iterate(start, nu_max, false)
    }

    /// `(J_P, argmax nu, ADD_inf, plateau reached)`.
    ///
    /// `ADD_inf` is the delay from the quasi-stationary start, the exact limit
    /// of `ADD_nu`; slowly mixing kernels can satisfy the plateau rule while the
    /// curve is still drifting toward it.
    pub fn supremum_add(&self, start: Start) -> Result<(f64, usize, f64, bool)> {
        let curve = self.add_curve(start)?;
        let (jp, arg) = curve.supremum();
        let add_inf = self.delay0(Start::QuasiStationary)?;
        Ok((jp.max(add_inf), arg, add_inf, curve.plateau_reached))
    }

    /// `sup_k P_inf(k < T <= k + m | T > k)` over `k = 0..=k_max`.
    pub fn local_pfa(&self, start: Start, m: usize, k_max: usize) -> Result<LocalPfa> {
        if m == 0 {
            return Err(Error::domain("m", "window must be at least 1"));
        }
        let curve = self.iterate(start, k_max + m, false)?;
        let ls = &curve.log_survival;
        let profile: Vec<f64> = (0..=k_max).map(|k| -(ls[k + m] - ls[k]).exp_m1()).collect();
        let (supremum, argmax) =
            profile.iter().enumerate().fold((f64::NEG_INFINITY, 0), |b, (k, &v)| if v > b.0 { (v, k) } else { b });
        let tail = &profile[profile.len().saturating_sub(3)..];
        let last = *tail.last().expect("nonempty");
        let plateau_reached = tail.iter().all(|v| (v - last).abs() <= 1e-6 * last.abs().max(1e-300));
        Ok(LocalPfa { window: m, profile, supremum, argmax, plateau_reached })
    }

    /// PFA and ADD under the prior `Pr(nu < 0) = pi`, `Pr(nu = k) = (1-pi) p (1-p)^k`.
    pub fn bayes_oc(&self, pi: f64, p: f64, start: Start) -> Result<BayesOc> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain("p", format!("must lie in (0, 1), got {p}")));
        }
        if !(pi >= 0.0 && pi < 1.0) {
            return Err(Error::domain("pi", format!("must lie in [0, 1), got {pi}")));
        }
        let d = 1.0 - p;
        let op = FredholmOperator::new(self.pre.clone(), d)?;
        let n = self.grid.len();
        let chi_nodes = self.record(op.solve(&vec![1.0; n])?);
        let psi_nodes = self.record(op.solve(self.delta0_nodes()?)?);
        let delta0 = self.delay0(start)?;
        let (chi, psi) = match start {
            Start::Point(x) => {
                let row = self.pre_row(x);
                (1.0 + d * dot(&row, &chi_nodes), delta0 + d * dot(&row, &psi_nodes))
            }
            Start::QuasiStationary => {
                let w = self.quasi_stationary()?.masses();
                (dot(&w, &chi_nodes), dot(&w, &psi_nodes))
            }
        };
        let pfa = ((1.0 - pi) * (1.0 - p * chi)).max(0.0);
        let add = (pi * delta0 + (1.0 - pi) * p * psi) / (pi + (1.0 - pi) * p * chi);
        Ok(BayesOc { pi, p, pfa, add, chi, psi })
    }
}
