use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ChangePointModel;
use crate::numeric::brent;
use crate::procedures::ProcedureKind;

use super::oc::{OcConfig, OcSolver, Start};

/// Settings for threshold calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrateOptions {
    /// Stop once `|ARL - gamma| <= rel_tol * gamma`.
    pub rel_tol: f64,
    /// Overshoot constant used to centre the first bracket on `gamma * zeta`.
    pub zeta_hint: Option<f64>,
    pub max_expansions: usize,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        CalibrateOptions { rel_tol: 1e-7, zeta_hint: None, max_expansions: 60 }
    }
}

/// Outcome of a calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub gamma: f64,
    pub threshold: f64,
    /// ARL at `threshold`, from the start the calibration was run at.
    pub arl: f64,
    pub start: Start,
    pub evaluations: usize,
    pub bracket: (f64, f64),
}

/// A calibration together with the solver built at the final threshold.
#[derive(Debug)]
pub struct Calibrated {
    pub calibration: Calibration,
    pub solver: OcSolver,
}

struct ArlProbe<'a> {
    model: &'a ChangePointModel,
    xi_scale: f64,
    start: Start,
    config: OcConfig,
    gamma: f64,
    seen: HashMap<u64, f64>,
    best: Option<(f64, f64, OcSolver)>,
    evaluations: usize,
}

impl ArlProbe<'_> {
    // log(ARL / gamma) at A = exp(s): increasing in s and well scaled.
    fn eval(&mut self, s: f64) -> Result<f64> {
        if let Some(v) = self.seen.get(&s.to_bits()) {
            return Ok(*v);
        }
        let solver = OcSolver::new(self.model, s.exp(), self.xi_scale, self.config)?;
        let arl = solver.arl(self.start)?;
        self.evaluations += 1;
        let f = (arl / self.gamma).ln();
        self.seen.insert(s.to_bits(), f);
        if self.best.as_ref().is_none_or(|b| f.abs() < b.1.abs()) {
            self.best = Some((s, f, solver));
        }
        Ok(f)
    }
}

/// Finds `A` with `E_inf[T_A] = gamma` for the statistic with
/// `xi(v) = (1 + v) * xi_scale` started at `start`.
pub fn calibrate(
    model: &ChangePointModel,
    xi_scale: f64,
    start: Start,
    gamma: f64,
    config: OcConfig,
    opts: CalibrateOptions,
) -> Result<Calibrated> {
    if !(gamma.is_finite() && gamma > 1.0) {
        return Err(Error::domain("gamma", format!("target ARL must exceed 1, got {gamma}")));
    }
    if !(opts.rel_tol > 0.0) {
        return Err(Error::domain("rel_tol", "must be positive"));
    }
    let (mut lo, mut hi) = match opts.zeta_hint {
        Some(z) if z > 0.0 && z.is_finite() => ((0.5 * gamma * z).ln(), (4.0 * gamma * z).ln()),
        Some(z) => return Err(Error::domain("zeta_hint", format!("must be positive, got {z}"))),
        None => ((0.25 * gamma).ln(), gamma.ln()),
    };
    let mut probe = ArlProbe {
        model,
        xi_scale,
        start,
        config,
        gamma,
        seen: HashMap::new(),
        best: None,
        evaluations: 0,
    };
    let mut f_lo = probe.eval(lo)?;
    let mut f_hi = probe.eval(hi)?;
    let mut expansions = 0;
    while f_lo > 0.0 || f_hi < 0.0 {
        if expansions == opts.max_expansions {
            return Err(Error::Bracket { lo: lo.exp(), hi: hi.exp(), f_lo, f_hi });
        }
        expansions += 1;
        let width = hi - lo;
        if f_lo > 0.0 {
            (hi, f_hi) = (lo, f_lo);
            lo -= width;
            f_lo = probe.eval(lo)?;
        } else {
            (lo, f_lo) = (hi, f_hi);
            hi += width;
            f_hi = probe.eval(hi)?;
        }
    }
    // |log(ARL / gamma)| <= rel_tol implies the relative ARL error is at most rel_tol.
    let ftol = opts.rel_tol;
    brent(|s| probe.eval(s), lo, hi, 1e-12, ftol, 200)?;
    let (_, f, solver) = probe.best.take().expect("at least one evaluation");
    let arl = gamma * f.exp();
    if (arl - gamma).abs() > 10.0 * opts.rel_tol * gamma {
        return Err(Error::Numerical(format!("calibration stalled at ARL {arl} for target {gamma}")));
    }
    let calibration = Calibration {
        gamma,
        threshold: solver.threshold(),
        arl,
        start,
        evaluations: probe.evaluations,
        bracket: (lo.exp(), hi.exp()),
    };
    Ok(Calibrated { calibration, solver })
}

/// [`calibrate`] for a procedure kind, at the kind's own start.
///
/// SR-r is calibrated at `x = r`; SRP at its quasi-stationary start, re-solved
/// for every trial threshold.
pub fn calibrate_kind(
    model: &ChangePointModel,
    kind: &ProcedureKind,
    gamma: f64,
    config: OcConfig,
    opts: CalibrateOptions,
) -> Result<Calibrated> {
    kind.validate()?;
    calibrate(model, kind.xi_scale(), Start::for_kind(kind), gamma, config, opts)
}

/// SR-r head start equalizing `ADD_0` with `ADD_inf`, jointly with the
/// threshold giving `E_inf[T] = gamma` from that head start.
#[derive(Debug)]
pub struct EqualizedHeadStart {
    pub r: f64,
    pub calibration: Calibration,
    pub add0: f64,
    pub add_inf: f64,
    pub rounds: usize,
    pub solver: OcSolver,
}

/// Alternates between choosing `r` with `delta_0(r) = ADD_inf` at the current
/// threshold and recalibrating the threshold at `x = r`.
///
/// `ADD_inf` is the delay of the quasi-stationary start, which the SR-r
/// delay curve approaches for every head start.
pub fn equalizing_head_start(
    model: &ChangePointModel,
    gamma: f64,
    config: OcConfig,
    opts: CalibrateOptions,
) -> Result<EqualizedHeadStart> {
    let mut r = 0.0;
    let mut cal = calibrate(model, 1.0, Start::Point(r), gamma, config, opts)?;
    let mut rounds = 0;
    loop {
        rounds += 1;
        let solver = &cal.solver;
        let add_inf = solver.delay0(Start::QuasiStationary)?;
        let a = solver.threshold();
        let gap = |x: f64| -> Result<f64> { Ok(solver.delay0(Start::Point(x))? - add_inf) };
        // delta_0 decreases in the head start; no head start helps if SR already sits below.
        let new_r = if gap(0.0)? <= 0.0 {
            0.0
        } else if gap(a)? >= 0.0 {
            return Err(Error::Numerical("no head start below the threshold equalizes the delays".into()));
        } else {
            brent(gap, 0.0, a, 1e-9 * (1.0 + a), 0.0, 200)?
        };
        let moved = (new_r - r).abs() > 1e-6 * (1.0 + r);
        r = new_r;
        if moved {
            cal = calibrate(model, 1.0, Start::Point(r), gamma, config, opts)?;
        }
        if !moved || rounds >= 20 {
            let add0 = cal.solver.delay0(Start::Point(r))?;
            let add_inf = cal.solver.delay0(Start::QuasiStationary)?;
            if moved {
                return Err(Error::Numerical(format!("head start did not settle after {rounds} rounds (r = {r})")));
            }
            return Ok(EqualizedHeadStart { r, calibration: cal.calibration, add0, add_inf, rounds, solver: cal.solver });
        }
    }
}

/// Change in ARL and `J_P` when the grid is doubled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Richardson {
    pub grid_n: usize,
    pub arl: f64,
    pub arl_2n: f64,
    pub jp: f64,
    pub jp_2n: f64,
    /// `max(|ARL_2N / ARL_N - 1|, |J_P,2N / J_P,N - 1|)`.
    pub drift: f64,
    /// Extrapolated ARL assuming first-order convergence.
    pub arl_extrapolated: f64,
}

pub fn richardson(
    model: &ChangePointModel,
    xi_scale: f64,
    start: Start,
    threshold: f64,
    config: OcConfig,
) -> Result<Richardson> {
    let at = |n: usize| -> Result<(f64, f64)> {
        let s = OcSolver::new(model, threshold, xi_scale, config.with_grid(n))?;
        Ok((s.arl(start)?, s.supremum_add(start)?.0))
    };
    let (arl, jp) = at(config.grid_n)?;
    let (arl_2n, jp_2n) = at(2 * config.grid_n)?;
    let drift = ((arl_2n / arl) - 1.0).abs().max(((jp_2n / jp) - 1.0).abs());
    Ok(Richardson { grid_n: config.grid_n, arl, arl_2n, jp, jp_2n, drift, arl_extrapolated: 2.0 * arl_2n - arl })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_model, ModelParams};

    #[test]
    fn calibrated_threshold_hits_target_and_grows_with_gamma() {
        let m = make_model(ModelParams::Beta { delta: 1.0 }).unwrap();
        let cfg = OcConfig::default().with_grid(300);
        let mut last = 0.0;
        for gamma in [20.0, 50.0, 100.0] {
            let c = calibrate(&m, 1.0, Start::Point(2.0), gamma, cfg, CalibrateOptions::default()).unwrap();
            assert!((c.calibration.arl - gamma).abs() <= 1e-6 * gamma);
            assert!((c.solver.arl(Start::Point(2.0)).unwrap() - gamma).abs() <= 1e-6 * gamma);
            assert!(c.calibration.threshold > last);
            last = c.calibration.threshold;
        }
        // A close to zeta * (gamma + r) with zeta near 0.425.
        assert!((last / (0.425 * 102.0) - 1.0).abs() < 0.03, "{last}");
    }

    #[test]
    fn zeta_hint_and_expansion_agree() {
        let m = make_model(ModelParams::Beta { delta: 1.0 }).unwrap();
        let cfg = OcConfig::default().with_grid(200);
        let a = calibrate(&m, 1.0, Start::Point(0.0), 60.0, cfg, CalibrateOptions::default()).unwrap();
        // A deliberately poor hint forces bracket expansion.
        let opts = CalibrateOptions { zeta_hint: Some(0.01), ..Default::default() };
        let b = calibrate(&m, 1.0, Start::Point(0.0), 60.0, cfg, opts).unwrap();
        assert!((a.calibration.threshold / b.calibration.threshold - 1.0).abs() < 1e-5);
        assert!(calibrate(&m, 1.0, Start::Point(0.0), 1.0, cfg, opts).unwrap_err().is_domain());
    }

    #[test]
    fn equalized_head_start_balances_delays() {
        let m = make_model(ModelParams::Beta { delta: 1.0 }).unwrap();
        let cfg = OcConfig::default().with_grid(400);
        let e = equalizing_head_start(&m, 100.0, cfg, CalibrateOptions::default()).unwrap();
        assert!((e.add0 / e.add_inf - 1.0).abs() < 1e-5);
        assert!(e.r > 0.5 && e.r < 5.0, "r = {}", e.r);
        assert!((e.calibration.arl - 100.0).abs() < 1e-4);
    }
}
