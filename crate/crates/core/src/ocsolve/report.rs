use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::ChangePointModel;
use crate::procedures::ProcedureKind;

use super::calibrate::{richardson, Richardson};
use super::oc::{BayesOc, LocalPfa, OcConfig, OcSolver, Start};

/// What to compute beyond the always-present ARL and delay figures.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    /// Geometric prior `(pi, p)` for the Bayesian PFA and ADD.
    pub prior: Option<(f64, f64)>,
    /// Local PFA window `m` and the last `k` examined.
    pub local_pfa: Option<(usize, usize)>,
    /// Run the grid-doubling check.
    pub richardson: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub grid_n: usize,
    pub config: OcConfig,
    pub max_residual: f64,
    pub plateau_reached: bool,
    /// Curve value where the plateau rule stopped.
    pub plateau_value: f64,
    pub richardson: Option<Richardson>,
}

/// Operating characteristics of one procedure at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcReport {
    pub model: String,
    pub procedure: String,
    pub threshold: f64,
    /// Start the figures refer to; SR-r is evaluated at `x = r`.
    pub start: Start,
    pub arl: f64,
    /// `ADD_nu` for `nu = 0, 1, ...`.
    pub add_curve: Vec<f64>,
    /// Limit of `ADD_nu`, the delay from the quasi-stationary start.
    pub add_inf: f64,
    pub j_p: f64,
    pub argmax_nu: usize,
    pub j_st: f64,
    /// Lower bound, defined for the SR family.
    pub j_b: Option<f64>,
    pub bayes: Option<BayesOc>,
    pub local_pfa: Option<LocalPfa>,
    /// Mean of the quasi-stationary distribution (SRP only).
    pub mu_q: Option<f64>,
    pub diagnostics: Diagnostics,
}

impl OcReport {
    /// Builds the report from an existing solver, which must match `kind`'s shape.
    pub fn from_solver(solver: &OcSolver, kind: &ProcedureKind, opts: ReportOptions) -> Result<Self> {
        kind.validate()?;
        let start = Start::for_kind(kind);
        let arl = solver.arl(start)?;
        let curve = solver.add_curve(start)?;
        let (sup, argmax_nu) = curve.supremum();
        let add_inf = solver.delay0(Start::QuasiStationary)?;
        let j_st = solver.stadd(start)?;
        let j_b = match kind {
            ProcedureKind::Sr => Some(solver.lower_bound(0.0)?),
            ProcedureKind::SrR { r } => Some(solver.lower_bound(*r)?),
            _ => None,
        };
        let mu_q = match kind {
            ProcedureKind::Srp { .. } => Some(solver.quasi_stationary()?.mean),
            _ => None,
        };
        let bayes = opts.prior.map(|(pi, p)| solver.bayes_oc(pi, p, start)).transpose()?;
        let local_pfa = opts.local_pfa.map(|(m, k)| solver.local_pfa(start, m, k)).transpose()?;
        let config = *solver.config();
        let richardson = if opts.richardson {
            Some(richardson(solver.model(), kind.xi_scale(), start, solver.threshold(), config)?)
        } else {
            None
        };
        Ok(OcReport {
            model: solver.model().name(),
            procedure: kind.name().to_string(),
            threshold: solver.threshold(),
            start,
            arl,
            add_inf,
            j_p: sup.max(add_inf),
            argmax_nu,
            j_st,
            j_b,
            bayes,
            local_pfa,
            mu_q,
            diagnostics: Diagnostics {
                grid_n: config.grid_n,
                config,
                max_residual: solver.max_residual(),
                plateau_reached: curve.plateau_reached,
                plateau_value: curve.add_inf,
                richardson,
            },
            add_curve: curve.values,
        })
    }

    pub fn compute(
        model: &ChangePointModel,
        kind: &ProcedureKind,
        threshold: f64,
        config: OcConfig,
        opts: ReportOptions,
    ) -> Result<Self> {
        let solver = OcSolver::for_kind(model, kind, threshold, config)?;
        Self::from_solver(&solver, kind, opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_model, ModelParams};

    #[test]
    fn report_invariants_hold() {
        let m = make_model(ModelParams::Beta { delta: 1.0 }).unwrap();
        let cfg = OcConfig::default().with_grid(300);
        let opts = ReportOptions { prior: Some((0.0, 0.01)), local_pfa: Some((5, 30)), richardson: false };
        let rep = OcReport::compute(&m, &ProcedureKind::SrR { r: 2.0 }, 43.0, cfg, opts).unwrap();
        assert!(rep.arl >= 43.0);
        assert!(rep.j_b.unwrap() <= rep.j_p);
        assert!(rep.j_p >= rep.j_st);
        assert!(rep.add_curve.iter().all(|v| *v > 0.0));
        assert!(rep.diagnostics.max_residual <= 1e-10);
        assert!(rep.bayes.unwrap().pfa > 0.0);
        assert_eq!(rep.local_pfa.as_ref().unwrap().profile.len(), 31);
        let json = serde_json::to_string(&rep).unwrap();
        let back: OcReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }
}
