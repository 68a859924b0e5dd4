//! One function per subcommand.

use std::fs::File;
use std::io::{BufRead, BufReader};

use qcd_core::asymptotics::{
    approx_oc, approx_threshold, asymptotic_constants, head_start_beta, ApproxOc, AsymptoticConstants,
    ConstantsOptions, OvershootOptions,
};
use qcd_core::exactsolve::{
    u2b_calibrate, u2b_gamma_grid, u2b_performance_curves, u2b_srp_threshold, U2bCurvePoint, U2bExact,
};
use qcd_core::montecarlo::{mc_estimate, McEstimate, Metric};
use qcd_core::numeric::brent;
use qcd_core::ocsolve::{
    calibrate, calibrate_kind, equalizing_head_start, CalibrateOptions, Calibration, OcConfig, OcReport, OcSolver,
    ReportOptions, Start,
};
use qcd_core::procedures::{default_multicyclic_change, run_detection};
use qcd_core::rng::stream_rng;
use qcd_core::{make_model, ChangePointModel, ModelParams, ProcedureKind, ProcedureSpec};
use serde::Serialize;

use crate::output::{csv_document, emit, json_document, Cell, Meta};
use crate::settings::{ModelName, ProcName, Settings, Target};
use crate::stream::ObservationStream;
use crate::{resolve, Cli, CliError, Command, Study, Suite};

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Calibrate(a) => calibrate_cmd(cli, &resolve(&a.settings, config)?),
        Command::Oc(a) => oc_cmd(cli, a, &resolve(&a.settings, config)?),
        Command::Detect(a) => detect_cmd(cli, a, &resolve(&a.settings, config)?),
        Command::Constants(a) => constants_cmd(cli, a, &resolve(&a.settings, config)?),
        Command::CaseStudy { study } => match study {
            Study::Beta(a) => beta_study(cli, a, &resolve(&a.settings, config)?),
            Study::U2b(a) => u2b_study(cli, a),
            Study::Exp(a) => exp_study(cli, a, &resolve(&a.settings, config)?),
        },
        Command::Validate(a) => validate_cmd(cli, a, &resolve(&a.settings, config)?),
    }
}

fn seed(s: &Settings) -> u64 {
    s.seed.unwrap_or(0)
}

fn meta(command: &str, s: &Settings, grid: Option<usize>) -> Meta {
    Meta::new(command, seed(s), grid, s)
}

fn model_of(s: &Settings) -> Result<ChangePointModel, CliError> {
    Ok(make_model(s.model()?)?)
}

/// A head start chosen to equalize `ADD_0` and `ADD_inf`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Equalized {
    pub r: f64,
    pub add0: f64,
    pub add_inf: f64,
    pub rounds: usize,
}

/// Procedure fixed to a threshold, with the solver built there.
struct Resolved {
    kind: ProcedureKind,
    threshold: f64,
    calibration: Option<Calibration>,
    equalized: Option<Equalized>,
    solver: Option<OcSolver>,
}

fn resolve_procedure(
    model: &ChangePointModel,
    s: &Settings,
    config: OcConfig,
    need_solver: bool,
) -> Result<Resolved, CliError> {
    let opts = CalibrateOptions::default();
    let proc = s.procedure()?;
    match (s.target()?, proc) {
        (Target::Gamma(gamma), ProcName::Srp) => {
            let c = calibrate(model, 1.0, Start::QuasiStationary, gamma, config, opts)?;
            let kind = c.solver.srp_kind()?;
            Ok(Resolved { kind, threshold: c.calibration.threshold, calibration: Some(c.calibration), equalized: None, solver: Some(c.solver) })
        }
        (Target::Gamma(gamma), ProcName::SrR) if s.r.is_none() => {
            let e = equalizing_head_start(model, gamma, config, opts)?;
            Ok(Resolved {
                kind: ProcedureKind::SrR { r: e.r },
                threshold: e.calibration.threshold,
                calibration: Some(e.calibration),
                equalized: Some(Equalized { r: e.r, add0: e.add0, add_inf: e.add_inf, rounds: e.rounds }),
                solver: Some(e.solver),
            })
        }
        (Target::Gamma(gamma), _) => {
            let kind = s.fixed_kind(None)?;
            let c = calibrate_kind(model, &kind, gamma, config, opts)?;
            Ok(Resolved { kind, threshold: c.calibration.threshold, calibration: Some(c.calibration), equalized: None, solver: Some(c.solver) })
        }
        (Target::Threshold(a), ProcName::Srp) => {
            let solver = OcSolver::new(model, a, 1.0, config)?;
            Ok(Resolved { kind: solver.srp_kind()?, threshold: a, calibration: None, equalized: None, solver: Some(solver) })
        }
        (Target::Threshold(a), _) => {
            let kind = s.fixed_kind(None)?;
            let solver = if need_solver { Some(OcSolver::for_kind(model, &kind, a, config)?) } else { None };
            Ok(Resolved { kind, threshold: a, calibration: None, equalized: None, solver })
        }
    }
}

#[derive(Serialize)]
struct CalibrateOutput {
    procedure: &'static str,
    r: Option<f64>,
    calibration: Calibration,
    equalized: Option<Equalized>,
}

fn head_start(kind: &ProcedureKind) -> Option<f64> {
    match kind {
        ProcedureKind::SrR { r } => Some(*r),
        _ => None,
    }
}

fn calibrate_cmd(cli: &Cli, s: &Settings) -> Result<(), CliError> {
    if s.threshold.is_some() {
        return Err(CliError::Domain("A: calibrate takes --gamma, not --A".into()));
    }
    let model = model_of(s)?;
    let config = s.oc_config();
    let res = resolve_procedure(&model, s, config, true)?;
    let out = CalibrateOutput {
        procedure: res.kind.name(),
        r: head_start(&res.kind),
        calibration: res.calibration.expect("gamma target calibrates"),
        equalized: res.equalized,
    };
    emit(&json_document(&meta("calibrate", s, Some(config.grid_n)), out)?, cli.out.as_ref())
}

/// Closed-form operating characteristics of the uniform-to-beta model.
#[derive(Debug, Clone, Serialize)]
pub struct ExactReport {
    pub model: String,
    pub procedure: String,
    pub threshold: f64,
    pub r: Option<f64>,
    pub arl: f64,
    pub add0: f64,
    pub add_inf: f64,
    pub j_p: f64,
    pub j_st: f64,
    pub j_b: Option<f64>,
    /// `P_inf(k < T <= k + m | T > k)` for `k = 0..=k_max`.
    pub local_pfa: Option<Vec<f64>>,
}

fn exact_report(s: &Settings, window: Option<usize>, k_max: usize) -> Result<ExactReport, CliError> {
    if s.model()? != ModelParams::U2b {
        return Err(CliError::Domain("model: --exact needs --model u2b".into()));
    }
    let proc = s.procedure()?;
    let (a, r) = match (proc, s.target()?) {
        (ProcName::Srp, Target::Gamma(g)) => (u2b_srp_threshold(g)?, None),
        (ProcName::Srp, Target::Threshold(a)) => (a, None),
        (ProcName::SrR, Target::Gamma(g)) => match s.r {
            None => {
                let (a, r) = u2b_calibrate(g)?;
                (a, Some(r))
            }
            Some(r) => {
                let f = |a: f64| -> qcd_core::Result<f64> { Ok(U2bExact::new(a)?.arl(r) - g) };
                (brent(f, 1e-12, 2.0, 1e-15, 1e-13, 200)?, Some(r))
            }
        },
        (ProcName::SrR, Target::Threshold(a)) => (a, Some(s.r.unwrap_or((1.0 + a).sqrt() - 1.0))),
        (ProcName::Sr, Target::Threshold(a)) => (a, Some(0.0)),
        _ => return Err(CliError::Domain("proc: --exact supports sr-r, srp, and sr at a given --A".into())),
    };
    let e = U2bExact::new(a)?;
    let local_pfa = |x: f64| -> Result<Option<Vec<f64>>, CliError> {
        window.map(|m| (0..=k_max).map(|k| e.local_pfa(x, k, m).map_err(CliError::from)).collect()).transpose()
    };
    Ok(match r {
        Some(r) => ExactReport {
            model: "u2b".into(),
            procedure: if r == 0.0 && proc == ProcName::Sr { "sr" } else { "sr-r" }.into(),
            threshold: a,
            r: Some(r),
            arl: e.arl(r),
            add0: e.add0(r),
            add_inf: e.add_inf(),
            j_p: e.jp(r),
            j_st: e.stadd(r),
            j_b: Some(e.lower_bound(r)),
            local_pfa: local_pfa(r)?,
        },
        None => ExactReport {
            model: "u2b".into(),
            procedure: "srp".into(),
            threshold: a,
            r: None,
            arl: e.srp_arl(),
            add0: e.srp_add(),
            add_inf: e.srp_add(),
            j_p: e.srp_add(),
            j_st: e.srp_stadd()?,
            j_b: None,
            // Started from the uniform law, every step is a fresh geometric trial.
            local_pfa: window.map(|m| vec![1.0 - e.lambda().powi(m as i32); k_max + 1]),
        },
    })
}

#[derive(Serialize)]
struct OcOutput {
    report: OcReport,
    calibration: Option<Calibration>,
    equalized: Option<Equalized>,
}

fn oc_cmd(cli: &Cli, a: &crate::OcArgs, s: &Settings) -> Result<(), CliError> {
    if a.pfa_window == Some(0) {
        return Err(CliError::Domain("pfa-window: must be at least 1".into()));
    }
    let config = s.oc_config();
    if a.exact {
        let rep = exact_report(s, a.pfa_window, a.pfa_k_max)?;
        let m = meta("oc", s, None);
        if let Some(p) = &a.curve_csv {
            let rows: Vec<Vec<Cell>> = (0..=20u64)
                .map(|nu| vec![Cell::Int(nu), Cell::Real(if nu == 0 { rep.add0 } else { rep.add_inf })])
                .collect();
            emit(&csv_document(&m, &["nu", "add"], &rows)?, Some(p))?;
        }
        if let (Some(p), Some(profile)) = (&a.pfa_csv, &rep.local_pfa) {
            emit(&pfa_csv(&m, profile)?, Some(p))?;
        }
        return emit(&json_document(&m, &rep)?, cli.out.as_ref());
    }
    let model = model_of(s)?;
    let res = resolve_procedure(&model, s, config, true)?;
    let solver = res.solver.as_ref().expect("solver requested");
    let opts = ReportOptions { prior: a.prior, local_pfa: a.pfa_window.map(|m| (m, a.pfa_k_max)), richardson: a.richardson };
    let report = OcReport::from_solver(solver, &res.kind, opts)?;
    let m = meta("oc", s, Some(config.grid_n));
    if let Some(p) = &a.curve_csv {
        let rows: Vec<Vec<Cell>> =
            report.add_curve.iter().enumerate().map(|(nu, v)| vec![Cell::Int(nu as u64), Cell::Real(*v)]).collect();
        emit(&csv_document(&m, &["nu", "add"], &rows)?, Some(p))?;
    }
    if let (Some(p), Some(lp)) = (&a.pfa_csv, &report.local_pfa) {
        emit(&pfa_csv(&m, &lp.profile)?, Some(p))?;
    }
    let out = OcOutput { report, calibration: res.calibration, equalized: res.equalized };
    emit(&json_document(&m, out)?, cli.out.as_ref())
}

fn pfa_csv(m: &Meta, profile: &[f64]) -> Result<String, CliError> {
    let rows: Vec<Vec<Cell>> = profile.iter().enumerate().map(|(k, v)| vec![Cell::Int(k as u64), Cell::Real(*v)]).collect();
    csv_document(m, &["k", "pfa"], &rows)
}

#[derive(Serialize)]
struct DetectOutput {
    procedure: &'static str,
    threshold: f64,
    start: f64,
    stopping_time: Option<u64>,
    alarm_raised: bool,
    censored: bool,
    false_alarm: Option<bool>,
    observations_read: u64,
    final_statistic: Option<f64>,
}

/// Runs the procedure over `reader`; never pulls an observation past the alarm.
pub fn detect_stream<R: BufRead>(
    spec: &ProcedureSpec,
    model: &ChangePointModel,
    start: f64,
    reader: R,
    horizon: Option<u64>,
    change_point: Option<u64>,
) -> Result<(qcd_core::procedures::DetectionResult, u64), CliError> {
    let mut stream = ObservationStream::new(reader);
    let result = run_detection(spec, &mut stream, model, horizon.unwrap_or(u64::MAX), start, change_point)?;
    let pulled = stream.finish()?;
    Ok((result, pulled))
}

fn detect_cmd(cli: &Cli, a: &crate::DetectArgs, s: &Settings) -> Result<(), CliError> {
    let model = model_of(s)?;
    let config = s.oc_config();
    let res = resolve_procedure(&model, s, config, false)?;
    let spec = ProcedureSpec::new(res.kind.clone(), res.threshold)?;
    let start = spec.starter()?.draw(&mut stream_rng(seed(s), 0));
    let (result, _) = match &a.input {
        Some(p) => detect_stream(&spec, &model, start, BufReader::new(File::open(p).map_err(|e| CliError::io(p, e))?), a.horizon, a.change_point)?,
        None => detect_stream(&spec, &model, start, std::io::stdin().lock(), a.horizon, a.change_point)?,
    };
    let grid = matches!(res.kind, ProcedureKind::Srp { .. }).then_some(config.grid_n);
    let m = meta("detect", s, grid);
    if let Some(p) = &a.emit_trajectory {
        let rows: Vec<Vec<Cell>> =
            result.trajectory.iter().enumerate().map(|(i, v)| vec![Cell::Int(i as u64 + 1), Cell::Real(*v)]).collect();
        emit(&csv_document(&m, &["n", "statistic"], &rows)?, Some(p))?;
    }
    let out = DetectOutput {
        procedure: res.kind.name(),
        threshold: res.threshold,
        start,
        stopping_time: result.stopping_time,
        alarm_raised: result.alarm_raised,
        censored: result.censored,
        false_alarm: result.false_alarm,
        observations_read: result.observations_read,
        final_statistic: result.trajectory.last().copied(),
    };
    emit(&json_document(&m, out)?, cli.out.as_ref())
}

#[derive(Serialize)]
struct ConstantsOutput {
    constants: AsymptoticConstants,
    approximation: Option<ApproxOc>,
}

fn constants_cmd(cli: &Cli, a: &crate::ConstantsArgs, s: &Settings) -> Result<(), CliError> {
    let model = model_of(s)?;
    let opts = ConstantsOptions {
        overshoot: OvershootOptions { k_max: a.k_max, n_paths: a.paths, seed: seed(s), ..Default::default() },
        perpetuity_paths: a.perpetuity_paths,
    };
    let c = asymptotic_constants(&model, opts)?;
    let r = s.r.unwrap_or(c.r_star.value);
    let approximation = match (s.gamma, s.threshold) {
        (Some(g), None) => Some(approx_oc(&c, approx_threshold(&c, g, r)?, r, None)?),
        (None, Some(th)) => Some(approx_oc(&c, th, r, None)?),
        (None, None) => None,
        _ => return Err(CliError::Domain("gamma/A: supply at most one of --gamma and --A".into())),
    };
    emit(&json_document(&meta("constants", s, None), ConstantsOutput { constants: c, approximation })?, cli.out.as_ref())
}

#[derive(Serialize)]
struct BetaStudy {
    delta: f64,
    gamma: f64,
    r: f64,
    r_star: f64,
    srr: OcReport,
    srp: OcReport,
    /// Whether `ADD_nu(SR-r) <= ADD(SRP)` for every `nu <= nu_max`.
    srr_curve_below_srp: bool,
}

fn beta_study(cli: &Cli, a: &crate::BetaStudyArgs, s: &Settings) -> Result<(), CliError> {
    let delta = s.delta.unwrap_or(1.0);
    let gamma = s.gamma.unwrap_or(100.0);
    let model = make_model(ModelParams::Beta { delta })?;
    let config = s.oc_config();
    let opts = CalibrateOptions::default();
    let r_star = head_start_beta(delta)?;
    let r = s.r.unwrap_or(r_star.round());
    let kind = ProcedureKind::SrR { r };
    let srr_solver = match a.threshold_srr {
        Some(th) => OcSolver::for_kind(&model, &kind, th, config)?,
        None => calibrate_kind(&model, &kind, gamma, config, opts)?.solver,
    };
    let srp_solver = match a.threshold_srp {
        Some(th) => OcSolver::new(&model, th, 1.0, config)?,
        None => calibrate(&model, 1.0, Start::QuasiStationary, gamma, config, opts)?.solver,
    };
    let srr = OcReport::from_solver(&srr_solver, &kind, ReportOptions::default())?;
    let srp = OcReport::from_solver(&srp_solver, &srp_solver.srp_kind()?, ReportOptions::default())?;
    let srr_curve = srr_solver.add_curve_to(Start::Point(r), a.nu_max)?.values;
    let srp_curve = srp_solver.add_curve_to(Start::QuasiStationary, a.nu_max)?.values;
    // Small slack for the SRP curve's own discretization ripple.
    let below = srr_curve.iter().all(|v| *v <= srp.add_inf * (1.0 + 1e-9));
    let mut st = s.clone();
    st.delta = Some(delta);
    st.gamma = Some(gamma);
    st.r = Some(r);
    let m = meta("case-study beta", &st, Some(config.grid_n));
    if let Some(p) = &a.curve_csv {
        let rows: Vec<Vec<Cell>> = (0..=a.nu_max)
            .map(|nu| vec![Cell::Int(nu as u64), Cell::Real(srr_curve[nu]), Cell::Real(srp_curve[nu])])
            .collect();
        emit(&csv_document(&m, &["nu", "add_srr", "add_srp"], &rows)?, Some(p))?;
    }
    let out = BetaStudy { delta, gamma, r, r_star, srr, srp, srr_curve_below_srp: below };
    emit(&json_document(&m, out)?, cli.out.as_ref())
}

#[derive(Serialize)]
struct U2bStudy {
    points: Vec<U2bCurvePoint>,
    srp_above_srr_everywhere: bool,
    max_relative_gap_jp_jb: f64,
}

fn u2b_study(cli: &Cli, a: &crate::U2bStudyArgs) -> Result<(), CliError> {
    let grid = u2b_gamma_grid(a.points, a.gamma_min, a.gamma_max)?;
    let points = u2b_performance_curves(&grid)?;
    let m = Meta::new(
        "case-study u2b",
        0,
        None,
        serde_json::json!({ "points": a.points, "gamma-min": a.gamma_min, "gamma-max": a.gamma_max }),
    );
    if let Some(p) = &a.csv {
        let rows: Vec<Vec<Cell>> = points
            .iter()
            .map(|q| vec![Cell::Real(q.gamma), Cell::Real(q.jp_srr), Cell::Real(q.jp_srp), Cell::Real(q.jb)])
            .collect();
        emit(&csv_document(&m, &["gamma", "jp_srr", "jp_srp", "jb"], &rows)?, Some(p))?;
    }
    let out = U2bStudy {
        srp_above_srr_everywhere: points.iter().all(|q| q.jp_srp > q.jp_srr),
        max_relative_gap_jp_jb: points.iter().map(|q| (q.jp_srr / q.jb - 1.0).abs()).fold(0.0, f64::max),
        points,
    };
    emit(&json_document(&m, out)?, cli.out.as_ref())
}

/// One target ARL of the exponential comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ExpRow {
    pub gamma: f64,
    pub threshold_sr: f64,
    pub threshold_srr: f64,
    pub r: f64,
    pub threshold_srp: f64,
    pub jb: f64,
    pub jp_sr: f64,
    pub jp_srr: f64,
    pub jp_srp: f64,
    pub jst_sr: f64,
    pub jst_srr: f64,
    pub jst_srp: f64,
    /// `J_B < J_P(SR-r) < J_P(SRP)`.
    pub jp_ordering: bool,
    /// `J_ST(SR) < J_ST(SR-r) <= J_ST(SRP)`.
    pub jst_ordering: bool,
    /// `|J_P(SRP) / J_ST(SRP) - 1|`.
    pub srp_equalizer_gap: f64,
}

pub fn exp_row(model: &ChangePointModel, gamma: f64, config: OcConfig) -> Result<ExpRow, CliError> {
    let opts = CalibrateOptions::default();
    let sr = calibrate_kind(model, &ProcedureKind::Sr, gamma, config, opts)?;
    let srr = equalizing_head_start(model, gamma, config, opts)?;
    let srp = calibrate(model, 1.0, Start::QuasiStationary, gamma, config, opts)?;
    let r = srr.r;
    let jp = |s: &OcSolver, at: Start| -> Result<f64, CliError> { Ok(s.supremum_add(at)?.0) };
    let row = ExpRow {
        gamma,
        threshold_sr: sr.calibration.threshold,
        threshold_srr: srr.calibration.threshold,
        r,
        threshold_srp: srp.calibration.threshold,
        jb: srr.solver.lower_bound(r)?,
        jp_sr: jp(&sr.solver, Start::Point(0.0))?,
        jp_srr: jp(&srr.solver, Start::Point(r))?,
        jp_srp: jp(&srp.solver, Start::QuasiStationary)?,
        jst_sr: sr.solver.stadd(Start::Point(0.0))?,
        jst_srr: srr.solver.stadd(Start::Point(r))?,
        jst_srp: srp.solver.stadd(Start::QuasiStationary)?,
        jp_ordering: false,
        jst_ordering: false,
        srp_equalizer_gap: 0.0,
    };
    Ok(ExpRow {
        jp_ordering: row.jb < row.jp_srr && row.jp_srr < row.jp_srp,
        jst_ordering: row.jst_sr < row.jst_srr && row.jst_srr <= row.jst_srp,
        srp_equalizer_gap: (row.jp_srp / row.jst_srp - 1.0).abs(),
        ..row
    })
}

fn exp_study(cli: &Cli, a: &crate::ExpStudyArgs, s: &Settings) -> Result<(), CliError> {
    let theta = s.theta.unwrap_or(0.1);
    let model = make_model(ModelParams::ExpShift { theta })?;
    let config = s.oc_config();
    let rows = a.gammas.iter().map(|&g| exp_row(&model, g, config)).collect::<Result<Vec<_>, _>>()?;
    let mut st = s.clone();
    st.model = Some(ModelName::ExpShift);
    st.theta = Some(theta);
    let m = meta("case-study exp", &st, Some(config.grid_n));
    if let Some(p) = &a.csv {
        let cols = ["gamma", "r", "jb", "jp_sr", "jp_srr", "jp_srp", "jst_sr", "jst_srr", "jst_srp"];
        let cells: Vec<Vec<Cell>> = rows
            .iter()
            .map(|q| {
                [q.gamma, q.r, q.jb, q.jp_sr, q.jp_srr, q.jp_srp, q.jst_sr, q.jst_srr, q.jst_srp]
                    .into_iter()
                    .map(Cell::Real)
                    .collect()
            })
            .collect();
        emit(&csv_document(&m, &cols, &cells)?, Some(p))?;
    }
    emit(&json_document(&m, serde_json::json!({ "theta": theta, "rows": rows }))?, cli.out.as_ref())
}

/// One comparison in a validation suite.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub solver: f64,
    pub reference: f64,
    /// Monte Carlo standard error, when the reference is simulated.
    pub std_error: Option<f64>,
    pub tolerance: String,
    pub passed: bool,
}

fn mc_check(name: &str, solver: f64, est: &McEstimate) -> Check {
    Check {
        name: name.into(),
        solver,
        reference: est.value,
        std_error: Some(est.std_error),
        tolerance: "3 standard errors".into(),
        passed: est.brackets(solver, 3.0),
    }
}

fn rel_check(name: &str, solver: f64, reference: f64, tol: f64) -> Check {
    Check {
        name: name.into(),
        solver,
        reference,
        std_error: None,
        tolerance: format!("relative {tol:e}"),
        passed: (solver / reference - 1.0).abs() <= tol,
    }
}

/// Solver against simulation on the beta model (delta = 1, SR-r with r = 2, A = 43).
pub fn mc_suite(config: OcConfig, reps: usize, seed: u64) -> Result<Vec<Check>, CliError> {
    let model = make_model(ModelParams::Beta { delta: 1.0 })?;
    let r = 2.0;
    let kind = ProcedureKind::SrR { r };
    let spec = ProcedureSpec::new(kind.clone(), 43.0)?;
    let solver = OcSolver::for_kind(&model, &kind, 43.0, config)?;
    let at = Start::Point(r);
    let arl = solver.arl(at)?;
    let (pi, p) = (0.0, 0.01);
    let bayes = solver.bayes_oc(pi, p, at)?;
    let (k, m) = (5u64, 10u64);
    let lp = solver.local_pfa(at, m as usize, k as usize)?;
    let est = |metric: Metric, i: u64| mc_estimate(metric, &spec, &model, reps, seed.wrapping_add(i));
    Ok(vec![
        mc_check("arl", arl, &est(Metric::Arl, 0)?),
        mc_check("add(0)", solver.delay0(at)?, &est(Metric::Add { nu: 0 }, 1)?),
        mc_check("add(10)", solver.add_curve_to(at, 10)?.values[10], &est(Metric::Add { nu: 10 }, 2)?),
        mc_check("stadd", solver.stadd(at)?, &est(Metric::Stadd { nu: default_multicyclic_change(arl) }, 3)?),
        mc_check("pfa_bayes", bayes.pfa, &est(Metric::BayesPfa { pi, p }, 4)?),
        mc_check("add_bayes", bayes.add, &est(Metric::BayesAdd { pi, p }, 5)?),
        mc_check("local_pfa(5,10)", lp.profile[k as usize], &est(Metric::LocalPfa { k, m }, 6)?),
    ])
}

/// Solver against the uniform-to-beta closed forms.
pub fn u2b_suite(config: OcConfig) -> Result<Vec<Check>, CliError> {
    let model = make_model(ModelParams::U2b)?;
    let mut checks = Vec::new();
    for gamma in [1.2, 1.5, 1.8, 2.1] {
        let (a, r) = u2b_calibrate(gamma)?;
        let e = U2bExact::new(a)?;
        let s = OcSolver::new(&model, a, 1.0, config)?;
        let at = Start::Point(r);
        checks.push(rel_check(&format!("arl(gamma={gamma})"), s.arl(at)?, e.arl(r), 1e-4));
        checks.push(rel_check(&format!("jp(gamma={gamma})"), s.supremum_add(at)?.0, e.jp(r), 1e-4));
        let lp = s.local_pfa(at, 2, 3)?;
        for (k, v) in lp.profile.iter().enumerate() {
            checks.push(rel_check(&format!("local_pfa(gamma={gamma},k={k},m=2)"), *v, e.local_pfa(r, k, 2)?, 1e-4));
        }
        let b = u2b_srp_threshold(gamma)?;
        let srp = OcSolver::new(&model, b, 1.0, config)?;
        checks.push(rel_check(&format!("srp_arl(gamma={gamma})"), srp.quasi_stationary()?.arl, gamma, 1e-4));
    }
    Ok(checks)
}

#[derive(Serialize)]
struct ValidateOutput {
    suite: Suite,
    passed: bool,
    checks: Vec<Check>,
}

fn validate_cmd(cli: &Cli, a: &crate::ValidateArgs, s: &Settings) -> Result<(), CliError> {
    let config = s.oc_config();
    let mut checks = Vec::new();
    if matches!(a.suite, Suite::Mc | Suite::All) {
        checks.extend(mc_suite(config, a.reps, seed(s))?);
    }
    if matches!(a.suite, Suite::U2b | Suite::All) {
        checks.extend(u2b_suite(config)?);
    }
    let passed = checks.iter().all(|c| c.passed);
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    let out = ValidateOutput { suite: a.suite, passed, checks };
    emit(&json_document(&meta("validate", s, Some(config.grid_n)), out)?, cli.out.as_ref())?;
    if passed {
        Ok(())
    } else {
        Err(CliError::ValidationFailed(format!("validation failed: {}", failed.join(", "))))
    }
}

