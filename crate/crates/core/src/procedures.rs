//! Detection statistics of the form `V_n = xi(V_{n-1}) * Lambda_n` and their
//! stopping times `T = inf{n >= 1 : V_n >= A}`.
//!
//! Convention: the change point `nu` is the index of the last pre-change
//! observation, so `X_{nu+1}` is the first post-change observation and the
//! detection delay is `T - nu`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ChangePointModel, Regime};
use crate::ocsolve::grid::{GridFunction, GridSampler};
use crate::rng::stream_rng;

/// Which statistic to run.
#[derive(Debug, Clone, PartialEq)]
pub enum ProcedureKind {
    /// Shiryaev statistic for the zero-modified geometric prior with parameters `(p, pi)`.
    Shiryaev { p: f64, pi: f64 },
    /// Shiryaev-Roberts, started at zero.
    Sr,
    /// Shiryaev-Roberts started at the head start `r`.
    SrR { r: f64 },
    /// Shiryaev-Roberts-Pollak: the start is drawn from the quasi-stationary density.
    Srp { qsd: GridFunction },
}

impl ProcedureKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProcedureKind::Shiryaev { p, pi } => {
                if !(*p > 0.0 && *p < 1.0) {
                    return Err(Error::domain("p", format!("must lie in (0, 1), got {p}")));
                }
                if !(*pi >= 0.0 && *pi < 1.0) {
                    return Err(Error::domain("pi", format!("must lie in [0, 1), got {pi}")));
                }
                Ok(())
            }
            ProcedureKind::Sr => Ok(()),
            ProcedureKind::SrR { r } => {
                if r.is_finite() && *r >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::domain("r", format!("head start must be nonnegative, got {r}")))
                }
            }
            ProcedureKind::Srp { qsd } => GridSampler::new(qsd).map(|_| ()),
        }
    }

    /// Multiplier in `xi(v) = (1 + v) * scale`: `1/(1-p)` for Shiryaev, 1 otherwise.
    pub fn xi_scale(&self) -> f64 {
        match self {
            ProcedureKind::Shiryaev { p, .. } => 1.0 / (1.0 - p),
            _ => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProcedureKind::Shiryaev { .. } => "shiryaev",
            ProcedureKind::Sr => "sr",
            ProcedureKind::SrR { .. } => "sr-r",
            ProcedureKind::Srp { .. } => "srp",
        }
    }

    /// Deterministic starting value, or `None` for the randomized SRP start.
    pub fn fixed_start(&self) -> Option<f64> {
        match self {
            ProcedureKind::Shiryaev { p, pi } => Some(pi / ((1.0 - pi) * p)),
            ProcedureKind::Sr => Some(0.0),
            ProcedureKind::SrR { r } => Some(*r),
            ProcedureKind::Srp { .. } => None,
        }
    }
}

/// `xi(v)`: `(1+v)/(1-p)` for Shiryaev and `1+v` for the SR family.
pub fn xi(kind: &ProcedureKind, v: f64) -> f64 {
    (1.0 + v) * kind.xi_scale()
}

/// A statistic together with its alarm threshold `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcedureSpec {
    pub kind: ProcedureKind,
    pub threshold: f64,
}

impl ProcedureSpec {
    pub fn new(kind: ProcedureKind, threshold: f64) -> Result<Self> {
        kind.validate()?;
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(Error::domain("A", format!("threshold must be positive and finite, got {threshold}")));
        }
        Ok(ProcedureSpec { kind, threshold })
    }

    /// A starting-value source: the fixed start, or a sampler for SRP.
    pub fn starter(&self) -> Result<Starter> {
        match &self.kind {
            ProcedureKind::Srp { qsd } => Ok(Starter::Random(GridSampler::new(qsd)?)),
            kind => Ok(Starter::Fixed(kind.fixed_start().expect("deterministic start"))),
        }
    }
}

/// Produces `V_0` for each (re)start of a procedure.
#[derive(Debug, Clone)]
pub enum Starter {
    Fixed(f64),
    Random(GridSampler),
}

impl Starter {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Starter::Fixed(v) => *v,
            Starter::Random(s) => s.sample(rng),
        }
    }
}

/// One step of the recursion: `xi(v_prev) * lr_value`.
pub fn step(spec: &ProcedureSpec, v_prev: f64, lr_value: f64, n: u64) -> Result<f64> {
    if !(v_prev >= 0.0) {
        return Err(Error::domain("v_prev", format!("statistic must be nonnegative, got {v_prev}")));
    }
    if !(lr_value > 0.0) || lr_value.is_nan() {
        return Err(Error::domain("lr_value", format!("likelihood ratio must be positive, got {lr_value}")));
    }
    let v = xi(&spec.kind, v_prev) * lr_value;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Overflow { step: n })
    }
}

const LOG_SPACE_ABOVE: f64 = 1e280;

/// Online detector: feed likelihood ratios one at a time.
///
/// Once the statistic exceeds 1e280 it is carried as a logarithm so very
/// long runs under huge thresholds cannot overflow.
#[derive(Debug, Clone)]
pub struct Detector {
    scale_ln: f64,
    scale: f64,
    threshold: f64,
    v: f64,
    log_v: Option<f64>,
    n: u64,
    alarm: bool,
}

impl Detector {
    pub fn new(spec: &ProcedureSpec, v0: f64) -> Result<Self> {
        if !(v0.is_finite() && v0 >= 0.0) {
            return Err(Error::domain("start", format!("initial statistic must be nonnegative, got {v0}")));
        }
        let scale = spec.kind.xi_scale();
        Ok(Detector { scale_ln: scale.ln(), scale, threshold: spec.threshold, v: v0, log_v: None, n: 0, alarm: false })
    }

    /// Current statistic (may be `inf` after switching to log space).
    pub fn value(&self) -> f64 {
        match self.log_v {
            Some(l) => l.exp(),
            None => self.v,
        }
    }

    pub fn log_value(&self) -> f64 {
        self.log_v.unwrap_or(self.v.ln())
    }

    pub fn steps(&self) -> u64 {
        self.n
    }

    pub fn alarmed(&self) -> bool {
        self.alarm
    }

    /// Processes one likelihood ratio and reports whether the alarm fires.
    pub fn update(&mut self, lr: f64) -> bool {
        self.n += 1;
        match self.log_v {
            None => {
                self.v = (1.0 + self.v) * self.scale * lr;
                if self.v > LOG_SPACE_ABOVE {
                    self.log_v = Some(self.v.ln());
                }
            }
            Some(l) => {
                let next = l + (-l).exp().ln_1p() + self.scale_ln + lr.ln();
                if next < LOG_SPACE_ABOVE.ln() {
                    self.log_v = None;
                    self.v = next.exp();
                } else {
                    self.log_v = Some(next);
                }
            }
        }
        self.alarm = match self.log_v {
            None => self.v >= self.threshold,
            Some(l) => l >= self.threshold.ln(),
        };
        self.alarm
    }
}

/// Outcome of running a procedure on one observation stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    /// Alarm time, `None` when censored.
    pub stopping_time: Option<u64>,
    pub censored: bool,
    pub alarm_raised: bool,
    /// Set only when the true change point is known.
    pub false_alarm: Option<bool>,
    pub observations_read: u64,
    pub start: f64,
    pub threshold: f64,
    /// `V_1, ..., V_min(T, horizon)`.
    pub trajectory: Vec<f64>,
}

/// Runs a procedure online over `stream`, stopping at the first `V_n >= A`.
///
/// The stream is pulled one observation at a time and never past the alarm.
/// `true_change`, when known, marks the alarm as false if `T <= nu`.
pub fn run_detection<I>(
    spec: &ProcedureSpec,
    stream: I,
    model: &ChangePointModel,
    horizon: u64,
    start: f64,
    true_change: Option<u64>,
) -> Result<DetectionResult>
where
    I: IntoIterator<Item = f64>,
{
    if horizon == 0 {
        return Err(Error::domain("horizon", "must be at least 1"));
    }
    let mut det = Detector::new(spec, start)?;
    let mut trajectory = Vec::new();
    let mut stream = stream.into_iter();
    while det.steps() < horizon {
        let Some(x) = stream.next() else { break };
        model.check_observation(x)?;
        let fired = det.update(model.lr(x));
        if det.log_value().is_nan() {
            return Err(Error::Overflow { step: det.steps() });
        }
        trajectory.push(det.value());
        if fired {
            break;
        }
    }
    let alarm = det.alarmed();
    let stopping_time = alarm.then(|| det.steps());
    Ok(DetectionResult {
        stopping_time,
        censored: !alarm,
        alarm_raised: alarm,
        false_alarm: match (stopping_time, true_change) {
            (Some(t), Some(nu)) => Some(t <= nu),
            _ => None,
        },
        observations_read: det.steps(),
        start,
        threshold: spec.threshold,
        trajectory,
    })
}

/// `Pr(nu < n | F_n) = R / (R + 1/p)` for the Shiryaev statistic `R = R_{n,p}`.
pub fn posterior_probability(r: f64, p: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::domain("R", format!("statistic must be nonnegative, got {r}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("p", format!("must lie in (0, 1), got {p}")));
    }
    if r.is_infinite() {
        return Ok(1.0);
    }
    Ok(r * p / (r * p + 1.0))
}

/// Mean and standard error of a multi-cyclic delay experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticyclicEstimate {
    pub mean_delay: f64,
    pub std_error: f64,
    pub n_reps: usize,
    pub change_point: u64,
    /// Average number of false alarms before the change.
    pub mean_false_alarms: f64,
    pub warning: Option<String>,
}

/// Default change point for multi-cyclic runs: `20 * gamma`.
pub fn default_multicyclic_change(gamma: f64) -> u64 {
    (20.0 * gamma).ceil() as u64
}

/// Delay of one multi-cyclic path: restart after every false alarm, then
/// report the delay of the first alarm after `nu` and the false-alarm count.
pub(crate) fn multicyclic_path<R: Rng + ?Sized>(
    spec: &ProcedureSpec,
    starter: &Starter,
    pre: &crate::models::ObservationSampler,
    post: &crate::models::ObservationSampler,
    nu: u64,
    max_delay: u64,
    rng: &mut R,
) -> Result<(u64, u64)> {
    let mut det = Detector::new(spec, starter.draw(rng))?;
    let mut false_alarms = 0;
    for _ in 0..nu {
        if det.update(pre.lr(rng)) {
            false_alarms += 1;
            det = Detector::new(spec, starter.draw(rng))?;
        }
    }
    for d in 1..=max_delay {
        if det.update(post.lr(rng)) {
            return Ok((d, false_alarms));
        }
    }
    Err(Error::Numerical(format!("no detection within {max_delay} post-change observations")))
}

/// Repeats the procedure after each false alarm on a stream that changes
/// after observation `nu`, and averages the delay of the final (true) alarm.
pub fn run_multicyclic(
    spec: &ProcedureSpec,
    model: &ChangePointModel,
    nu: u64,
    n_reps: usize,
    seed: u64,
) -> Result<MulticyclicEstimate> {
    if n_reps < 2 {
        return Err(Error::domain("n_reps", "need at least two replications"));
    }
    let starter = spec.starter()?;
    let pre = model.sampler(Regime::Pre);
    let post = model.sampler(Regime::Post);
    let max_delay = 1_000_000_000;
    let runs: Vec<(u64, u64)> = (0..n_reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            multicyclic_path(spec, &starter, &pre, &post, nu, max_delay, &mut rng)
        })
        .collect::<Result<_>>()?;
    let n = n_reps as f64;
    let mean = runs.iter().map(|r| r.0 as f64).sum::<f64>() / n;
    let var = runs.iter().map(|r| (r.0 as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mean_fa = runs.iter().map(|r| r.1 as f64).sum::<f64>() / n;
    let warning = (nu > 0 && mean_fa < 5.0).then(|| {
        format!("only {mean_fa:.2} false alarms per path on average; the change point may be too early for a stationary regime")
    });
    Ok(MulticyclicEstimate {
        mean_delay: mean,
        std_error: (var / n).sqrt(),
        n_reps,
        change_point: nu,
        mean_false_alarms: mean_fa,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_model, ModelParams};
    use crate::ocsolve::grid::Grid;
    use proptest::prelude::*;

    fn spec(kind: ProcedureKind, a: f64) -> ProcedureSpec {
        ProcedureSpec::new(kind, a).unwrap()
    }

    #[test]
    fn xi_values() {
        assert_eq!(xi(&ProcedureKind::Sr, 0.0), 1.0);
        assert_eq!(xi(&ProcedureKind::Shiryaev { p: 0.5, pi: 0.0 }, 1.0), 4.0);
        let near = xi(&ProcedureKind::Shiryaev { p: 1e-12, pi: 0.0 }, 3.0);
        assert!((near - 4.0).abs() < 1e-10);
    }

    #[test]
    fn step_examples() {
        let sr = spec(ProcedureKind::Sr, 10.0);
        assert_eq!(step(&sr, 0.0, 1.7, 1).unwrap(), 1.7);
        let srr = spec(ProcedureKind::SrR { r: 2.0 }, 10.0);
        let mut v = 2.0;
        let mut seen = vec![];
        for n in 1..=3 {
            v = step(&srr, v, 1.0, n).unwrap();
            seen.push(v);
        }
        assert_eq!(seen, vec![3.0, 4.0, 5.0]);
        let sh = spec(ProcedureKind::Shiryaev { p: 0.1, pi: 0.0 }, 10.0);
        assert_eq!(sh.kind.fixed_start(), Some(0.0));
        assert!((step(&sh, 0.0, 0.9, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(step(&sr, 1e300, 1e300, 7), Err(Error::Overflow { step: 7 })));
        assert!(step(&sr, 0.0, 0.0, 1).is_err());
    }

    #[test]
    fn shiryaev_start_and_validation() {
        let k = ProcedureKind::Shiryaev { p: 0.2, pi: 0.5 };
        assert!((k.fixed_start().unwrap() - 5.0).abs() < 1e-15);
        assert!(ProcedureSpec::new(ProcedureKind::Shiryaev { p: 1.0, pi: 0.0 }, 1.0).is_err());
        assert!(ProcedureSpec::new(ProcedureKind::SrR { r: -1.0 }, 1.0).is_err());
        assert!(ProcedureSpec::new(ProcedureKind::Sr, 0.0).is_err());
    }

    #[test]
    fn detection_stops_on_tie_and_censors() {
        let m = make_model(ModelParams::U2b).unwrap();
        // Lambda = 2x: x = 0.35 gives 0.7.
        let res = run_detection(&spec(ProcedureKind::Sr, 0.5), vec![0.35, 0.9], &m, 10, 0.0, None).unwrap();
        assert_eq!(res.stopping_time, Some(1));
        assert_eq!(res.trajectory.len(), 1);
        // Exact tie stops.
        let res = run_detection(&spec(ProcedureKind::Sr, 1.0), vec![0.5], &m, 10, 0.0, None).unwrap();
        assert_eq!(res.stopping_time, Some(1));
        let res = run_detection(&spec(ProcedureKind::Sr, 1e9), vec![0.5; 100], &m, 5, 0.0, Some(3)).unwrap();
        assert!(res.censored);
        assert_eq!(res.trajectory.len(), 5);
        assert_eq!(res.false_alarm, None);
        assert!(run_detection(&spec(ProcedureKind::Sr, 1.0), vec![1.5], &m, 5, 0.0, None).unwrap_err().is_domain());
    }

    #[test]
    fn detection_never_reads_past_alarm() {
        let m = make_model(ModelParams::U2b).unwrap();
        let mut reads = 0;
        let stream = std::iter::repeat(0.99).inspect(|_| reads += 1);
        let res = run_detection(&spec(ProcedureKind::Sr, 10.0), stream, &m, 1000, 0.0, Some(100)).unwrap();
        let t = res.stopping_time.unwrap();
        assert_eq!(reads, t);
        assert_eq!(res.false_alarm, Some(true));
    }

    #[test]
    fn log_space_guard_tracks_huge_statistics() {
        // With Lambda = 1e5 the statistic is just above 1e(5n), so the alarm fires at n = 61.
        let s = spec(ProcedureKind::Sr, 1e305);
        let mut det = Detector::new(&s, 0.0).unwrap();
        while !det.update(1e5) {
            assert!(det.steps() < 100);
        }
        assert_eq!(det.steps(), 61);
        assert!((det.log_value() - 305.0 * 10f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn posterior_identity_examples() {
        assert_eq!(posterior_probability(0.0, 0.3).unwrap(), 0.0);
        assert!((posterior_probability(1.0 / 0.3, 0.3).unwrap() - 0.5).abs() < 1e-15);
        assert!(posterior_probability(-1.0, 0.3).is_err());
    }

    #[test]
    fn posterior_matches_bayes_enumeration() {
        // Prior: Pr(nu < 0) = pi and Pr(nu = k) = (1-pi) p (1-p)^k for k >= 0;
        // nu < 0 and nu = 0 both mean every observation is post-change.
        let m = make_model(ModelParams::Beta { delta: 1.0 }).unwrap();
        let p = 0.2;
        for &pi in &[0.0, 0.3] {
            let xs = m.sample(Regime::Post, 5, 17).unwrap();
            let s = spec(ProcedureKind::Shiryaev { p, pi }, 1e12);
            let mut r = s.kind.fixed_start().unwrap();
            for n in 1..=xs.len() {
                r = step(&s, r, m.lr(xs[n - 1]), n as u64).unwrap();
                let lik = |k: usize| -> f64 { xs[k..n].iter().map(|&x| m.lr(x)).product() };
                let before = pi * lik(0) + (0..n).map(|k| (1.0 - pi) * p * (1.0 - p).powi(k as i32) * lik(k)).sum::<f64>();
                let after = (1.0 - pi) * (1.0 - p).powi(n as i32);
                let brute = before / (before + after);
                let got = posterior_probability(r, p).unwrap();
                assert!((got - brute).abs() < 1e-12, "n={n}: {got} vs {brute}");
            }
        }
    }

    #[test]
    fn multicyclic_with_no_false_alarm_window_is_plain_delay() {
        let m = make_model(ModelParams::Beta { delta: 1.0 }).unwrap();
        let s = spec(ProcedureKind::Sr, 20.0);
        let est = run_multicyclic(&s, &m, 0, 2000, 4).unwrap();
        assert_eq!(est.mean_false_alarms, 0.0);
        let again = run_multicyclic(&s, &m, 0, 2000, 4).unwrap();
        assert_eq!(est, again);
        // Direct simulation of E_0[T] with the same streams.
        let post = m.sampler(Regime::Post);
        let mut total = 0u64;
        for i in 0..2000 {
            let mut rng = stream_rng(4, i);
            let mut det = Detector::new(&s, 0.0).unwrap();
            while !det.update(post.lr(&mut rng)) {}
            total += det.steps();
        }
        assert!((est.mean_delay - total as f64 / 2000.0).abs() < 1e-12);
    }

    #[test]
    fn srp_start_draws_inside_grid() {
        let g = Grid::new(5.0, 10).unwrap();
        let q = GridFunction::new(g, vec![0.2; 10]).unwrap();
        let s = spec(ProcedureKind::Srp { qsd: q }, 5.0);
        let starter = s.starter().unwrap();
        let mut rng = stream_rng(1, 0);
        for _ in 0..100 {
            let v = starter.draw(&mut rng);
            assert!((0.0..=5.0).contains(&v));
        }
    }

    proptest! {
        #[test]
        fn larger_head_start_dominates(r1 in 0.0f64..5.0, dr in 0.0f64..5.0, seed in 0u64..1000) {
            let m = make_model(ModelParams::Beta { delta: 1.0 }).unwrap();
            let xs = m.sample(Regime::Pre, 200, seed).unwrap();
            let a = 50.0;
            let lo = run_detection(&spec(ProcedureKind::SrR { r: r1 }, a), xs.clone(), &m, 200, r1, None).unwrap();
            let hi = run_detection(&spec(ProcedureKind::SrR { r: r1 + dr }, a), xs, &m, 200, r1 + dr, None).unwrap();
            for (a, b) in lo.trajectory.iter().zip(&hi.trajectory) {
                prop_assert!(b >= a);
            }
            prop_assert!(hi.observations_read <= lo.observations_read);
        }
    }
}
