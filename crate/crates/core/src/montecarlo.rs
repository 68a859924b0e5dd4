//! Direct simulation of the operating characteristics, used as an
//! independent check on the integral-equation and closed-form results.

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ChangePointModel, ObservationSampler, Regime};
use crate::procedures::{multicyclic_path, Detector, ProcedureSpec, Starter};
use crate::rng::stream_rng;

/// Smallest replication count accepted by [`mc_estimate`].
pub const MIN_REPS: usize = 1000;

/// Hard cap on the length of a single simulated run.
pub const MAX_RUN: u64 = 10_000_000_000;

/// Quantity to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "kebab-case")]
pub enum Metric {
    /// `E_inf[T]`.
    Arl,
    /// `E_nu[T - nu | T > nu]`, estimated by discarding runs with `T <= nu`.
    Add { nu: u64 },
    /// `Pr(T <= nu)` with `nu` drawn from the zero-modified geometric prior.
    BayesPfa { pi: f64, p: f64 },
    /// `E[T - nu | T > nu]` under the same prior.
    BayesAdd { pi: f64, p: f64 },
    /// Delay after `nu` of the procedure restarted after every false alarm.
    Stadd { nu: u64 },
    /// `P_inf(k < T <= k + m | T > k)`.
    LocalPfa { k: u64, m: u64 },
}

impl Metric {
    pub fn label(&self) -> String {
        match *self {
            Metric::Arl => "arl".into(),
            Metric::Add { nu } => format!("add({nu})"),
            Metric::BayesPfa { .. } => "pfa_bayes".into(),
            Metric::BayesAdd { .. } => "add_bayes".into(),
            Metric::Stadd { .. } => "stadd".into(),
            Metric::LocalPfa { k, m } => format!("local_pfa({k},{m})"),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Metric::BayesPfa { pi, p } | Metric::BayesAdd { pi, p } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::domain("p", format!("must lie in (0, 1), got {p}")));
                }
                if !(0.0..1.0).contains(&pi) {
                    return Err(Error::domain("pi", format!("must lie in [0, 1), got {pi}")));
                }
                Ok(())
            }
            Metric::LocalPfa { m: 0, .. } => Err(Error::domain("m", "window must be at least 1")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    /// Sample standard deviation over `sqrt(effective_n)`.
    pub std_error: f64,
    pub n_reps: usize,
    /// Replications that entered the average after conditioning.
    pub effective_n: usize,
    pub seed: u64,
    pub metric: Metric,
    pub warning: Option<String>,
}

impl McEstimate {
    /// Whether `x` lies within `k` standard errors of the estimate.
    pub fn brackets(&self, x: f64, k: f64) -> bool {
        (x - self.value).abs() <= k * self.std_error
    }
}

// One replication: `None` when rejected by the conditioning, else the sample.
type Draw = Option<f64>;

struct Sim<'a> {
    spec: &'a ProcedureSpec,
    starter: Starter,
    pre: ObservationSampler,
    post: ObservationSampler,
}

impl Sim<'_> {
    fn detector<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Detector> {
        Detector::new(self.spec, self.starter.draw(rng))
    }

    /// Alarm time with the change after `nu` observations (`None` = never).
    fn run<R: Rng + ?Sized>(&self, nu: Option<u64>, rng: &mut R) -> Result<u64> {
        let mut det = self.detector(rng)?;
        let nu = nu.unwrap_or(u64::MAX);
        for n in 1..=MAX_RUN {
            let s = if n <= nu { &self.pre } else { &self.post };
            if det.update(s.lr(rng)) {
                return Ok(n);
            }
        }
        Err(Error::Numerical(format!("no alarm within {MAX_RUN} observations")))
    }

    /// Alarm time under `P_inf`, abandoned (as `None`) once it passes `limit`.
    fn run_pre_until<R: Rng + ?Sized>(&self, limit: u64, rng: &mut R) -> Result<Option<u64>> {
        let mut det = self.detector(rng)?;
        for n in 1..=limit {
            if det.update(self.pre.lr(rng)) {
                return Ok(Some(n));
            }
        }
        Ok(None)
    }

    fn draw<R: Rng + ?Sized>(&self, metric: Metric, rng: &mut R) -> Result<Draw> {
        Ok(match metric {
            Metric::Arl => Some(self.run(None, rng)? as f64),
            Metric::Add { nu } => {
                let t = self.run(Some(nu), rng)?;
                (t > nu).then(|| (t - nu) as f64)
            }
            Metric::BayesPfa { pi, p } | Metric::BayesAdd { pi, p } => {
                let nu = if rng.random::<f64>() < pi {
                    0
                } else {
                    Geometric::new(p).map_err(|e| Error::domain("p", e.to_string()))?.sample(rng)
                };
                let t = self.run(Some(nu), rng)?;
                match metric {
                    Metric::BayesPfa { .. } => Some(if t <= nu { 1.0 } else { 0.0 }),
                    _ => (t > nu).then(|| (t - nu) as f64),
                }
            }
            Metric::Stadd { nu } => {
                let (d, _) = multicyclic_path(self.spec, &self.starter, &self.pre, &self.post, nu, MAX_RUN, rng)?;
                Some(d as f64)
            }
            Metric::LocalPfa { k, m } => match self.run_pre_until(k + m, rng)? {
                Some(t) if t <= k => None,
                Some(_) => Some(1.0),
                None => Some(0.0),
            },
        })
    }
}

/// Estimates `metric` for `spec` under `model` from `n_reps` independent
/// replications. Replication `i` uses substream `i` of `seed`, so the result
/// does not depend on the thread count.
pub fn mc_estimate(
    metric: Metric,
    spec: &ProcedureSpec,
    model: &ChangePointModel,
    n_reps: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_reps < MIN_REPS {
        return Err(Error::domain("n_reps", format!("need at least {MIN_REPS} replications, got {n_reps}")));
    }
    metric.validate()?;
    let sim = Sim { spec, starter: spec.starter()?, pre: model.sampler(Regime::Pre), post: model.sampler(Regime::Post) };
    let draws: Vec<Draw> = (0..n_reps)
        .into_par_iter()
        .map(|i| sim.draw(metric, &mut stream_rng(seed, i as u64)))
        .collect::<Result<_>>()?;
    let kept: Vec<f64> = draws.into_iter().flatten().collect();
    let n = kept.len();
    if n < 2 {
        return Err(Error::Numerical(format!(
            "only {n} of {n_reps} replications survived the conditioning; increase n_reps"
        )));
    }
    let mean = kept.iter().sum::<f64>() / n as f64;
    let var = kept.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let mut warning = (n < n_reps / 10).then(|| format!("conditioning kept {n} of {n_reps} replications"));
    if let Metric::Stadd { nu } = metric {
        if nu == 0 {
            warning = Some("STADD with nu = 0 is the delay from the start, not a stationary delay".into());
        }
    }
    Ok(McEstimate {
        value: mean,
        std_error: (var / n as f64).sqrt(),
        n_reps,
        effective_n: n,
        seed,
        metric,
        warning,
    })
}
