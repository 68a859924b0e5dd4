//! iid change-point models.
//!
//! Observations `X_1, ..., X_nu` follow the pre-change density `f` and
//! `X_{nu+1}, ...` follow the post-change density `g`; `nu` is the index of
//! the last pre-change observation (`nu = 0` means the whole stream is
//! post-change). Every detector in the crate consumes only the likelihood
//! ratio `Lambda = g(X)/f(X)`, so each model also exposes the law of
//! `Lambda` under both regimes.

use std::f64::consts::LN_2;
use std::fmt;

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{ensure_positive, Error, Result};
use crate::rng::stream_rng;

/// Which regime generates the data: `Pre` is the `P_inf` measure, `Post` is `P_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Pre,
    Post,
}

/// Parameters of the built-in models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ModelParams {
    /// beta(delta, delta+1) to beta(delta+1, delta).
    Beta { delta: f64 },
    /// Exponential with mean 1 to exponential with mean 1 + theta.
    ExpShift { theta: f64 },
    /// uniform(0,1) to beta(2,1).
    U2b,
    /// Exponential with rate 1 to exponential with rate 2.
    ExpDouble,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelParams::Beta { delta } => ensure_positive("delta", delta),
            ModelParams::ExpShift { theta } => ensure_positive("theta", theta),
            ModelParams::U2b | ModelParams::ExpDouble => Ok(()),
        }
    }
}

/// An immutable iid change-point model.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangePointModel {
    params: ModelParams,
    // ln B(delta, delta + 1) for the beta model, unused otherwise.
    ln_beta: f64,
}

/// Builds one of the built-in models.
pub fn make_model(params: ModelParams) -> Result<ChangePointModel> {
    params.validate()?;
    let ln_beta = match params {
        ModelParams::Beta { delta } => ln_beta(delta, delta + 1.0),
        _ => 0.0,
    };
    Ok(ChangePointModel { params, ln_beta })
}

impl fmt::Display for ChangePointModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl ChangePointModel {
    pub fn params(&self) -> ModelParams {
        self.params
    }

    pub fn name(&self) -> String {
        match self.params {
            ModelParams::Beta { delta } => format!("beta(delta={delta})"),
            ModelParams::ExpShift { theta } => format!("exp-shift(theta={theta})"),
            ModelParams::U2b => "u2b".to_string(),
            ModelParams::ExpDouble => "exp-double".to_string(),
        }
    }

    /// Closed interval of valid observations.
    pub fn support(&self) -> (f64, f64) {
        match self.params {
            ModelParams::Beta { .. } | ModelParams::U2b => (0.0, 1.0),
            ModelParams::ExpShift { .. } | ModelParams::ExpDouble => (0.0, f64::INFINITY),
        }
    }

    /// Range of the likelihood ratio: `Lambda` lies in `[lo, hi]` almost surely.
    pub fn lr_range(&self) -> (f64, f64) {
        match self.params {
            ModelParams::Beta { .. } => (0.0, f64::INFINITY),
            ModelParams::ExpShift { theta } => (1.0 / (1.0 + theta), f64::INFINITY),
            ModelParams::U2b | ModelParams::ExpDouble => (0.0, 2.0),
        }
    }

    pub fn pre_density(&self, x: f64) -> f64 {
        self.density(Regime::Pre, x)
    }

    pub fn post_density(&self, x: f64) -> f64 {
        self.density(Regime::Post, x)
    }

    pub fn density(&self, regime: Regime, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(x >= lo && x <= hi) {
            return 0.0;
        }
        match (self.params, regime) {
            (ModelParams::Beta { delta }, Regime::Pre) => {
                ((delta - 1.0) * x.ln() + delta * (1.0 - x).ln() - self.ln_beta).exp()
            }
            (ModelParams::Beta { delta }, Regime::Post) => {
                (delta * x.ln() + (delta - 1.0) * (1.0 - x).ln() - self.ln_beta).exp()
            }
            (ModelParams::ExpShift { .. }, Regime::Pre) => (-x).exp(),
            (ModelParams::ExpShift { theta }, Regime::Post) => (-x / (1.0 + theta)).exp() / (1.0 + theta),
            (ModelParams::U2b, Regime::Pre) => 1.0,
            (ModelParams::U2b, Regime::Post) => 2.0 * x,
            (ModelParams::ExpDouble, Regime::Pre) => (-x).exp(),
            (ModelParams::ExpDouble, Regime::Post) => 2.0 * (-2.0 * x).exp(),
        }
    }

    // Observations sitting exactly on a support endpoint (a probability-zero
    // event) are moved inside by one machine epsilon.
    fn clamp_observation(&self, x: f64) -> f64 {
        match self.params {
            ModelParams::Beta { .. } | ModelParams::U2b => x.clamp(f64::EPSILON, 1.0 - f64::EPSILON),
            _ => x,
        }
    }

    /// Checks that `x` is a valid observation for this model.
    pub fn check_observation(&self, x: f64) -> Result<()> {
        let (lo, hi) = self.support();
        if x.is_finite() && x >= lo && x <= hi {
            Ok(())
        } else {
            Err(Error::domain("observation", format!("{x} lies outside the support [{lo}, {hi}] of {}", self.name())))
        }
    }

    /// Likelihood ratio `g(x)/f(x)` for an observation inside the support.
    pub fn lr(&self, x: f64) -> f64 {
        let x = self.clamp_observation(x);
        match self.params {
            // B(delta, delta+1) = B(delta+1, delta), so the normalizers cancel.
            ModelParams::Beta { .. } => x / (1.0 - x),
            ModelParams::ExpShift { theta } => (x * theta / (1.0 + theta)).exp() / (1.0 + theta),
            ModelParams::U2b => 2.0 * x,
            ModelParams::ExpDouble => 2.0 * (-x).exp(),
        }
    }

    pub fn log_lr(&self, x: f64) -> f64 {
        let x = self.clamp_observation(x);
        match self.params {
            ModelParams::Beta { .. } => x.ln() - (-x).ln_1p(),
            ModelParams::ExpShift { theta } => x * theta / (1.0 + theta) - theta.ln_1p(),
            ModelParams::U2b => LN_2 + x.ln(),
            ModelParams::ExpDouble => LN_2 - x,
        }
    }

    /// `P_d(Lambda_1 <= t)`.
    pub fn lr_cdf(&self, regime: Regime, t: f64) -> f64 {
        if t <= 0.0 || t.is_nan() {
            return 0.0;
        }
        if t == f64::INFINITY {
            return 1.0;
        }
        match (self.params, regime) {
            (ModelParams::Beta { delta }, Regime::Pre) => beta_reg(delta, delta + 1.0, t / (1.0 + t)),
            (ModelParams::Beta { delta }, Regime::Post) => beta_reg(delta + 1.0, delta, t / (1.0 + t)),
            (ModelParams::ExpShift { .. }, _) => 1.0 - self.lr_sf(regime, t),
            (ModelParams::U2b | ModelParams::ExpDouble, Regime::Pre) => (0.5 * t).min(1.0),
            (ModelParams::U2b | ModelParams::ExpDouble, Regime::Post) => (0.5 * t).min(1.0).powi(2),
        }
    }

    /// `P_d(Lambda_1 > t)`, evaluated without cancellation in the upper tail.
    pub fn lr_sf(&self, regime: Regime, t: f64) -> f64 {
        if t <= 0.0 || t.is_nan() {
            return 1.0;
        }
        if t == f64::INFINITY {
            return 0.0;
        }
        match (self.params, regime) {
            (ModelParams::Beta { delta }, Regime::Pre) => beta_reg(delta + 1.0, delta, 1.0 / (1.0 + t)),
            (ModelParams::Beta { delta }, Regime::Post) => beta_reg(delta, delta + 1.0, 1.0 / (1.0 + t)),
            (ModelParams::ExpShift { theta }, regime) => {
                let c = 1.0 / (1.0 + theta);
                if t <= c {
                    return 1.0;
                }
                let index = match regime {
                    Regime::Pre => (1.0 + theta) / theta,
                    Regime::Post => 1.0 / theta,
                };
                (-index * (t / c).ln()).exp()
            }
            _ => 1.0 - self.lr_cdf(regime, t),
        }
    }

    /// `(P_d(Lambda_1 <= t), P_d(Lambda_1 > t))` where whichever tail is
    /// smaller is evaluated directly, so differences of either stay accurate.
    pub fn lr_tails(&self, regime: Regime, t: f64) -> (f64, f64) {
        if t <= 0.0 || t.is_nan() {
            return (0.0, 1.0);
        }
        if t == f64::INFINITY {
            return (1.0, 0.0);
        }
        match self.params {
            ModelParams::Beta { delta } => {
                let (a, b) = match regime {
                    Regime::Pre => (delta, delta + 1.0),
                    Regime::Post => (delta + 1.0, delta),
                };
                let z = t / (1.0 + t);
                if z <= a / (a + b) {
                    let c = beta_reg(a, b, z);
                    (c, 1.0 - c)
                } else {
                    let s = beta_reg(b, a, 1.0 / (1.0 + t));
                    (1.0 - s, s)
                }
            }
            ModelParams::ExpShift { theta } => {
                let c = 1.0 / (1.0 + theta);
                if t <= c {
                    return (0.0, 1.0);
                }
                let index = match regime {
                    Regime::Pre => (1.0 + theta) / theta,
                    Regime::Post => 1.0 / theta,
                };
                let e = -index * (t / c).ln();
                (-e.exp_m1(), e.exp())
            }
            ModelParams::U2b | ModelParams::ExpDouble => {
                let u = (0.5 * t).min(1.0);
                match regime {
                    Regime::Pre => (u, 1.0 - u),
                    Regime::Post => (u * u, (1.0 - u) * (1.0 + u)),
                }
            }
        }
    }

    /// Partial means `(E_d[Lambda; Lambda <= t], E_d[Lambda; Lambda > t])`.
    ///
    /// The upper part is `inf` when `E_d[Lambda]` diverges. Under the
    /// pre-change measure this is `P_0` by the change of measure.
    pub fn lr_partial_mean(&self, regime: Regime, t: f64) -> (f64, f64) {
        if regime == Regime::Pre {
            return self.lr_tails(Regime::Post, t);
        }
        if t <= 0.0 || t.is_nan() {
            return (0.0, self.post_lr_mean());
        }
        match self.params {
            ModelParams::U2b | ModelParams::ExpDouble => {
                let u = t.min(2.0);
                let lower = u * u * u / 6.0;
                (lower, (8.0 - u * u * u) / 6.0)
            }
            ModelParams::ExpShift { theta } => {
                let c = 1.0 / (1.0 + theta);
                if t <= c {
                    return (0.0, self.post_lr_mean());
                }
                let k = 1.0 - 1.0 / theta;
                let lt = (t / c).ln();
                if theta < 1.0 {
                    let upper = c * (k * lt).exp() / (1.0 - theta);
                    (-c * (k * lt).exp_m1() / (1.0 - theta), upper)
                } else if theta == 1.0 {
                    (c * lt, f64::INFINITY)
                } else {
                    (c * (k * lt).exp_m1() / (theta - 1.0), f64::INFINITY)
                }
            }
            ModelParams::Beta { delta } => {
                let z = t / (1.0 + t);
                if delta > 1.0 {
                    let mean = (delta + 1.0) / (delta - 1.0);
                    if z <= (delta + 2.0) / (2.0 * delta + 1.0) {
                        let lo = mean * beta_reg(delta + 2.0, delta - 1.0, z);
                        (lo, mean - lo)
                    } else {
                        let up = mean * beta_reg(delta - 1.0, delta + 2.0, 1.0 / (1.0 + t));
                        (mean - up, up)
                    }
                } else if delta == 1.0 {
                    // 2 * int_0^z x^2 / (1 - x) dx = 2 * (-ln(1-z) - z - z^2/2).
                    let lower = if z < 0.5 {
                        let mut sum = 0.0;
                        let mut zk = z * z * z;
                        for k in 3..200 {
                            let term = zk / k as f64;
                            sum += term;
                            if term < 1e-17 * sum {
                                break;
                            }
                            zk *= z;
                        }
                        2.0 * sum
                    } else {
                        2.0 * (t.ln_1p() - z - 0.5 * z * z)
                    };
                    (lower, f64::INFINITY)
                } else {
                    // Integration by parts of x^(delta+1) (1-x)^(delta-2).
                    let f0 = self.lr_cdf(Regime::Post, t);
                    let edge = ((delta + 1.0) * z.ln() + (delta - 1.0) * (-z).ln_1p() - self.ln_beta).exp();
                    (((delta + 1.0) * f0 - edge) / (delta - 1.0), f64::INFINITY)
                }
            }
        }
    }

    // E_0[Lambda] = E_inf[Lambda^2], possibly infinite.
    fn post_lr_mean(&self) -> f64 {
        match self.params {
            ModelParams::U2b | ModelParams::ExpDouble => 4.0 / 3.0,
            ModelParams::ExpShift { theta } if theta < 1.0 => 1.0 / ((1.0 + theta) * (1.0 - theta)),
            ModelParams::Beta { delta } if delta > 1.0 => (delta + 1.0) / (delta - 1.0),
            _ => f64::INFINITY,
        }
    }

    /// Density of `Lambda_1` under the given regime.
    pub fn lr_pdf(&self, regime: Regime, t: f64) -> f64 {
        if !(t > 0.0) || !t.is_finite() {
            return 0.0;
        }
        match (self.params, regime) {
            (ModelParams::Beta { delta }, Regime::Pre) => {
                ((delta - 1.0) * t.ln() - (2.0 * delta + 1.0) * t.ln_1p() - self.ln_beta).exp()
            }
            (ModelParams::Beta { delta }, Regime::Post) => {
                (delta * t.ln() - (2.0 * delta + 1.0) * t.ln_1p() - self.ln_beta).exp()
            }
            (ModelParams::ExpShift { theta }, regime) => {
                let c = 1.0 / (1.0 + theta);
                if t < c {
                    return 0.0;
                }
                let index = match regime {
                    Regime::Pre => (1.0 + theta) / theta,
                    Regime::Post => 1.0 / theta,
                };
                index * (-index * (t / c).ln()).exp() / t
            }
            (ModelParams::U2b | ModelParams::ExpDouble, Regime::Pre) => {
                if t < 2.0 {
                    0.5
                } else {
                    0.0
                }
            }
            (ModelParams::U2b | ModelParams::ExpDouble, Regime::Post) => {
                if t < 2.0 {
                    0.5 * t
                } else {
                    0.0
                }
            }
        }
    }

    /// A sampler for observations from `f` (pre) or `g` (post).
    pub fn sampler(&self, regime: Regime) -> ObservationSampler {
        let kind = match (self.params, regime) {
            (ModelParams::Beta { delta }, Regime::Pre) => SamplerKind::Beta {
                obs: Beta::new(delta, delta + 1.0).expect("validated shape"),
                num: Gamma::new(delta, 1.0).expect("validated shape"),
                den: Gamma::new(delta + 1.0, 1.0).expect("validated shape"),
            },
            (ModelParams::Beta { delta }, Regime::Post) => SamplerKind::Beta {
                obs: Beta::new(delta + 1.0, delta).expect("validated shape"),
                num: Gamma::new(delta + 1.0, 1.0).expect("validated shape"),
                den: Gamma::new(delta, 1.0).expect("validated shape"),
            },
            (ModelParams::ExpShift { .. }, Regime::Pre) | (ModelParams::ExpDouble, Regime::Pre) => {
                SamplerKind::Exp(Exp::new(1.0).expect("unit rate"))
            }
            (ModelParams::ExpShift { theta }, Regime::Post) => {
                SamplerKind::Exp(Exp::new(1.0 / (1.0 + theta)).expect("positive rate"))
            }
            (ModelParams::ExpDouble, Regime::Post) => SamplerKind::Exp(Exp::new(2.0).expect("positive rate")),
            (ModelParams::U2b, Regime::Pre) => SamplerKind::Uniform,
            (ModelParams::U2b, Regime::Post) => SamplerKind::SqrtUniform,
        };
        ObservationSampler { model: self.clone(), kind }
    }

    /// `n` iid observations from the given regime, reproducible from `seed`.
    pub fn sample(&self, regime: Regime, n: usize, seed: u64) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::domain("n", "sample size must be at least 1"));
        }
        let sampler = self.sampler(regime);
        let mut rng = stream_rng(seed, 0);
        Ok((0..n).map(|_| sampler.observation(&mut rng)).collect())
    }

    /// Kullback-Leibler number `I = E_0[log Lambda_1]` in closed form.
    pub fn kl_number(&self) -> Result<f64> {
        let value = match self.params {
            // E_0[log X - log(1-X)] = digamma(delta+1) - digamma(delta).
            ModelParams::Beta { delta } => 1.0 / delta,
            ModelParams::ExpShift { theta } => theta - theta.ln_1p(),
            // E_0[log 2X] with X ~ beta(2,1).
            ModelParams::U2b | ModelParams::ExpDouble => LN_2 - 0.5,
        };
        if value.is_finite() && value > 0.0 {
            Ok(value)
        } else {
            Err(Error::Numerical(format!("Kullback-Leibler number of {} is not finite and positive", self.name())))
        }
    }

    /// Monte Carlo estimate of `I` with its standard error.
    pub fn kl_number_mc(&self, n: usize, seed: u64) -> Result<(f64, f64)> {
        if n < 2 {
            return Err(Error::domain("n", "need at least two draws"));
        }
        let sampler = self.sampler(Regime::Post);
        let mut rng = stream_rng(seed, 0);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = sampler.log_lr(&mut rng);
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0) * n as f64 / (n as f64 - 1.0);
        if !mean.is_finite() {
            return Err(Error::Numerical("Monte Carlo KL estimate diverged".into()));
        }
        Ok((mean, (var / n as f64).sqrt()))
    }
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Beta { obs: Beta<f64>, num: Gamma<f64>, den: Gamma<f64> },
    Exp(Exp<f64>),
    Uniform,
    SqrtUniform,
}

/// Draws observations (or their log likelihood ratios) from one regime of a model.
#[derive(Debug, Clone)]
pub struct ObservationSampler {
    model: ChangePointModel,
    kind: SamplerKind,
}

impl ObservationSampler {
    pub fn observation<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            SamplerKind::Beta { obs, .. } => obs.sample(rng),
            SamplerKind::Exp(d) => d.sample(rng),
            SamplerKind::Uniform => rng.random::<f64>(),
            SamplerKind::SqrtUniform => rng.random::<f64>().sqrt(),
        }
    }

    pub fn lr<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.model.lr(self.observation(rng))
    }

    /// `log Lambda` of a fresh observation. For the beta model this uses the
    /// gamma representation `X/(1-X) = G_a/G_b`, which avoids forming `X`.
    pub fn log_lr<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            SamplerKind::Beta { num, den, .. } => num.sample(rng).ln() - den.sample(rng).ln(),
            _ => self.model.log_lr(self.observation(rng)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::integrate;

    fn all_models() -> Vec<ChangePointModel> {
        [
            ModelParams::Beta { delta: 1.0 },
            ModelParams::Beta { delta: 5.0 },
            ModelParams::Beta { delta: 0.7 },
            ModelParams::ExpShift { theta: 0.1 },
            ModelParams::U2b,
            ModelParams::ExpDouble,
        ]
        .into_iter()
        .map(|p| make_model(p).unwrap())
        .collect()
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        assert!(make_model(ModelParams::Beta { delta: 0.0 }).unwrap_err().is_domain());
        assert!(make_model(ModelParams::Beta { delta: -1.0 }).is_err());
        assert!(make_model(ModelParams::ExpShift { theta: 0.0 }).is_err());
        assert!(make_model(ModelParams::ExpShift { theta: f64::NAN }).is_err());
    }

    #[test]
    fn u2b_lr_law() {
        let m = make_model(ModelParams::U2b).unwrap();
        assert_eq!(m.lr_cdf(Regime::Pre, 1.0), 0.5);
        assert_eq!(m.lr_cdf(Regime::Post, 1.0), 0.25);
        assert_eq!(m.lr_cdf(Regime::Pre, 2.0), 1.0);
        assert_eq!(m.lr_cdf(Regime::Post, 2.0), 1.0);
        assert_eq!(m.lr_cdf(Regime::Pre, -0.1), 0.0);
        let e = make_model(ModelParams::ExpDouble).unwrap();
        for t in [0.1, 0.7, 1.3, 1.99, 2.5] {
            for r in [Regime::Pre, Regime::Post] {
                assert_eq!(m.lr_cdf(r, t), e.lr_cdf(r, t));
            }
        }
    }

    #[test]
    fn lr_matches_density_ratio() {
        for m in all_models() {
            let (lo, hi) = m.support();
            let hi = hi.min(30.0);
            for k in 1..200 {
                let x = lo + (hi - lo) * k as f64 / 200.0;
                let f = m.pre_density(x);
                if f > 0.0 {
                    let ratio = m.post_density(x) / f;
                    let lr = m.lr(x);
                    assert!(((lr - ratio) / ratio).abs() < 1e-12, "{} at {x}: {lr} vs {ratio}", m.name());
                    assert!((m.log_lr(x) - ratio.ln()).abs() < 1e-12 * (1.0 + ratio.ln().abs()));
                }
            }
        }
    }

    #[test]
    fn change_of_measure_identity() {
        for m in all_models() {
            for k in 1..60 {
                let t = 0.05 * k as f64;
                let lhs = m.lr_pdf(Regime::Post, t);
                let rhs = t * m.lr_pdf(Regime::Pre, t);
                assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1e-300), "{} at {t}", m.name());
            }
        }
    }

    #[test]
    fn post_cdf_is_first_moment_of_pre() {
        // P_0(Lambda <= t) = int_0^t s p_inf(s) ds.
        for m in all_models() {
            let (lo, _) = m.lr_range();
            let mut prev = lo.max(0.0);
            let mut acc = 0.0;
            for k in 1..=40 {
                let t = lo.max(0.0) + 0.1 * k as f64;
                acc += integrate(|s| s * m.lr_pdf(Regime::Pre, s), prev, t, 1e-13).unwrap();
                prev = t;
                let cdf = m.lr_cdf(Regime::Post, t);
                assert!((acc - cdf).abs() < 1e-8, "{} at {t}: {acc} vs {cdf}", m.name());
            }
        }
    }

    #[test]
    fn cdf_and_pdf_agree_by_finite_difference() {
        for m in all_models() {
            for regime in [Regime::Pre, Regime::Post] {
                for k in 1..40 {
                    let t = 0.13 * k as f64 + 0.011;
                    let h = 1e-6;
                    let fd = (m.lr_cdf(regime, t + h) - m.lr_cdf(regime, t - h)) / (2.0 * h);
                    let pdf = m.lr_pdf(regime, t);
                    if (t - 2.0).abs() > 1e-3 && (t - m.lr_range().0).abs() > 1e-3 {
                        assert!((fd - pdf).abs() < 1e-6 * (1.0 + pdf), "{} {regime:?} t={t}: {fd} vs {pdf}", m.name());
                    }
                    let s = m.lr_sf(regime, t) + m.lr_cdf(regime, t);
                    assert!((s - 1.0).abs() < 1e-12);
                    let (c, sf) = m.lr_tails(regime, t);
                    assert!((c - m.lr_cdf(regime, t)).abs() < 1e-14);
                    assert!((sf - m.lr_sf(regime, t)).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn partial_means_match_quadrature() {
        let models: Vec<ChangePointModel> = [
            ModelParams::Beta { delta: 0.6 },
            ModelParams::Beta { delta: 1.0 },
            ModelParams::Beta { delta: 5.0 },
            ModelParams::ExpShift { theta: 0.1 },
            ModelParams::ExpShift { theta: 1.0 },
            ModelParams::ExpShift { theta: 2.5 },
            ModelParams::U2b,
        ]
        .into_iter()
        .map(|p| make_model(p).unwrap())
        .collect();
        for m in models {
            for regime in [Regime::Pre, Regime::Post] {
                let lo = m.lr_range().0;
                for t in [0.05, 0.3, 0.9, 1.0, 1.7, 4.0, 25.0] {
                    if t <= lo {
                        continue;
                    }
                    let q = integrate(|s| s * m.lr_pdf(regime, s), lo, t, 1e-14).unwrap();
                    let (lower, upper) = m.lr_partial_mean(regime, t);
                    assert!((lower - q).abs() < 1e-9 * (1.0 + q), "{} {regime:?} t={t}: {lower} vs {q}", m.name());
                    if upper.is_finite() {
                        let total = lower + upper;
                        let (l2, u2) = m.lr_partial_mean(regime, 1e9);
                        assert!((total - (l2 + u2)).abs() < 1e-9 * total);
                    }
                }
            }
        }
    }

    #[test]
    fn kl_numbers() {
        let b1 = make_model(ModelParams::Beta { delta: 1.0 }).unwrap();
        assert!((b1.kl_number().unwrap() - 1.0).abs() < 1e-15);
        let b5 = make_model(ModelParams::Beta { delta: 5.0 }).unwrap();
        assert!((b5.kl_number().unwrap() - 0.2).abs() < 1e-15);
        // Oracle: quadrature of 2x log(2x) on (0, 1).
        let u2b = make_model(ModelParams::U2b).unwrap();
        let oracle = integrate(|x| 2.0 * x * (2.0 * x).ln(), 0.0, 1.0, 1e-14).unwrap();
        assert!((u2b.kl_number().unwrap() - oracle).abs() < 1e-10);
        for m in all_models() {
            let exact = m.kl_number().unwrap();
            assert!(exact > 0.0);
            let (mc, se) = m.kl_number_mc(200_000, 11).unwrap();
            assert!((mc - exact).abs() < 5.0 * se, "{}: {mc} +- {se} vs {exact}", m.name());
        }
    }

    #[test]
    fn sampling_is_deterministic_and_has_right_means() {
        let m = make_model(ModelParams::ExpShift { theta: 0.1 }).unwrap();
        let n = 1_000_000;
        let pre = m.sample(Regime::Pre, n, 5).unwrap();
        let mean = pre.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 3.0 / (n as f64).sqrt());
        let post = m.sample(Regime::Post, n, 6).unwrap();
        let mean = post.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.1).abs() < 3.0 * 1.1 / (n as f64).sqrt());
        assert_eq!(m.sample(Regime::Pre, 100, 9).unwrap(), m.sample(Regime::Pre, 100, 9).unwrap());
        assert!(m.sample(Regime::Pre, 0, 9).is_err());
    }

    fn ks_distance(mut lrs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        lrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = lrs.len() as f64;
        lrs.iter()
            .enumerate()
            .map(|(i, &t)| {
                let f = cdf(t);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn sampled_lr_matches_lr_cdf() {
        let n = 1_000_000;
        for m in all_models() {
            for (regime, seed) in [(Regime::Pre, 1), (Regime::Post, 2)] {
                let lrs: Vec<f64> = m.sample(regime, n, seed).unwrap().iter().map(|&x| m.lr(x)).collect();
                let d = ks_distance(lrs, |t| m.lr_cdf(regime, t));
                assert!(d < 0.005, "{} {regime:?}: KS {d}", m.name());
            }
        }
    }

    #[test]
    fn beta_lr_cdf_matches_pdf_quadrature() {
        // delta = 1: density 2 (1+t)^-3 under the pre-change measure.
        let m = make_model(ModelParams::Beta { delta: 1.0 }).unwrap();
        for t in [0.1, 0.5, 1.0, 3.0, 10.0] {
            let q = integrate(|s| 2.0 * (1.0 + s).powi(-3), 0.0, t, 1e-14).unwrap();
            assert!((q - m.lr_cdf(Regime::Pre, t)).abs() < 1e-12);
        }
    }
}
