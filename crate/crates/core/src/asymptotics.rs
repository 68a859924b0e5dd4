//! Renewal-theoretic constants of the likelihood-ratio random walk and the
//! large-threshold approximations built from them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::models::{ChangePointModel, ModelParams, Regime};
use crate::numeric::brent;
use crate::rng::stream_rng;

// A positive-drift LR walk that has climbed this high returns below zero with
// probability at most exp(-WALK_CUTOFF) (exp(-S_n) is a martingale).
const WALK_CUTOFF: f64 = 40.0;

/// `psi(x) = d/dx log Gamma(x)`.
pub fn digamma(x: f64) -> Result<f64> {
    ensure_positive("x", x)?;
    Ok(statrs::function::gamma::digamma(x))
}

/// `psi_1(x) = d^2/dx^2 log Gamma(x)`.
pub fn trigamma(x: f64) -> Result<f64> {
    ensure_positive("x", x)?;
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Asymptotic series in 1/x with Bernoulli-number coefficients.
    let tail = inv
        + 0.5 * inv2
        + inv * inv2
            * (1.0 / 6.0
                + inv2 * (-1.0 / 30.0 + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * (5.0 / 66.0)))));
    Ok(acc + tail)
}

/// Lerch transcendent `Phi(z, 1, a) = sum_{n >= 0} z^n / (n + a)` for `0 <= z < 1`.
pub fn lerch_phi(z: f64, a: f64) -> Result<f64> {
    ensure_positive("a", a)?;
    if !(z.abs() < 1.0) {
        return Err(Error::domain("z", format!("series needs |z| < 1, got {z}")));
    }
    let mut sum = 0.0;
    let mut zn = 1.0;
    for n in 0..50_000_000u64 {
        let term = zn / (n as f64 + a);
        sum += term;
        zn *= z;
        // Remaining terms are bounded by |z|^{n+1} / ((n + 1 + a)(1 - |z|)).
        let bound = zn.abs() / ((n as f64 + 1.0 + a) * (1.0 - z.abs()));
        if bound < 1e-13 {
            return Ok(sum);
        }
    }
    Err(Error::Numerical(format!("Lerch series at z = {z} did not converge")))
}

/// Dispatch used by the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpecialFunction {
    Digamma,
    Trigamma,
    Lerch,
}

pub fn special_function(kind: SpecialFunction, args: &[f64]) -> Result<f64> {
    match (kind, args) {
        (SpecialFunction::Digamma, [x]) => digamma(*x),
        (SpecialFunction::Trigamma, [x]) => trigamma(*x),
        (SpecialFunction::Lerch, [z, a]) => lerch_phi(*z, *a),
        _ => Err(Error::domain("args", format!("wrong number of arguments ({}) for {kind:?}", args.len()))),
    }
}

/// Closed-form constants of the beta model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaConstants {
    pub delta: f64,
    pub i: f64,
    pub c_inf: f64,
    /// `E_0[Z_1^2]` for `Z_1 = log Lambda_1`.
    pub e0_z1_sq: f64,
}

pub fn beta_constants(delta: f64) -> Result<BetaConstants> {
    ensure_positive("delta", delta)?;
    let t1 = trigamma(delta)?;
    let c_inf = delta * t1 + digamma(delta)? - digamma(1.0)?;
    Ok(BetaConstants { delta, i: 1.0 / delta, c_inf, e0_z1_sq: 2.0 * t1 })
}

/// `C(r) = Phi(r / (1 + r), 1, delta) + psi(delta) - psi(1)` for the beta model.
pub fn c_of_r_beta(delta: f64, r: f64) -> Result<f64> {
    ensure_positive("delta", delta)?;
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::domain("r", format!("must be finite and nonnegative, got {r}")));
    }
    Ok(lerch_phi(r / (1.0 + r), delta)? + digamma(delta)? - digamma(1.0)?)
}

/// Head start solving `C(r) = C_inf` for the beta model.
pub fn head_start_beta(delta: f64) -> Result<f64> {
    ensure_positive("delta", delta)?;
    let target = delta * trigamma(delta)?;
    let hi = 1e3 * delta;
    // Solve in z = r / (1 + r) where the Lerch function is smooth.
    let z = brent(|z| Ok(lerch_phi(z, delta)? - target), 0.0, hi / (1.0 + hi), 1e-15, 1e-12, 200)?;
    let r = z / (1.0 - z);
    let resid = (lerch_phi(z, delta)? - target).abs();
    if resid > 1e-9 {
        return Err(Error::Numerical(format!("head start residual {resid:e} too large")));
    }
    Ok(r)
}

/// Stationary density of the SR statistic under `P_inf` for the beta model,
/// a beta-prime(delta, 1) law.
pub fn stationary_density_beta(delta: f64, x: f64) -> Result<f64> {
    ensure_positive("delta", delta)?;
    if !(x > 0.0) {
        return Err(Error::domain("x", format!("must be positive, got {x}")));
    }
    Ok(delta * ((delta - 1.0) * x.ln() - (1.0 + delta) * x.ln_1p()).exp())
}

/// How a constant was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    ClosedForm,
    /// Series whose terms are Monte Carlo estimates.
    SeriesMonteCarlo,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Zero for closed forms.
    pub std_error: f64,
    pub source: Source,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, std_error: 0.0, source: Source::ClosedForm }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OvershootOptions {
    pub k_max: usize,
    pub n_paths: usize,
    pub batches: usize,
    pub seed: u64,
}

impl Default for OvershootOptions {
    fn default() -> Self {
        OvershootOptions { k_max: 200, n_paths: 1_000_000, batches: 20, seed: 0x5eed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvershootConstants {
    pub zeta: Estimate,
    pub varkappa: Estimate,
    /// Geometric tail appended past `k_max`, relative to each series.
    pub tail_fraction_zeta: f64,
    pub tail_fraction_varkappa: f64,
    pub warnings: Vec<String>,
}

// Per-k sums over one batch of P_0 paths.
struct WalkSums {
    n: usize,
    below: Vec<f64>,
    above_weighted: Vec<f64>,
    negative_part: Vec<f64>,
    z_sq: f64,
}

fn simulate_walks(model: &ChangePointModel, k_max: usize, n: usize, seed: u64, stream: u64) -> WalkSums {
    let sampler = model.sampler(Regime::Post);
    let mut rng = stream_rng(seed, stream);
    let mut s = WalkSums {
        n,
        below: vec![0.0; k_max],
        above_weighted: vec![0.0; k_max],
        negative_part: vec![0.0; k_max],
        z_sq: 0.0,
    };
    for _ in 0..n {
        let mut walk = 0.0;
        for k in 0..k_max {
            let z = sampler.log_lr(&mut rng);
            if k == 0 {
                s.z_sq += z * z;
            }
            walk += z;
            if walk <= 0.0 {
                s.below[k] += 1.0;
                s.negative_part[k] -= walk;
            } else {
                // P_inf(S_k > 0) = E_0[exp(-S_k); S_k > 0].
                s.above_weighted[k] += (-walk).exp();
                if walk > WALK_CUTOFF {
                    break;
                }
            }
        }
    }
    s
}

// Sum of a_k / k for k = 1..K plus a geometric tail fitted to the last 20 terms.
fn series_with_tail(a: &[f64]) -> (f64, f64) {
    let k_max = a.len();
    let head: f64 = a.iter().enumerate().map(|(k, v)| v / (k + 1) as f64).sum();
    if k_max < 20 {
        return (head, 0.0);
    }
    let recent: f64 = a[k_max - 10..].iter().sum();
    let older: f64 = a[k_max - 20..k_max - 10].iter().sum();
    let tail = if recent <= 0.0 {
        0.0
    } else if older <= 0.0 || recent >= older {
        // No decay visible: count the last term as persisting for another k_max terms.
        a[k_max - 1] * (2.0f64).ln()
    } else {
        let rho = (recent / older).powf(0.1);
        a[k_max - 1] / k_max as f64 * rho / (1.0 - rho)
    };
    (head + tail, tail)
}

struct SeriesValue {
    zeta: f64,
    varkappa: f64,
    tail_zeta: f64,
    tail_varkappa: f64,
}

fn constants_from(sums: &[&WalkSums], i: f64, e0_z1_sq: Option<f64>) -> SeriesValue {
    let k_max = sums[0].below.len();
    let n: f64 = sums.iter().map(|s| s.n as f64).sum();
    let per_k = |f: &dyn Fn(&WalkSums, usize) -> f64| -> Vec<f64> {
        (0..k_max).map(|k| sums.iter().map(|s| f(s, k)).sum::<f64>() / n).collect()
    };
    let probs = per_k(&|s, k| s.below[k] + s.above_weighted[k]);
    let negs = per_k(&|s, k| s.negative_part[k]);
    let z_sq = e0_z1_sq.unwrap_or_else(|| sums.iter().map(|s| s.z_sq).sum::<f64>() / n);
    let (p_sum, tail_zeta) = series_with_tail(&probs);
    let (n_sum, tail_varkappa) = series_with_tail(&negs);
    SeriesValue {
        zeta: (-p_sum).exp() / i,
        varkappa: z_sq / (2.0 * i) - n_sum,
        tail_zeta: if p_sum > 0.0 { tail_zeta / p_sum } else { 0.0 },
        tail_varkappa: if n_sum > 0.0 { tail_varkappa / n_sum } else { 0.0 },
    }
}

/// `zeta` and `varkappa` from their series over the random walk `S_k` of
/// `log Lambda`, with the series terms estimated from `P_0` paths.
pub fn overshoot_constants(model: &ChangePointModel, opts: OvershootOptions) -> Result<OvershootConstants> {
    let i = model.kl_number()?;
    if !(i > 0.0) {
        return Err(Error::domain("model", "Kullback-Leibler number must be positive"));
    }
    if opts.k_max < 20 || opts.batches < 2 || opts.n_paths < opts.batches {
        return Err(Error::domain("overshoot", "need k_max >= 20, at least 2 batches and one path per batch"));
    }
    let e0_z1_sq = match model.params() {
        ModelParams::Beta { delta } => Some(beta_constants(delta)?.e0_z1_sq),
        _ => None,
    };
    let per = opts.n_paths / opts.batches;
    let batches: Vec<WalkSums> = (0..opts.batches)
        .into_par_iter()
        .map(|b| simulate_walks(model, opts.k_max, per, opts.seed, b as u64))
        .collect();
    let all: Vec<&WalkSums> = batches.iter().collect();
    let pooled = constants_from(&all, i, e0_z1_sq);
    let each: Vec<SeriesValue> = batches.iter().map(|b| constants_from(&[b], i, e0_z1_sq)).collect();
    let se = |f: &dyn Fn(&SeriesValue) -> f64| {
        let m = each.iter().map(f).sum::<f64>() / each.len() as f64;
        let var = each.iter().map(|v| (f(v) - m).powi(2)).sum::<f64>() / (each.len() - 1) as f64;
        (var / each.len() as f64).sqrt()
    };
    let mut warnings = Vec::new();
    for (name, frac) in [("zeta", pooled.tail_zeta), ("varkappa", pooled.tail_varkappa)] {
        if frac > 0.01 {
            warnings.push(format!("{name}: tail beyond k_max = {} is {:.2}% of the series", opts.k_max, 100.0 * frac));
        }
    }
    Ok(OvershootConstants {
        zeta: Estimate { value: pooled.zeta, std_error: se(&|v| v.zeta), source: Source::SeriesMonteCarlo },
        varkappa: Estimate { value: pooled.varkappa, std_error: se(&|v| v.varkappa), source: Source::SeriesMonteCarlo },
        tail_fraction_zeta: pooled.tail_zeta,
        tail_fraction_varkappa: pooled.tail_varkappa,
        warnings,
    })
}

// Perpetuity sum_{j >= 1} exp(sign * S_j) for an LR walk drawn under `regime`,
// stopped once further terms are negligible.
fn perpetuity<R: rand::Rng>(sampler: &crate::models::ObservationSampler, sign: f64, rng: &mut R) -> f64 {
    let mut walk = 0.0;
    let mut sum = 0.0;
    for _ in 0..50_000_000u64 {
        walk += sign * sampler.log_lr(rng);
        sum += walk.exp();
        if walk < -WALK_CUTOFF {
            break;
        }
    }
    sum
}

/// `C(r) = E[log(1 + r + V)]` with `V` the `P_0` perpetuity `sum exp(-S_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DelayOffset {
    Beta { delta: f64 },
    Empirical { samples: Vec<f64> },
}

impl DelayOffset {
    pub fn eval(&self, r: f64) -> Result<f64> {
        match self {
            DelayOffset::Beta { delta } => c_of_r_beta(*delta, r),
            DelayOffset::Empirical { samples } => {
                if !(r.is_finite() && r >= 0.0) {
                    return Err(Error::domain("r", format!("must be finite and nonnegative, got {r}")));
                }
                Ok(samples.iter().map(|v| (1.0 + r + v).ln()).sum::<f64>() / samples.len() as f64)
            }
        }
    }
}

/// Large-threshold constants of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticConstants {
    pub model: String,
    pub i: Estimate,
    pub zeta: Estimate,
    pub varkappa: Estimate,
    pub c_inf: Estimate,
    pub r_star: Estimate,
    /// `C(r)` at a few head starts, for reports.
    pub c_of_r_table: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    offset: Option<DelayOffset>,
}

impl AsymptoticConstants {
    pub fn c_of_r(&self, r: f64) -> Result<f64> {
        match &self.offset {
            Some(o) => o.eval(r),
            None => Err(Error::domain("c_of_r", "C(r) is unavailable on deserialized constants")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstantsOptions {
    pub overshoot: OvershootOptions,
    /// Paths for the perpetuities behind `C_inf` and `C(r)` when no closed form exists.
    pub perpetuity_paths: usize,
}

impl Default for ConstantsOptions {
    fn default() -> Self {
        ConstantsOptions { overshoot: OvershootOptions::default(), perpetuity_paths: 20_000 }
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// All constants for `model`: closed forms where known, Monte Carlo otherwise.
pub fn asymptotic_constants(model: &ChangePointModel, opts: ConstantsOptions) -> Result<AsymptoticConstants> {
    let i = model.kl_number()?;
    let mut warnings = Vec::new();
    let (zeta, varkappa) = match model.params() {
        // Increments have an exponential right tail under P_0, so the ladder
        // overshoot is exactly exponential with mean theta.
        ModelParams::ExpShift { theta } => (Estimate::exact(1.0 / (1.0 + theta)), Estimate::exact(theta)),
        _ => {
            let o = overshoot_constants(model, opts.overshoot)?;
            warnings.extend(o.warnings);
            (o.zeta, o.varkappa)
        }
    };
    let (c_inf, r_star, offset) = match model.params() {
        ModelParams::Beta { delta } => {
            let b = beta_constants(delta)?;
            (Estimate::exact(b.c_inf), Estimate::exact(head_start_beta(delta)?), DelayOffset::Beta { delta })
        }
        _ => {
            let n = opts.perpetuity_paths.max(2);
            let seed = opts.overshoot.seed;
            let pre = model.sampler(Regime::Pre);
            let post = model.sampler(Regime::Post);
            // R_inf: reversed SR sum under P_inf; V: exp(-S_j) under P_0.
            let r_inf: Vec<f64> =
                (0..n).into_par_iter().map(|j| perpetuity(&pre, 1.0, &mut stream_rng(seed ^ 0xa5a5, j as u64))).collect();
            let v: Vec<f64> =
                (0..n).into_par_iter().map(|j| perpetuity(&post, -1.0, &mut stream_rng(seed ^ 0x5a5a, j as u64))).collect();
            let logs: Vec<f64> = r_inf.iter().zip(&v).map(|(a, b)| (1.0 + a + b).ln()).collect();
            let (c, se) = mean_se(&logs);
            let offset = DelayOffset::Empirical { samples: v };
            let f = |r: f64| Ok(offset.eval(r)? - c);
            let r_star = if f(0.0)? >= 0.0 {
                0.0
            } else {
                let mut hi = 1.0;
                while f(hi)? < 0.0 {
                    hi *= 2.0;
                    if hi > 1e12 {
                        return Err(Error::Numerical("C(r) never reaches C_inf".into()));
                    }
                }
                brent(f, 0.0, hi, 1e-10 * hi, 0.0, 200)?
            };
            (
                Estimate { value: c, std_error: se, source: Source::MonteCarlo },
                Estimate { value: r_star, std_error: f64::NAN, source: Source::MonteCarlo },
                offset,
            )
        }
    };
    let mut table: Vec<f64> = vec![0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0];
    table.push(r_star.value);
    table.sort_by(f64::total_cmp);
    let c_of_r_table = table.iter().map(|&r| Ok((r, offset.eval(r)?))).collect::<Result<Vec<_>>>()?;
    Ok(AsymptoticConstants {
        model: model.name(),
        i: Estimate::exact(i),
        zeta,
        varkappa,
        c_inf,
        r_star,
        c_of_r_table,
        warnings,
        offset: Some(offset),
    })
}

/// Large-threshold approximations for SR-r (head start `r`) and SRP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxOc {
    pub threshold: f64,
    pub r: f64,
    /// `A / zeta - r`.
    pub arl_srr: f64,
    /// `A / zeta - mu_Q`, when `mu_Q` is supplied.
    pub arl_srp: Option<f64>,
    /// `(log A + varkappa - C_inf) / I`.
    pub add_inf: f64,
    /// `(log A + varkappa - C(r)) / I`.
    pub add0: f64,
    pub jp: f64,
}

pub fn approx_oc(c: &AsymptoticConstants, threshold: f64, r: f64, mu_q: Option<f64>) -> Result<ApproxOc> {
    ensure_positive("A", threshold)?;
    let (i, zeta, kappa) = (c.i.value, c.zeta.value, c.varkappa.value);
    let add_inf = (threshold.ln() + kappa - c.c_inf.value) / i;
    let add0 = (threshold.ln() + kappa - c.c_of_r(r)?) / i;
    Ok(ApproxOc {
        threshold,
        r,
        arl_srr: threshold / zeta - r,
        arl_srp: mu_q.map(|m| threshold / zeta - m),
        add_inf,
        add0,
        jp: add0.max(add_inf),
    })
}

/// Threshold `zeta (gamma + r)` predicted to give ARL `gamma` from head start `r`.
pub fn approx_threshold(c: &AsymptoticConstants, gamma: f64, r: f64) -> Result<f64> {
    ensure_positive("gamma", gamma)?;
    Ok(c.zeta.value * (gamma + r))
}
