use proptest::prelude::*;

use qcd_core::exactsolve::U2bExact;
use qcd_core::montecarlo::{mc_estimate, Metric};
use qcd_core::ocsolve::{OcConfig, OcSolver, Start};
use qcd_core::procedures::{posterior_probability, step, ProcedureSpec};
use qcd_core::{make_model, ModelParams, ProcedureKind};

fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                let h = 0.5 * (b - a);
                x[i] = a + h * (1.0 - z);
                w[i] = 2.0 * h / ((1.0 - z * z) * dp * dp);
                break;
            }
        }
    }
    (x, w)
}

fn solve_dense(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    x
}

// u(x) = 1 + int_0^A k(x, y) u(y) dy by Nystrom, evaluated at x0.
fn nystrom<K: Fn(f64, f64) -> f64>(k: K, a: f64, n: usize, x0: f64) -> f64 {
    let (x, w) = gauss_legendre(n, 0.0, a);
    let m: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(i == j) - k(x[i], x[j]) * w[j]).collect())
        .collect();
    let u = solve_dense(m, vec![1.0; n]);
    1.0 + (0..n).map(|j| k(x0, x[j]) * w[j] * u[j]).sum::<f64>()
}

fn beta1_pre(x: f64, y: f64) -> f64 {
    2.0 * (1.0 + x).powi(2) / (1.0 + x + y).powi(3)
}

fn beta1_post(x: f64, y: f64) -> f64 {
    2.0 * (1.0 + x) * y / (1.0 + x + y).powi(3)
}

#[test]
fn gauss_legendre_integrates_polynomials() {
    let (x, w) = gauss_legendre(10, 0.0, 2.0);
    let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(7)).sum();
    assert!((s - 32.0).abs() < 1e-12);
}

#[test]
fn beta_solver_matches_independent_nystrom() {
    let m = make_model(ModelParams::Beta { delta: 1.0 }).unwrap();
    let s = OcSolver::new(&m, 43.0, 1.0, OcConfig::default()).unwrap();
    for r in [0.0, 2.0, 10.0] {
        let arl = nystrom(beta1_pre, 43.0, 300, r);
        let add = nystrom(beta1_post, 43.0, 300, r);
        let got_arl = s.arl(Start::Point(r)).unwrap();
        let got_add = s.delay0(Start::Point(r)).unwrap();
        assert!((got_arl / arl - 1.0).abs() < 1e-5, "r={r}: {got_arl} vs {arl}");
        assert!((got_add / add - 1.0).abs() < 1e-5, "r={r}: {got_add} vs {add}");
    }
}

#[test]
fn u2b_solver_matches_nystrom_and_closed_form() {
    // Lambda = 2X with X uniform: kernel 1/(2(1+x)) on [0, 2(1+x)].
    let pre = |x: f64, _y: f64| 0.5 / (1.0 + x);
    let post = |x: f64, y: f64| y / (2.0 * (1.0 + x).powi(2));
    let a = 1.7;
    let e = U2bExact::new(a).unwrap();
    let m = make_model(ModelParams::U2b).unwrap();
    let s = OcSolver::new(&m, a, 1.0, OcConfig::default()).unwrap();
    for r in [0.0, 0.5, 1.2] {
        let arl = nystrom(pre, a, 40, r);
        let add = nystrom(post, a, 40, r);
        assert!((e.arl(r) / arl - 1.0).abs() < 1e-12);
        assert!((e.add0(r) / add - 1.0).abs() < 1e-12);
        assert!((s.arl(Start::Point(r)).unwrap() / arl - 1.0).abs() < 1e-6);
        assert!((s.delay0(Start::Point(r)).unwrap() / add - 1.0).abs() < 1e-6);
    }
}

#[test]
fn solver_agrees_with_simulation() {
    let m = make_model(ModelParams::Beta { delta: 1.0 }).unwrap();
    let kind = ProcedureKind::SrR { r: 2.0 };
    let s = OcSolver::for_kind(&m, &kind, 43.0, OcConfig::default()).unwrap();
    let spec = ProcedureSpec::new(kind, 43.0).unwrap();
    let arl = mc_estimate(Metric::Arl, &spec, &m, 20_000, 5).unwrap();
    let add = mc_estimate(Metric::Add { nu: 0 }, &spec, &m, 20_000, 6).unwrap();
    let add5 = mc_estimate(Metric::Add { nu: 5 }, &spec, &m, 20_000, 7).unwrap();
    assert!(arl.brackets(s.arl(Start::Point(2.0)).unwrap(), 4.0), "{arl:?}");
    assert!(add.brackets(s.delay0(Start::Point(2.0)).unwrap(), 4.0), "{add:?}");
    let curve = s.add_curve_to(Start::Point(2.0), 5).unwrap().values;
    assert!(add5.brackets(curve[5], 4.0), "{add5:?} vs {}", curve[5]);
}

fn enumerate_posterior(lr: &[f64], p: f64) -> f64 {
    let n = lr.len();
    let before: f64 = (0..n).map(|k| p * (1.0 - p).powi(k as i32) * lr[k..].iter().product::<f64>()).sum();
    before / (before + (1.0 - p).powi(n as i32))
}

proptest! {
    #[test]
    fn posterior_matches_enumeration(
        lr in prop::collection::vec(0.01f64..20.0, 1..=5),
        p in 1e-3f64..0.9,
    ) {
        let spec = ProcedureSpec::new(ProcedureKind::Shiryaev { p, pi: 0.0 }, 1e300).unwrap();
        let mut r = 0.0;
        for (i, l) in lr.iter().enumerate() {
            r = step(&spec, r, *l, i as u64 + 1).unwrap();
        }
        let got = posterior_probability(r, p).unwrap();
        prop_assert!((got - enumerate_posterior(&lr, p)).abs() < 1e-12);
    }

    #[test]
    fn larger_head_start_dominates(
        lr in prop::collection::vec(0.0f64..5.0, 1..50),
        r1 in 0.0f64..10.0,
        dr in 0.0f64..10.0,
    ) {
        let lo = ProcedureSpec::new(ProcedureKind::SrR { r: r1 }, 1e300).unwrap();
        let hi = ProcedureSpec::new(ProcedureKind::SrR { r: r1 + dr }, 1e300).unwrap();
        let (mut a, mut b) = (r1, r1 + dr);
        for (i, l) in lr.iter().enumerate() {
            a = step(&lo, a, *l, i as u64 + 1).unwrap();
            b = step(&hi, b, *l, i as u64 + 1).unwrap();
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn u2b_arl_solves_its_equation(a in 0.05f64..2.0, t in 0.0f64..1.0) {
        let e = U2bExact::new(a).unwrap();
        let x = t * a;
        let (nodes, w) = gauss_legendre(30, 0.0, a);
        let integral: f64 = nodes.iter().zip(&w).map(|(y, w)| w * e.arl(*y)).sum();
        let rhs = 1.0 + integral / (2.0 * (1.0 + x));
        prop_assert!((e.arl(x) - rhs).abs() <= 1e-10 * rhs);
    }

    #[test]
    fn beta_arl_increases_with_threshold(a in 2.0f64..60.0, bump in 1.05f64..2.0) {
        let m = make_model(ModelParams::Beta { delta: 1.0 }).unwrap();
        let cfg = OcConfig::default().with_grid(200);
        let lo = OcSolver::new(&m, a, 1.0, cfg).unwrap().arl(Start::Point(0.0)).unwrap();
        let hi = OcSolver::new(&m, a * bump, 1.0, cfg).unwrap().arl(Start::Point(0.0)).unwrap();
        prop_assert!(hi > lo);
        prop_assert!(lo >= a);
    }
}

// zeta = lim E_0[exp(-overshoot)] by running the log-LR walk past a high level.
#[test]
fn zeta_matches_direct_overshoot() {
    use qcd_core::asymptotics::{asymptotic_constants, ConstantsOptions, OvershootOptions};
    use qcd_core::rng::stream_rng;
    use qcd_core::Regime;
    let m = make_model(ModelParams::Beta { delta: 5.0 }).unwrap();
    let post = m.sampler(Regime::Post);
    let (level, n) = (25.0, 40_000u64);
    let (mut sum, mut sq) = (0.0, 0.0);
    for i in 0..n {
        let mut rng = stream_rng(99, i);
        let mut s = 0.0;
        while s < level {
            s += post.log_lr(&mut rng);
        }
        let e = (-(s - level)).exp();
        sum += e;
        sq += e * e;
    }
    let mean = sum / n as f64;
    let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    let opts = ConstantsOptions { overshoot: OvershootOptions { n_paths: 100_000, ..Default::default() }, ..Default::default() };
    let zeta = asymptotic_constants(&m, opts).unwrap().zeta.value;
    assert!((zeta - mean).abs() < 4.0 * se + 0.01 * zeta, "series {zeta} vs direct {mean} +/- {se}");
}
