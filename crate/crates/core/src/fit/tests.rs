use super::*;
use crate::models::{adv_reflectance, exp_reflectance};
use proptest::prelude::*;

fn series(times: &[f64], mut f: impl FnMut(f64) -> f64) -> IntensitySeries {
    let values: Vec<f64> = times.iter().map(|&t| f(t)).collect();
    IntensitySeries::from_values(0, times, &values).unwrap()
}

fn noisy(times: &[f64], f: impl Fn(f64) -> f64, sigma: f64, seed: u64) -> IntensitySeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    series(times, |t| f(t) * (1.0 + n.sample(&mut rng)))
}

fn grid(n: usize, dt: f64) -> Vec<f64> {
    (0..n).map(|i| i as f64 * dt).collect()
}

const EXP: ExpParams = ExpParams {
    a: 1.0,
    k_d: 0.2,
    c: 0.1,
};
const ADV: AdvParams = AdvParams {
    m0: 1.0,
    k1: 0.1,
    b: 0.05,
    c: 0.2,
};

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn exponential_noise_free_recovery() {
    let s = series(&grid(31, 1.0), |t| exp_reflectance(t, &EXP));
    let f = fit_exponential(&s).unwrap();
    let ModelParams::Exp(p) = f.params else {
        panic!()
    };
    assert!(
        rel(p.a, 1.0) < 1e-6 && rel(p.k_d, 0.2) < 1e-6 && rel(p.c, 0.1) < 1e-6,
        "{p:?}"
    );
    assert!((f.r_squared - 1.0).abs() < 1e-12);
    assert!(f.converged);
    assert_eq!((f.n, f.p, f.residuals.len()), (31, 3, 31));
    assert!(f.aic >= 0.0 && f.mdl >= 0.0);
}

#[test]
fn exponential_noisy_half_life() {
    let s = noisy(&grid(31, 1.0), |t| exp_reflectance(t, &EXP), 0.04, 7);
    let f = fit_exponential(&s).unwrap();
    let truth = std::f64::consts::LN_2 / 0.2;
    assert!(rel(f.half_life().unwrap(), truth) < 0.05, "{:?}", f.life);
    assert!(f.r_squared >= 0.96, "{}", f.r_squared);
}

#[test]
fn constant_series_has_no_decay() {
    let s = series(&grid(10, 1.0), |_| 5.0);
    assert!(matches!(fit_exponential(&s), Err(Error::NoDecay(_))));
    assert!(matches!(fit_advanced(&s), Err(Error::NoDecay(_))));
}

#[test]
fn too_few_points() {
    let s = series(&grid(4, 1.0), |t| exp_reflectance(t, &EXP));
    assert!(fit_exponential(&s).is_err());
    let s = series(&grid(5, 1.0), |t| exp_reflectance(t, &EXP));
    assert!(fit_exponential(&s).is_ok());
    assert!(fit_advanced(&s).is_err());
}

#[test]
fn advanced_noise_free_recovery() {
    let s = series(&grid(31, 1.0), |t| adv_reflectance(t, &ADV));
    let f = fit_advanced(&s).unwrap();
    let ModelParams::Adv(p) = f.params else {
        panic!()
    };
    for (got, want) in [(p.m0, ADV.m0), (p.k1, ADV.k1), (p.b, ADV.b), (p.c, ADV.c)] {
        assert!(rel(got, want) < 1e-4, "{p:?}");
    }
    assert!((f.r_squared - 1.0).abs() < 1e-10);
    assert!(f.life.half_life.is_none());
    assert_eq!(f.p, 4);
}

#[test]
fn advanced_reduces_to_exponential() {
    let s = series(&grid(31, 1.0), |t| exp_reflectance(t, &EXP));
    let (e, a) = fit_both(&s, &FitOptions::default()).unwrap();
    let ModelParams::Adv(p) = a.params else {
        panic!()
    };
    assert!(p.b <= 1e-3 * p.k1 * p.m0.cbrt(), "{p:?}");
    let rms = (s
        .times()
        .iter()
        .map(|&t| ((a.predict(t) - e.predict(t)) / e.predict(t)).powi(2))
        .sum::<f64>()
        / s.len() as f64)
        .sqrt();
    assert!(rms < 1e-3);
}

#[test]
fn advanced_noisy_fit_quality() {
    let s = noisy(&grid(31, 1.0), |t| adv_reflectance(t, &ADV), 0.02, 3);
    let f = fit_advanced(&s).unwrap();
    assert!(f.r_squared >= 0.99, "{}", f.r_squared);
}

#[test]
fn advanced_beats_exponential_on_advanced_data() {
    let s = noisy(&grid(31, 1.0), |t| adv_reflectance(t, &ADV), 0.02, 11);
    let (e, a) = fit_both(&s, &FitOptions::default()).unwrap();
    assert!(
        a.aic < e.aic && a.mdl < e.mdl,
        "{} {} / {} {}",
        a.aic,
        e.aic,
        a.mdl,
        e.mdl
    );
    assert_eq!(select_model(&[e, a.clone()]).unwrap(), &a);
}

#[test]
fn relative_weighting_is_available() {
    let s = noisy(&grid(31, 1.0), |t| exp_reflectance(t, &EXP), 0.04, 7);
    let opts = FitOptions {
        weighting: Weighting::Relative,
        ..Default::default()
    };
    let f = fit_exponential_with(&s, &opts).unwrap();
    assert_eq!(f.weighting, Weighting::Relative);
    assert!(rel(f.half_life().unwrap(), std::f64::consts::LN_2 / 0.2) < 0.1);
}

#[test]
fn metrics_examples() {
    let m = model_metrics(&[0.0; 10], 3, 10).unwrap();
    assert_eq!((m.aic, m.mdl), (0.0, 0.0));
    let m = metrics_with_sigma2(&[0.1; 10], 3, 0.01);
    assert!((m.aic - 0.16).abs() < 1e-12);
    assert!((m.mdl - (0.1 + 1.5 * 10f64.ln() * 0.01)).abs() < 1e-12);
    assert!((m.mdl - 0.134539).abs() < 1e-6);
    assert!(matches!(
        model_metrics(&[0.1; 3], 3, 3),
        Err(Error::DegreesOfFreedom { n: 3, p: 3 })
    ));
}

#[test]
fn r_squared_examples() {
    let y = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
    assert_eq!(r_squared(&y, &[2.5; 4]).unwrap(), 0.0);
    assert!(r_squared(&y, &[4.0, 3.0, 2.0, 1.0]).unwrap() < 0.0);
    assert!(matches!(
        r_squared(&[2.0; 3], &[1.0; 3]),
        Err(Error::UndefinedRSquared)
    ));
}

fn stub(p: usize, aic: f64, mdl: f64, n: usize) -> FitResult {
    let params = if p == 3 {
        ModelParams::Exp(EXP)
    } else {
        ModelParams::Adv(ADV)
    };
    FitResult {
        model: params.kind(),
        params,
        residuals: vec![0.0; n],
        ssr: 0.0,
        r_squared: 1.0,
        aic,
        mdl,
        sigma2: 0.0,
        n,
        p,
        life: params.life(DEFAULT_THETA).unwrap(),
        converged: true,
        iterations: 1,
        starts: 1,
        seed: 0,
        weighting: Weighting::Uniform,
    }
}

#[test]
fn selection_rules() {
    let pick = |fits: &[FitResult]| select_model(fits).unwrap().aic;
    assert_eq!(
        pick(&[stub(3, 0.14, 0.1, 10), stub(4, 0.026, 0.02, 10)]),
        0.026
    );
    let tie = [stub(4, 0.05, 0.01, 10), stub(3, 0.05, 0.04, 10)];
    assert_eq!(select_model(&tie).unwrap().p, 3);
    let single = [stub(4, 0.3, 0.2, 10)];
    assert_eq!(select_model(&single).unwrap(), &single[0]);
    assert!(matches!(
        select_model(&[stub(3, 0.1, 0.1, 10), stub(4, 0.1, 0.1, 11)]),
        Err(Error::Comparison(_))
    ));
    assert!(select_model(&[]).is_err());
}

#[test]
fn fit_result_json_has_model_tag() {
    let s = series(&grid(31, 1.0), |t| exp_reflectance(t, &EXP));
    let json = fit_exponential(&s).unwrap().to_json().unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["model"], "exp");
    assert_eq!(v["params"]["model"], "exp");
    assert!(v["life"]["half_life"].as_f64().is_some());
    let back: FitResult = serde_json::from_str(&json).unwrap();
    assert_eq!(back.model, ModelKind::Exp);
}

fn fd_check<M: Model>(m: &M, p: &[f64], t: f64) -> std::result::Result<(), TestCaseError> {
    let mut g = vec![0.0; m.dim()];
    m.gradient(p, t, &mut g);
    for j in 0..p.len() {
        let h = 1e-6 * p[j].abs().max(1e-3);
        let (mut hi, mut lo) = (p.to_vec(), p.to_vec());
        hi[j] += h;
        lo[j] -= h;
        let fd = (m.value(&hi, t) - m.value(&lo, t)) / (2.0 * h);
        let roundoff = 1e-14 * m.value(p, t).abs() / h;
        let tol = 1e-5 * fd.abs().max(g[j].abs()) + roundoff;
        prop_assert!(
            (fd - g[j]).abs() <= tol,
            "param {j}: fd {fd} vs analytic {}",
            g[j]
        );
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_jacobian_matches_finite_differences(a in 0.1f64..10.0, k in 0.01f64..1.0, c in 0.0f64..2.0, t in 0.0f64..30.0) {
        fd_check(&ExpModel, &[a, k, c], t)?;
    }

    #[test]
    fn adv_jacobian_matches_finite_differences(m0 in 0.2f64..5.0, k1 in 0.0f64..0.5, bf in 0.0f64..1.0, c in 0.0f64..1.0, tf in 0.0f64..0.95) {
        let b = bf * 0.5 * m0.cbrt();
        let p = AdvParams { m0, k1: k1.max(1e-3), b: b.max(1e-4), c };
        let t = tf * p.extinction_time().unwrap();
        fd_check(&AdvModel, &[p.m0, p.k1, p.b, p.c], t)?;
    }

    #[test]
    fn refit_is_idempotent(k in 0.05f64..0.5, c in 0.0f64..0.5, seed in 0u64..1000) {
        let s = noisy(&grid(30, 10.0 / k / 30.0), |t| exp_reflectance(t, &ExpParams { a: 1.0, k_d: k, c }), 0.04, seed);
        let f = fit_exponential(&s).unwrap();
        let g = refine(&s, &f.params, &FitOptions::default()).unwrap();
        let (ModelParams::Exp(p), ModelParams::Exp(q)) = (f.params, g.params) else { panic!() };
        for (x, y) in [(p.a, q.a), (p.k_d, q.k_d), (p.c, q.c)] {
            prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1e-12), "{p:?} {q:?}");
        }
    }

    #[test]
    fn fits_are_scale_equivariant(lambda in 0.01f64..100.0, seed in 0u64..1000) {
        let s = noisy(&grid(30, 1.0), |t| adv_reflectance(t, &ADV), 0.02, seed);
        let vals: Vec<f64> = s.values().iter().map(|v| v * lambda).collect();
        let s2 = IntensitySeries::from_values(0, &s.times(), &vals).unwrap();
        let (e1, a1) = fit_both(&s, &FitOptions::default()).unwrap();
        let (e2, a2) = fit_both(&s2, &FitOptions::default()).unwrap();
        let (ModelParams::Exp(p), ModelParams::Exp(q)) = (e1.params, e2.params) else { panic!() };
        prop_assert!(rel(q.a, p.a * lambda) < 1e-6);
        prop_assert!(rel(q.k_d, p.k_d) < 1e-6);
        prop_assert!((q.c - p.c * lambda).abs() < 1e-6 * q.a);
        prop_assert!(rel(e2.half_life().unwrap(), e1.half_life().unwrap()) < 1e-6);
        prop_assert!(rel(a2.total_life(), a1.total_life()) < 1e-4, "{:?} {:?}", a1.params, a2.params);
    }

    #[test]
    fn advanced_never_fits_worse(k in 0.05f64..0.5, bf in 0.0f64..1.0, seed in 0u64..1000) {
        let p = AdvParams { m0: 1.0, k1: k, b: bf * k, c: 0.1 };
        let s = noisy(&grid(30, 1.0), |t| adv_reflectance(t, &p), 0.03, seed);
        let (e, a) = fit_both(&s, &FitOptions::default()).unwrap();
        prop_assert!(a.ssr <= e.ssr * (1.0 + 1e-9) + 1e-15);
    }
}
