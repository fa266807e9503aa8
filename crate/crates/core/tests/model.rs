use ergosde::model::{
    check_coercivity, check_growth_bounds, check_monotonicity, gallery, growth_margin_for_order, CheckVerdict,
    Polynomial, Profile, SampleSpec, ScalarDiffusion, ScalarSde,
};
use ergosde::{AssumptionParams, Error, NoiseStream, Problem, Result, Sde, TestFunction};
use proptest::prelude::*;

fn scalar(coeffs: Vec<f64>, sigma: f64, params: AssumptionParams) -> Problem {
    Problem::Scalar(ScalarSde::new("t", Polynomial::new(coeffs), ScalarDiffusion::Constant { value: sigma }, params))
}

fn params(l1: f64, p_star: f64) -> AssumptionParams {
    AssumptionParams::new(3.0, l1, 8.0, 0.5, p_star, 6.0).unwrap()
}

fn sampler(n: usize) -> SampleSpec {
    SampleSpec {
        n_samples: n,
        ..Default::default()
    }
}

/// Monotonicity slack for a scalar problem, computed from the coefficients
/// directly.
fn mono_slack(b: impl Fn(f64) -> f64, s: impl Fn(f64) -> f64, l1: f64, p_star: f64, x: f64, y: f64) -> f64 {
    let d = x - y;
    -l1 * d * d - (d * (b(x) - b(y)) + (2.0 * p_star - 1.0) / 2.0 * (s(x) - s(y)).powi(2))
}

fn grid_min(f: impl Fn(f64, f64) -> f64) -> f64 {
    let n = 600;
    let mut worst = f64::INFINITY;
    for i in 0..=n {
        for j in 0..=n {
            let x = -3.0 + 6.0 * i as f64 / n as f64;
            let y = -3.0 + 6.0 * j as f64 / n as f64;
            worst = worst.min(f(x, y));
        }
    }
    worst
}

#[test]
fn ou_monotonicity_is_tight() {
    let ou = gallery("ou").unwrap().problem;
    let r = check_monotonicity(&ou, &sampler(10_000)).unwrap();
    assert_eq!(r.verdict, CheckVerdict::NoViolationFound);
    // slack vanishes identically; only rounding remains
    assert!(r.worst_margin.abs() < 1e-9 * 1e6, "{}", r.worst_margin);
    assert_eq!(r.n_samples, 10_000);
}

#[test]
fn double_well_fails_monotonicity_like_the_grid_scan() {
    let sq2 = std::f64::consts::SQRT_2;
    let p = scalar(vec![0.0, 1.0, 0.0, -1.0], sq2, params(0.5, 2.0));
    let scan = grid_min(|x, y| mono_slack(|v| v - v * v * v, |_| sq2, 0.5, 2.0, x, y));
    assert!(scan < 0.0);
    let r = check_monotonicity(&p, &sampler(10_000)).unwrap();
    assert_eq!(r.verdict, CheckVerdict::ViolationFound);
    assert!(r.worst_margin < 0.0);
    let (x, y) = (r.witness[0][0], r.witness[1][0]);
    let at_witness = mono_slack(|v| v - v * v * v, |_| sq2, 0.5, 2.0, x, y);
    assert!((at_witness - r.worst_margin).abs() <= 1e-9 * (1.0 + at_witness.abs()));
}

#[test]
fn dissipative_cubic_passes_monotonicity_like_the_grid_scan() {
    let sq2 = std::f64::consts::SQRT_2;
    let p = scalar(vec![0.0, -1.0, 0.0, -1.0], sq2, params(1.0, 2.0));
    let scan = grid_min(|x, y| mono_slack(|v| -v - v * v * v, |_| sq2, 1.0, 2.0, x, y));
    assert!(scan >= -1e-12);
    let r = check_monotonicity(&p, &sampler(10_000)).unwrap();
    assert_eq!(r.verdict, CheckVerdict::NoViolationFound, "{r:?}");
}

#[test]
fn gallery_statuses_match_the_checkers() {
    let s = sampler(5000);
    for id in ["cubic", "cubic_2d"] {
        let p = gallery(id).unwrap().problem;
        for r in [
            check_monotonicity(&p, &s).unwrap(),
            check_coercivity(&p, &s).unwrap(),
            check_growth_bounds(&p, &s).unwrap(),
        ] {
            assert_eq!(r.verdict, CheckVerdict::NoViolationFound, "{id}: {r:?}");
        }
    }
    let dw = gallery("double_well").unwrap().problem;
    assert_eq!(check_coercivity(&dw, &s).unwrap().verdict, CheckVerdict::NoViolationFound);
    assert_eq!(check_growth_bounds(&dw, &s).unwrap().verdict, CheckVerdict::NoViolationFound);
    assert_eq!(check_monotonicity(&dw, &s).unwrap().verdict, CheckVerdict::ViolationFound);
    // linear drift cannot dominate |x|^{γ+1}
    let ou = gallery("ou").unwrap().problem;
    assert_eq!(check_coercivity(&ou, &s).unwrap().verdict, CheckVerdict::ViolationFound);
}

#[test]
fn p2_coercivity_margin_matches_closed_form() {
    // ⟨x,b⟩ + p(2p−1)/2 σ² with p = 6.5, σ² = (1 + x²)/4:
    // slack = 50 − 0.5x⁴ + x² + x⁴ − 9.75(1 + x²) = 40.25 − 8.75x² + 0.5x⁴, minimum at x² = 8.75
    let p2 = gallery("p2").unwrap().problem;
    let r = check_coercivity(&p2, &sampler(200_000)).unwrap();
    let exact_min = 40.25 - 8.75 * 8.75 + 0.5 * 8.75 * 8.75;
    assert!(r.worst_margin >= exact_min - 1e-9);
    assert!(r.worst_margin - exact_min < 0.05, "{} vs {exact_min}", r.worst_margin);
}

#[test]
fn growth_violation_reports_the_order() {
    let mut par = params(0.5, 2.0);
    par.growth_const = 0.5;
    let p = scalar(vec![0.0, -1.0, 0.0, -1.0], 1.0, par);
    let r = check_growth_bounds(&p, &sampler(2000)).unwrap();
    assert_eq!(r.verdict, CheckVerdict::ViolationFound);
    assert!(r.witness_order.is_some());
    let r3 = growth_margin_for_order(&p, 3, &sampler(2000)).unwrap();
    // b''' = −6 against C = 0.5
    assert!((r3.worst_margin - (0.5 - 6.0)).abs() < 1e-12);
    assert!(matches!(growth_margin_for_order(&p, 5, &sampler(10)), Err(Error::MissingDerivative { .. })));
}

/// A problem whose drift is NaN outside |x| ≤ 5.
struct Broken;

impl Sde for Broken {
    fn dim_state(&self) -> usize {
        1
    }
    fn dim_noise(&self) -> usize {
        1
    }
    fn params(&self) -> &AssumptionParams {
        static P: AssumptionParams = AssumptionParams {
            gamma: 2.0,
            l1: 1.0,
            l2: 1.0,
            l3: 1.0,
            p_star: 2.0,
            growth_const: 1.0,
        };
        &P
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = if x[0].abs() > 5.0 { f64::NAN } else { -x[0] };
    }
    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn drift_deriv(&self, _x: &[f64], _dirs: &[&[f64]], out: &mut [f64]) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }
    fn diffusion_deriv(&self, _x: &[f64], _c: usize, _dirs: &[&[f64]], out: &mut [f64]) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }
}

#[test]
fn non_finite_coefficients_name_the_point() {
    match check_coercivity(&Broken, &sampler(100)) {
        Err(Error::NonFinite { what, point }) => {
            assert_eq!(what, "drift");
            assert!(point[0].abs() > 5.0);
        }
        other => panic!("{other:?}"),
    }
}

fn central(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

#[test]
fn coefficient_derivatives_match_finite_differences() {
    let s = NoiseStream::new(4, 0);
    for id in ["ou", "cubic", "double_well", "cubic_2d"] {
        let p = gallery(id).unwrap().problem;
        let (d, m) = (p.dim_state(), p.dim_noise());
        for i in 0..200u64 {
            let x: Vec<f64> = (0..d).map(|j| 4.0 * (2.0 * s.uniform(i, 0, j as u32) - 1.0)).collect();
            let dirs: Vec<Vec<f64>> = (0..4)
                .map(|w| (0..d).map(|j| s.normal(i, 1 + w, j as u32)).collect())
                .collect();
            for k in 1..=4usize {
                let refs: Vec<&[f64]> = dirs[..k].iter().map(|v| v.as_slice()).collect();
                let lower = &refs[..k - 1];
                let along = |t: f64, col: Option<usize>| -> Vec<f64> {
                    let xt: Vec<f64> = x.iter().zip(&dirs[k - 1]).map(|(a, v)| a + t * v).collect();
                    let mut out = vec![0.0; d];
                    match (col, lower.is_empty()) {
                        (None, true) => p.drift(&xt, &mut out),
                        (None, false) => p.drift_deriv(&xt, lower, &mut out).unwrap(),
                        (Some(c), true) => {
                            let mut sm = vec![0.0; d * m];
                            p.diffusion(&xt, &mut sm);
                            out = (0..d).map(|a| sm[a * m + c]).collect();
                        }
                        (Some(c), false) => p.diffusion_deriv(&xt, c, lower, &mut out).unwrap(),
                    }
                    out
                };
                let mut exact = vec![0.0; d];
                p.drift_deriv(&x, &refs, &mut exact).unwrap();
                for a in 0..d {
                    let fd = central(|t| along(t, None)[a], 1e-3);
                    assert!((fd - exact[a]).abs() <= 1e-5 * (1.0 + exact[a].abs()), "{id} b k={k} {fd} vs {}", exact[a]);
                }
                for c in 0..m {
                    p.diffusion_deriv(&x, c, &refs, &mut exact).unwrap();
                    for a in 0..d {
                        let fd = central(|t| along(t, Some(c))[a], 1e-3);
                        assert!((fd - exact[a]).abs() <= 1e-5 * (1.0 + exact[a].abs()), "{id} σ k={k}");
                    }
                }
            }
        }
    }
}

#[test]
fn diffusion_has_m_columns() {
    for id in ["ou", "cubic", "double_well", "cubic_2d"] {
        let p = gallery(id).unwrap().problem;
        let mut s = vec![f64::NAN; p.dim_state() * p.dim_noise()];
        p.diffusion(&vec![0.3; p.dim_state()], &mut s);
        assert!(s.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn test_function_seminorm_bounds_sampled_derivatives() {
    for phi in [TestFunction::tanh(), TestFunction::rational_square()] {
        let mut total = 0.0;
        for k in 1..=4 {
            let sup = (0..=40_000)
                .map(|i| phi.d1(k, -20.0 + 40.0 * i as f64 / 40_000.0).abs())
                .fold(0.0, f64::max);
            total += sup;
        }
        assert!(total <= phi.seminorm_bound, "{:?}", phi.profile);
    }
    assert_eq!(TestFunction::constant(2.0).seminorm_bound, 0.0);
    assert!(TestFunction::new(Profile::Square).seminorm_bound.is_infinite());
}

#[test]
fn rate_moment_condition() {
    let p2 = gallery("cubic").unwrap().problem;
    assert!(p2.params().meets_rate_moment_condition());
    assert!(p2.params().validate_for_rate_study().is_ok());
    let dw = gallery("double_well").unwrap().problem;
    assert!(!dw.params().meets_rate_moment_condition());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn monotonicity_report_is_consistent_for_any_seed(seed in any::<u64>()) {
        let sq2 = std::f64::consts::SQRT_2;
        let p = scalar(vec![0.0, -1.0, 0.0, -1.0], sq2, params(1.0, 2.0));
        let s = SampleSpec { n_samples: 500, seed, ..Default::default() };
        let r = check_monotonicity(&p, &s).unwrap();
        prop_assert_eq!(r.verdict, CheckVerdict::NoViolationFound);
        let (x, y) = (r.witness[0][0], r.witness[1][0]);
        let direct = mono_slack(|v| -v - v * v * v, |_| sq2, 1.0, 2.0, x, y);
        prop_assert!((direct - r.worst_margin).abs() <= 1e-9 * (1.0 + direct.abs()));
        prop_assert!(r.worst_margin >= 0.0);
    }
}
