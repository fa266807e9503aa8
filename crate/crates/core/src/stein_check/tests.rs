use approx::assert_relative_eq;

use super::*;
use crate::model::{gallery, AssumptionParams, Polynomial, Problem, Profile, ScalarDiffusion, ScalarSde};
use crate::oracle1d::SteinSolution1d;
use crate::schemes::step;

fn scalar(coeffs: Vec<f64>, sigma: f64) -> Problem {
    Problem::Scalar(ScalarSde::new(
        "t",
        Polynomial::new(coeffs),
        ScalarDiffusion::Constant { value: sigma },
        AssumptionParams::new(2.0, 1.0, 1.0, 0.5, 2.0, 1.0).unwrap(),
    ))
}

fn ou() -> Problem {
    gallery("ou").unwrap().problem
}

fn cubic() -> Problem {
    gallery("cubic").unwrap().problem
}

fn spec(kind: SchemeKind, tau: f64) -> SchemeSpec {
    SchemeSpec::new(kind, tau).unwrap()
}

fn square() -> TestFunction {
    TestFunction::new(Profile::Square)
}

fn stein_table(problem: &Problem, phi: &TestFunction) -> SteinSolution1d {
    let density = auto_density(problem, 256).unwrap();
    stein_solution(problem, &density, phi).unwrap()
}

/// `f + c`, for gauge checks.
struct Shifted<'a, F: SmoothFunction>(&'a F, f64);

impl<F: SmoothFunction> SmoothFunction for Shifted<'_, F> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.0.value(x)? + self.1)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.0.gradient(x, out)
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.0.hessian(x, out)
    }
}

fn probes(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let s = NoiseStream::new(99, 0);
    (0..n as u64).map(|i| lo + (hi - lo) * s.uniform(i, 0, 0)).collect()
}

#[test]
fn verdict_rules() {
    assert_eq!(Verdict::at_three_sigma(0.3, 0.1), Verdict::Pass);
    assert_eq!(Verdict::at_three_sigma(-0.31, 0.1), Verdict::Fail);
    assert_eq!(Verdict::at_three_sigma(f64::NAN, 0.1), Verdict::Inconclusive);
    assert_eq!(Verdict::at_three_sigma(0.0, 0.0), Verdict::Pass);
    assert_eq!(Verdict::combine([Verdict::Pass, Verdict::Inconclusive]), Verdict::Inconclusive);
    assert_eq!(Verdict::combine([Verdict::Inconclusive, Verdict::Fail]), Verdict::Fail);
    assert_eq!(Verdict::combine([]), Verdict::Pass);
    assert_eq!(Verdict::Fail.exit_code(), 1);
    assert_eq!(Verdict::Pass.to_string(), "PASS");
}

#[test]
fn generator_examples() {
    let ou = ou();
    assert_eq!(generator_apply(&ou, &TestFunction::constant(3.0), &[0.7]).unwrap(), 0.0);
    // 𝒜x² = −2x² + 2 for b = −x, σ = √2
    for x in [1.0, 2.0, -0.5] {
        let a = generator_apply(&ou, &square(), &[x]).unwrap();
        assert_relative_eq!(a, -2.0 * x * x + 2.0, epsilon = 1e-14);
    }
    assert!(matches!(
        generator_apply(&ou, &square(), &[1.0, 2.0]),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn generator_of_stein_solution_reproduces_centred_phi() {
    for id in ["ou", "cubic", "double_well"] {
        let p = gallery(id).unwrap().problem;
        let phi = TestFunction::tanh();
        let sol = stein_table(&p, &phi);
        let f = sol.bind(&p);
        for x in probes(200, -4.0, 4.0) {
            let a = generator_apply(&p, &f, &[x]).unwrap();
            assert!((a - (phi.d1(0, x) - sol.pi_phi)).abs() < 1e-8, "{id} x={x}");
        }
        assert!(matches!(generator_apply(&p, &f, &[1e3]), Err(Error::OutsideTable { .. })));
    }
}

#[test]
fn dynkin_zero_horizon_is_trivial() {
    let r = dynkin_check(&ou(), &square(), &[1.0], 0.0, &DynkinSettings::default()).unwrap();
    assert_eq!((r.lhs, r.rhs, r.gap), (0.0, 0.0, 0.0));
    assert_eq!(r.verdict, Verdict::Pass);
}

#[test]
fn dynkin_on_ou_matches_discrete_moments() {
    let settings = DynkinSettings {
        scheme: SchemeKind::Em,
        tau_fine: 1e-3,
        n_traj: 4000,
        seed: 5,
    };
    let x0 = 2.0;
    let r = dynkin_check(&ou(), &square(), &[x0], 1.0, &settings).unwrap();
    // EM on b = −x, σ = √2 is an AR(1) chain: E Y_n² = a^{2n}x0² + 2τ(1 − a^{2n})/(1 − a²)
    let (tau, n) = (1e-3f64, 1000);
    let a2n = (1.0 - tau).powi(2 * n);
    let exact = a2n * x0 * x0 + 2.0 * tau * (1.0 - a2n) / (1.0 - (1.0 - tau).powi(2)) - x0 * x0;
    assert!((r.lhs - exact).abs() <= 3.0 * r.lhs_stderr, "{} vs {exact}", r.lhs);
    // continuous-time value, up to the O(τ) scheme bias
    let cont = 3.0 * (-2.0f64).exp() - 3.0;
    assert!((r.lhs - cont).abs() <= 3.0 * r.lhs_stderr + 0.01);
    assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
    assert_eq!(r.n_diverged, 0);
}

#[test]
fn discrete_generator_without_noise_is_deterministic() {
    let p = scalar(vec![0.0, -1.0, 0.0, -1.0], 0.0);
    let f = square();
    let x = 1.3;
    let est = discrete_generator(&p, &spec(SchemeKind::Em, 0.1), &f, &[x], 16, 1).unwrap();
    let y1 = x + 0.1 * (-x - x * x * x);
    assert_eq!(est.mean, y1 * y1 - x * x);
    assert_eq!(est.stderr, 0.0);
}

#[test]
fn discrete_generator_bem_linear_zero_noise() {
    let p = scalar(vec![0.0, -1.0], 0.0);
    let bem = spec(SchemeKind::Bem, 0.5);
    let est = discrete_generator(&p, &bem, &square(), &[1.0], 8, 0).unwrap();
    // y = g(1) = 1.5, Ŷ_τ = g(Y_1) = g(2/3) = 1
    let y1 = step(&p, &bem, &[1.0], &[0.0]).unwrap()[0];
    let g = |v: f64| v + 0.5 * v;
    assert_relative_eq!(est.mean, g(y1).powi(2) - 2.25, epsilon = 1e-12);
    assert_relative_eq!(est.mean, -1.25, epsilon = 1e-12);
}

#[test]
fn discrete_generator_ou_em_gaussian_moment() {
    let est = discrete_generator(&ou(), &spec(SchemeKind::Em, 0.01), &square(), &[1.0], 1_000_000, 3).unwrap();
    // ((1−τ)² − 1)x² + 2τ = 1e-4
    let exact = (0.99f64.powi(2) - 1.0) + 0.02;
    assert!((est.mean - exact).abs() <= 3.0 * est.stderr, "{est:?}");
    assert!(est.stderr < 5e-4);
}

#[test]
fn em_kills_four_terms_exactly() {
    let p = cubic();
    let phi = TestFunction::tanh();
    let sol = stein_table(&p, &phi);
    let f = sol.bind(&p);
    for (i, x) in probes(100, -2.5, 2.5).into_iter().enumerate() {
        let r = remainder_terms(&p, &spec(SchemeKind::Em, 0.01), &f, &[x], 16, 4, i as u64).unwrap();
        assert_eq!(&r.r[2..], &[0.0; 4], "x={x}");
        assert_eq!(r.y, vec![x]);
    }
}

#[test]
fn bem_kills_two_terms_exactly() {
    let p = cubic();
    let sol = stein_table(&p, &TestFunction::rational_square());
    let f = sol.bind(&p);
    for (i, x) in probes(100, -2.5, 2.5).into_iter().enumerate() {
        let r = remainder_terms(&p, &spec(SchemeKind::Bem, 0.02), &f, &[x], 16, 4, i as u64).unwrap();
        assert_eq!(&r.r[4..], &[0.0; 2], "x={x}");
    }
}

#[test]
fn decomposition_identity_holds_for_all_schemes() {
    let p = cubic();
    let sol = stein_table(&p, &TestFunction::tanh());
    let f = sol.bind(&p);
    for kind in SchemeKind::ALL {
        for (i, x) in [-1.5, 0.3, 1.0, 2.2].into_iter().enumerate() {
            let r = remainder_terms(&p, &spec(kind, 0.02), &f, &[x], 20_000, DEFAULT_N_SUB, i as u64).unwrap();
            assert_eq!(r.identity_verdict(), Verdict::Pass, "{kind} x={x}: {r:?}");
            let direct = discrete_generator(&p, &spec(kind, 0.02), &f, &[x], 20_000, i as u64).unwrap();
            // same draws, same endpoint
            assert_eq!(direct.mean, r.atau_f);
            let gap = direct.mean - r.reconstructed();
            assert!(gap.abs() <= 3.0 * r.identity_stderr + 1e-12, "{kind} x={x}");
        }
    }
}

#[test]
fn tem_remainders_respect_analytic_bounds() {
    let p = cubic();
    let sol = stein_table(&p, &TestFunction::tanh());
    let f = sol.bind(&p);
    let tem = spec(SchemeKind::Tem, 0.01);
    let r = remainder_terms(&p, &tem, &f, &[1.0], 200_000, DEFAULT_N_SUB, 4).unwrap();
    let bounds = remainder_bounds(&p, &tem, &[1.0], sol.derivative_sup()).unwrap();
    for i in 0..6 {
        assert!(r.r[i].abs() <= bounds[i] + 3.0 * r.r_stderr[i], "R{}: {} vs {}", i + 1, r.r[i], bounds[i]);
    }
    let bem = spec(SchemeKind::Bem, 0.01);
    let b = remainder_bounds(&p, &bem, &[1.0], sol.derivative_sup()).unwrap();
    assert_eq!(&b[4..], &[0.0, 0.0]);
}

#[test]
fn remainder_terms_are_gauge_invariant() {
    let p = cubic();
    let sol = stein_table(&p, &TestFunction::tanh());
    let f = sol.bind(&p);
    let g = Shifted(&f, 17.25);
    let tem = spec(SchemeKind::Tem, 0.02);
    let a = remainder_terms(&p, &tem, &f, &[0.8], 5000, 8, 1).unwrap();
    let b = remainder_terms(&p, &tem, &g, &[0.8], 5000, 8, 1).unwrap();
    assert_eq!(a.r, b.r);
    assert_eq!(a.generator_term, b.generator_term);
    assert!((a.atau_f - b.atau_f).abs() < 1e-12);
}

#[test]
fn trapezoid_refinement_is_below_noise() {
    let p = cubic();
    let sol = stein_table(&p, &TestFunction::tanh());
    let f = sol.bind(&p);
    let tem = spec(SchemeKind::Tem, 0.02);
    let coarse = remainder_terms(&p, &tem, &f, &[1.2], 50_000, DEFAULT_N_SUB, 2).unwrap();
    let fine = remainder_terms(&p, &tem, &f, &[1.2], 50_000, 2 * DEFAULT_N_SUB, 2).unwrap();
    for i in 0..2 {
        let se = coarse.r_stderr[i].max(fine.r_stderr[i]);
        assert!((coarse.r[i] - fine.r[i]).abs() < 3.0 * se, "R{}", i + 1);
    }
}

#[test]
fn table_escape_is_reported() {
    let p = cubic();
    let sol = stein_table(&p, &TestFunction::tanh());
    let f = sol.bind(&p);
    let em = spec(SchemeKind::Em, 0.5);
    // one explicit step from x = 3 lands at −12, outside the table
    let err = discrete_generator(&p, &em, &f, &[3.0], 64, 0).unwrap_err();
    assert!(matches!(err, Error::TableEscape { escaped, total: 64 } if escaped > 0), "{err}");
}

#[test]
fn bad_inner_arguments() {
    let em = spec(SchemeKind::Em, 0.1);
    assert!(discrete_generator(&ou(), &em, &square(), &[0.0], 1, 0).is_err());
    assert!(remainder_terms(&ou(), &em, &square(), &[0.0], 10, 0, 0).is_err());
}

#[test]
fn representation_constant_phi_is_trivial() {
    let settings = RepresentationSettings {
        n_steps: 20_000,
        n_mc: 1000,
        ..Default::default()
    };
    let r = error_representation_check(&cubic(), &spec(SchemeKind::Tem, 0.05), &TestFunction::constant(2.0), &settings).unwrap();
    assert!(r.lhs < 1e-13, "{r:?}");
    assert_eq!(r.rhs, 0.0);
    assert_eq!(r.verdict, Verdict::Pass);
}

#[test]
fn representation_is_reproducible_and_reports_terms() {
    let settings = RepresentationSettings {
        n_steps: 200_000,
        n_mc: 20_000,
        seed: 11,
        ..Default::default()
    };
    let tem = spec(SchemeKind::Tem, 0.05);
    let a = error_representation_check(&cubic(), &tem, &TestFunction::rational_square(), &settings).unwrap();
    let b = error_representation_check(&cubic(), &tem, &TestFunction::rational_square(), &settings).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.thin, 20);
    assert_eq!(a.burn_in, 40_000);
    assert_eq!(a.n_samples, 8000);
    assert_eq!(a.n_inner, 3);
    assert!(a.r.iter().all(|v| v.is_finite()));
    assert_ne!(a.verdict, Verdict::Fail, "{a:?}");
}

#[test]
fn representation_rejects_vector_problems() {
    let p = gallery("cubic_2d").unwrap().problem;
    let err = error_representation_check(&p, &spec(SchemeKind::Tem, 0.05), &TestFunction::tanh(), &Default::default());
    assert!(err.is_err());
}
