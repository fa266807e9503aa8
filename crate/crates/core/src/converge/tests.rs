use approx::assert_relative_eq;

use super::*;
use crate::model::{gallery, Profile};

fn rows(f: impl Fn(f64) -> f64, se: impl Fn(f64) -> f64) -> Vec<ConvergenceRow> {
    [0.04, 0.02, 0.01, 0.005, 0.0025]
        .into_iter()
        .map(|t| ConvergenceRow::new(t, f(t), se(t)))
        .collect()
}

#[test]
fn synthetic_square_rows_give_slope_two() {
    let fit = fit_order(&rows(|t| t * t, |_| 0.0)).unwrap();
    assert_relative_eq!(fit.slope, 2.0, epsilon = 1e-12);
    assert_eq!(fit.method, FitMethod::Ordinary);
    assert!(fit.ci.1 - fit.ci.0 < 1e-9);
    assert_relative_eq!(fit.r_squared, 1.0);
}

#[test]
fn ar1_bias_rows_give_first_order() {
    // EM on b = −x, σ = √2: π_τ(x²) − π(x²) = τ/(2 − τ)
    let fit = fit_order(&rows(|t| t / (2.0 - t), |_| 0.0)).unwrap();
    assert!((0.95..=1.05).contains(&fit.slope), "{}", fit.slope);
    assert!(fit.slope > 1.0);
}

#[test]
fn weighted_fit_uses_relative_errors() {
    // exact first order with 5% relative errors: χ² = 0, no inflation
    let fit = fit_order(&rows(|t| 3.0 * t, |t| 0.15 * t)).unwrap();
    assert_eq!(fit.method, FitMethod::Weighted);
    assert_relative_eq!(fit.slope, 1.0, epsilon = 1e-12);
    // inverse-variance SE: weights are all 400, Σw(x − x̄)² = 400·Σ(x − x̄)²
    let x: Vec<f64> = [0.04f64, 0.02, 0.01, 0.005, 0.0025].iter().map(|t| t.ln()).collect();
    let xm = x.iter().sum::<f64>() / 5.0;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    assert_relative_eq!(fit.slope_se, (1.0 / (400.0 * sxx)).sqrt(), max_relative = 1e-10);
    assert_relative_eq!(fit.ci.1 - fit.slope, 1.959_963_984_540_054 * fit.slope_se, max_relative = 1e-12);
}

#[test]
fn scatter_beyond_errors_inflates_the_interval() {
    let wobble = [1.3, 0.8, 1.25, 0.75, 1.2];
    let mut r = rows(|t| t, |t| 0.01 * t);
    for (row, w) in r.iter_mut().zip(wobble) {
        row.abs_error *= w;
    }
    let fit = fit_order(&r).unwrap();
    assert!(fit.chi2_reduced > 1.0);
    let raw = linear_fit(
        &r.iter().map(|v| v.tau.ln()).collect::<Vec<_>>(),
        &r.iter().map(|v| v.abs_error.ln()).collect::<Vec<_>>(),
        Some(&r.iter().map(|v| (v.abs_error / v.stderr).powi(2)).collect::<Vec<_>>()),
    )
    .unwrap();
    assert_relative_eq!(fit.slope_se, raw.slope_se * raw.chi2_reduced.sqrt(), max_relative = 1e-12);
    // Student t with 3 dof
    assert_relative_eq!((fit.ci.1 - fit.slope) / fit.slope_se, 3.182_446_305_284_263, max_relative = 1e-9);
}

#[test]
fn noise_rows_are_excluded() {
    let mut r = rows(|t| t, |t| 0.1 * t);
    r[3].stderr = r[3].abs_error; // below 3σ
    r[4].abs_error = 0.0;
    let fit = fit_order(&r).unwrap();
    assert_eq!(fit.n_rows, 3);
    r[2].stderr = 1.0;
    assert!(matches!(fit_order(&r), Err(Error::TooFewRows { needed: 3, got: 2 })));
}

#[test]
fn report_sorts_rows_and_flags_inconclusive() {
    let mut r = rows(|t| t, |_| 1.0);
    r.reverse();
    let rep = ConvergenceReport::from_rows("p", SchemeKind::Tem, TestFunction::tanh(), 0, 0.0, r);
    assert!(rep.rows.windows(2).all(|w| w[0].tau > w[1].tau));
    assert_eq!(rep.status, StudyStatus::Inconclusive);
    assert!(rep.message.contains("increase budget"));
    assert_eq!(rep.slope(), None);

    let mut r = rows(|t| t, |_| 0.0);
    r[0].abs_error = f64::INFINITY;
    let rep = ConvergenceReport::from_rows("p", SchemeKind::Em, TestFunction::tanh(), 0, 0.0, r);
    assert_eq!(rep.status, StudyStatus::Diverged);
}

#[test]
fn csv_and_plot_script() {
    let rep = ConvergenceReport::from_rows("p2", SchemeKind::Bem, TestFunction::tanh(), 3, 0.0, rows(|t| t, |t| 0.01 * t));
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("tau,error,stderr,estimate,n_steps"));
    assert_eq!(lines.count(), 5);
    let script = rep.gnuplot_script("rows.csv");
    assert!(script.contains("set logscale xy"));
    assert!(script.contains("'rows.csv'"));
    assert!(script.contains("slope 1.000"));
}

#[test]
fn budget_scales_as_inverse_cube() {
    let budget = StudyBudget {
        min_steps: 1,
        max_steps: u64::MAX / 4,
        n_chains: 1,
        n_batches: 1,
        ..Default::default()
    };
    let pilot = ConvergenceRow {
        tau: 0.04,
        abs_error: 0.02,
        stderr: 0.001,
        estimate: 0.0,
        n_steps: 1_000_000,
    };
    let a = budget.steps_for(&pilot, 0.02) as f64;
    let b = budget.steps_for(&pilot, 0.01) as f64;
    assert_relative_eq!(b / a, 8.0, max_relative = 1e-6);
    // at the pilot step: (5 · 0.001 / 0.02)² · 1e6 steps
    assert_relative_eq!(budget.steps_for(&pilot, 0.04) as f64, 62_500.0, max_relative = 1e-9);
    let capped = StudyBudget {
        max_steps: 1000,
        min_steps: 10,
        n_chains: 4,
        n_batches: 8,
        ..Default::default()
    };
    assert_eq!(capped.steps_for(&pilot, 0.0025), 1024);
}

#[test]
fn ou_em_study_recovers_first_order() {
    let ou = gallery("ou").unwrap().problem;
    let budget = StudyBudget {
        pilot_steps: 400_000,
        min_steps: 400_000,
        max_steps: 20_000_000,
        target_ratio: 10.0,
        n_chains: 4,
        ..Default::default()
    };
    let phi = TestFunction::new(Profile::Square);
    let grid = [0.2, 0.1, 0.05];
    let rep = ergodic_error_study(&ou, "ou", SchemeKind::Em, &phi, &grid, &budget, 7).unwrap();
    assert_eq!(rep.status, StudyStatus::Fitted, "{}", rep.message);
    assert_relative_eq!(rep.pi, 1.0, epsilon = 1e-9);
    for row in &rep.rows {
        let exact = row.tau / (2.0 - row.tau);
        assert!((row.abs_error - exact).abs() <= 4.0 * row.stderr, "{row:?}");
    }
    let fit = rep.fit.as_ref().unwrap();
    assert!((0.8..=1.2).contains(&fit.slope), "{} {:?} {:?}", fit.slope, rep.rows, rep.pilot);
    let again = ergodic_error_study(&ou, "ou", SchemeKind::Em, &phi, &grid, &budget, 7).unwrap();
    assert_eq!(rep, again);
}

#[test]
fn study_rejects_bad_input() {
    let ou = gallery("ou").unwrap().problem;
    let phi = TestFunction::tanh();
    let b = StudyBudget::default();
    assert!(ergodic_error_study(&ou, "ou", SchemeKind::Em, &phi, &[], &b, 0).is_err());
    assert!(ergodic_error_study(&ou, "ou", SchemeKind::Em, &phi, &[1.5], &b, 0).is_err());
    let p2d = gallery("cubic_2d").unwrap().problem;
    assert!(ergodic_error_study(&p2d, "c2", SchemeKind::Tem, &phi, &[0.1], &b, 0).is_err());
}
