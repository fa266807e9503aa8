//! Step-size studies of the ergodic error and log-log order fits.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::ergodic::{ergodic_average, ErgodicConfig, DEFAULT_BATCHES};
use crate::error::{invalid, Error, Result};
use crate::model::{Sde, TestFunction};
use crate::noise::lanes;
use crate::oracle1d::{auto_density, pi_with_error};
use crate::schemes::{SchemeKind, SchemeSpec};
use crate::stats::linear_fit;

/// Rows with `abs_error > SIGNAL_SIGMAS · stderr` enter the fit.
pub const SIGNAL_SIGMAS: f64 = 3.0;
/// Minimum number of signal rows for a slope.
pub const MIN_SIGNAL_ROWS: usize = 3;
const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub tau: f64,
    pub abs_error: f64,
    pub stderr: f64,
    /// Estimate of `π_τ(φ)` (NaN for rows given directly as errors).
    pub estimate: f64,
    pub n_steps: u64,
}

impl ConvergenceRow {
    pub fn new(tau: f64, abs_error: f64, stderr: f64) -> Self {
        Self {
            tau,
            abs_error,
            stderr,
            estimate: f64::NAN,
            n_steps: 0,
        }
    }

    pub fn is_signal(&self) -> bool {
        self.abs_error.is_finite() && self.abs_error > 0.0 && self.abs_error > SIGNAL_SIGMAS * self.stderr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Inverse-variance weights on `log|error|`, standard errors inflated by
    /// `√χ²_red` when the scatter exceeds the stated errors.
    Weighted,
    /// Ordinary least squares with a Student-t interval (rows without
    /// standard errors).
    Ordinary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub slope: f64,
    pub slope_se: f64,
    /// 95% confidence interval.
    pub ci: (f64, f64),
    pub intercept: f64,
    pub r_squared: f64,
    pub chi2_reduced: f64,
    pub n_rows: usize,
    pub method: FitMethod,
}

impl OrderFit {
    pub fn ci_contains(&self, v: f64) -> bool {
        self.ci.0 <= v && v <= self.ci.1
    }
}

fn t_quantile_975(dof: usize) -> Result<f64> {
    let t = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| invalid("dof", e.to_string()))?;
    Ok(t.inverse_cdf(0.975))
}

/// Fits `log|error| = a + s log τ` on the signal rows.
pub fn fit_order(rows: &[ConvergenceRow]) -> Result<OrderFit> {
    let used: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.is_signal() && r.tau > 0.0).collect();
    if used.len() < MIN_SIGNAL_ROWS {
        return Err(Error::TooFewRows {
            needed: MIN_SIGNAL_ROWS,
            got: used.len(),
        });
    }
    let x: Vec<f64> = used.iter().map(|r| r.tau.ln()).collect();
    let y: Vec<f64> = used.iter().map(|r| r.abs_error.ln()).collect();
    let dof = used.len() - 2;
    if used.iter().any(|r| r.stderr <= 0.0) {
        let fit = linear_fit(&x, &y, None)?;
        let half = t_quantile_975(dof)? * fit.slope_se;
        return Ok(OrderFit {
            slope: fit.slope,
            slope_se: fit.slope_se,
            ci: (fit.slope - half, fit.slope + half),
            intercept: fit.intercept,
            r_squared: fit.r_squared,
            chi2_reduced: fit.chi2_reduced,
            n_rows: used.len(),
            method: FitMethod::Ordinary,
        });
    }
    // delta method: sd(log e) ≈ stderr / |e|
    let w: Vec<f64> = used.iter().map(|r| (r.abs_error / r.stderr).powi(2)).collect();
    let fit = linear_fit(&x, &y, Some(&w))?;
    let (se, q) = if fit.chi2_reduced > 1.0 {
        (fit.slope_se * fit.chi2_reduced.sqrt(), t_quantile_975(dof)?)
    } else {
        (fit.slope_se, Z_975)
    };
    Ok(OrderFit {
        slope: fit.slope,
        slope_se: se,
        ci: (fit.slope - q * se, fit.slope + q * se),
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        chi2_reduced: fit.chi2_reduced,
        n_rows: used.len(),
        method: FitMethod::Weighted,
    })
}

/// Simulation budget of an error study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyBudget {
    /// Steps of the pilot run at the largest step size.
    pub pilot_steps: u64,
    /// Per-row bounds on the total number of steps (over all chains).
    pub min_steps: u64,
    pub max_steps: u64,
    /// Target ratio `|expected error| / stderr` for each row.
    pub target_ratio: f64,
    pub n_chains: usize,
    pub n_batches: usize,
    pub y0: f64,
    /// Grid density of the 1-D oracle.
    pub points_per_unit: usize,
}

impl Default for StudyBudget {
    fn default() -> Self {
        Self {
            pilot_steps: 4_000_000,
            min_steps: 1_000_000,
            max_steps: 2_000_000_000,
            target_ratio: 5.0,
            n_chains: 8,
            n_batches: DEFAULT_BATCHES,
            y0: 0.0,
            points_per_unit: 256,
        }
    }
}

impl StudyBudget {
    fn validate(&self) -> Result<()> {
        if self.n_chains < 1 {
            return Err(invalid("n_chains", "must be >= 1"));
        }
        if self.min_steps > self.max_steps {
            return Err(invalid("min_steps", "must not exceed max_steps"));
        }
        if !(self.target_ratio > 0.0) {
            return Err(invalid("target_ratio", "must be positive"));
        }
        if self.pilot_steps < self.n_chains as u64 * self.n_batches as u64 * 2 {
            return Err(invalid("pilot_steps", "too short for the requested chains and batches"));
        }
        Ok(())
    }

    /// Total steps at `tau` so that the predicted standard error is below
    /// `|e(τ)| / target_ratio`, where `e(τ) = e_0 τ / τ_0` extrapolates the
    /// pilot error linearly and the stderr scales as `(simulated time)^{-1/2}`.
    pub fn steps_for(&self, pilot: &ConvergenceRow, tau: f64) -> u64 {
        let e0 = pilot.abs_error.max(SIGNAL_SIGMAS * pilot.stderr);
        let horizon0 = pilot.n_steps as f64 * pilot.tau;
        let expected = e0 * tau / pilot.tau;
        let needed = if expected > 0.0 && pilot.stderr > 0.0 {
            horizon0 * (self.target_ratio * pilot.stderr / expected).powi(2) / tau
        } else {
            self.min_steps as f64
        };
        let steps = needed.ceil().clamp(self.min_steps as f64, self.max_steps as f64) as u64;
        // whole batches per chain
        let quantum = (self.n_chains * self.n_batches) as u64;
        steps.div_ceil(quantum) * quantum
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyStatus {
    Fitted,
    /// Fewer than three rows rise above the noise; increase the budget.
    Inconclusive,
    /// A chain diverged at some step size.
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub problem: String,
    pub scheme: SchemeKind,
    pub phi: TestFunction,
    pub seed: u64,
    pub pi: f64,
    pub pi_error: f64,
    /// Sorted by `tau`, descending.
    pub rows: Vec<ConvergenceRow>,
    pub pilot: Option<ConvergenceRow>,
    pub fit: Option<OrderFit>,
    pub status: StudyStatus,
    pub message: String,
}

impl ConvergenceReport {
    /// Builds a report from given rows (sorted here) and fits the order.
    pub fn from_rows(
        problem: impl Into<String>,
        scheme: SchemeKind,
        phi: TestFunction,
        seed: u64,
        pi: f64,
        mut rows: Vec<ConvergenceRow>,
    ) -> Self {
        rows.sort_by(|a, b| b.tau.total_cmp(&a.tau));
        let mut report = Self {
            problem: problem.into(),
            scheme,
            phi,
            seed,
            pi,
            pi_error: 0.0,
            rows,
            pilot: None,
            fit: None,
            status: StudyStatus::Inconclusive,
            message: String::new(),
        };
        report.refit();
        report
    }

    fn refit(&mut self) {
        if self.rows.iter().any(|r| !r.abs_error.is_finite()) {
            self.status = StudyStatus::Diverged;
            self.message = "a chain diverged; no slope".into();
            self.fit = None;
            return;
        }
        match fit_order(&self.rows) {
            Ok(fit) => {
                self.message = format!(
                    "slope {:.4} (95% CI {:.4} .. {:.4}) from {} rows",
                    fit.slope, fit.ci.0, fit.ci.1, fit.n_rows
                );
                self.fit = Some(fit);
                self.status = StudyStatus::Fitted;
            }
            Err(Error::TooFewRows { got, .. }) => {
                self.message = format!("inconclusive: only {got} rows above noise; increase budget");
                self.fit = None;
                self.status = StudyStatus::Inconclusive;
            }
            Err(e) => {
                self.message = format!("inconclusive: {e}");
                self.fit = None;
                self.status = StudyStatus::Inconclusive;
            }
        }
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.slope)
    }

    /// CSV with columns `tau, error, stderr, estimate, n_steps`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| invalid("csv", e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tau", "error", "stderr", "estimate", "n_steps"]).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                format!("{:e}", r.tau),
                format!("{:e}", r.abs_error),
                format!("{:e}", r.stderr),
                format!("{:e}", r.estimate),
                r.n_steps.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| invalid("csv", e.to_string()))
    }

    /// Gnuplot script drawing the rows from `csv_path` on log-log axes with
    /// the fitted line.
    pub fn gnuplot_script(&self, csv_path: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "set datafile separator ','");
        let _ = writeln!(s, "set logscale xy");
        let _ = writeln!(s, "set xlabel 'tau'");
        let _ = writeln!(s, "set ylabel '|pi_tau(phi) - pi(phi)|'");
        let _ = writeln!(s, "set key left top");
        let mut plot = format!(
            "plot '{csv_path}' skip 1 using 1:2:3 with yerrorbars title '{} {}'",
            self.problem, self.scheme
        );
        if let Some(f) = &self.fit {
            let _ = write!(
                plot,
                ", exp({:.12e}) * x**{:.12e} title 'slope {:.3}'",
                f.intercept, f.slope, f.slope
            );
        }
        let _ = writeln!(s, "{plot}");
        s
    }
}

fn estimate_row<P: Sde + ?Sized>(
    problem: &P,
    scheme: SchemeSpec,
    phi: &TestFunction,
    budget: &StudyBudget,
    total_steps: u64,
    pi: f64,
    seed: u64,
    offset: u64,
) -> Result<ConvergenceRow> {
    let per_chain = total_steps.div_ceil(budget.n_chains as u64);
    let mut cfg = ErgodicConfig::new(vec![budget.y0], per_chain);
    cfg.n_chains = budget.n_chains;
    cfg.n_batches = budget.n_batches;
    let est = ergodic_average(problem, &scheme, phi, &cfg, seed, offset)?;
    let (abs_error, stderr) = if est.diverged {
        (f64::INFINITY, f64::INFINITY)
    } else {
        ((est.phi_mean - pi).abs(), est.stderr)
    };
    Ok(ConvergenceRow {
        tau: scheme.tau,
        abs_error,
        stderr,
        estimate: est.phi_mean,
        n_steps: per_chain * budget.n_chains as u64,
    })
}

/// Ergodic error `|π̂_τ(φ) − π(φ)|` over `tau_grid` on a scalar problem
/// against the quadrature oracle, with per-row budgets sized from a pilot
/// run at the largest step size. Row `i` uses chain ids
/// `lanes::CHAIN + (i << 24) + c`; the pilot uses `lanes::PILOT + c`.
pub fn ergodic_error_study<P: Sde + ?Sized>(
    problem: &P,
    problem_name: &str,
    kind: SchemeKind,
    phi: &TestFunction,
    tau_grid: &[f64],
    budget: &StudyBudget,
    seed: u64,
) -> Result<ConvergenceReport> {
    budget.validate()?;
    if problem.dim_state() != 1 {
        return Err(invalid("problem", "error studies need a scalar problem for the oracle"));
    }
    if tau_grid.is_empty() {
        return Err(invalid("tau_grid", "must not be empty"));
    }
    let specs = tau_grid
        .iter()
        .map(|&t| SchemeSpec::new(kind, t))
        .collect::<Result<Vec<_>>>()?;
    let density = auto_density(problem, budget.points_per_unit)?;
    let (pi, pi_error) = pi_with_error(&density, phi)?;

    let largest = specs.iter().map(|s| s.tau).fold(f64::MIN, f64::max);
    let pilot_spec = SchemeSpec::new(kind, largest)?;
    let pilot = estimate_row(
        problem,
        pilot_spec,
        phi,
        budget,
        budget.pilot_steps,
        pi,
        seed,
        lanes::PILOT - lanes::CHAIN,
    )?;

    let rows: Vec<Result<ConvergenceRow>> = specs
        .par_iter()
        .enumerate()
        .map(|(i, &spec)| {
            let steps = if pilot.abs_error.is_finite() {
                budget.steps_for(&pilot, spec.tau)
            } else {
                budget.min_steps
            };
            estimate_row(problem, spec, phi, budget, steps, pi, seed, (i as u64) << 24)
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut report = ConvergenceReport::from_rows(problem_name, kind, *phi, seed, pi, rows);
    report.pi_error = pi_error;
    report.pilot = Some(pilot);
    Ok(report)
}

#[cfg(test)]
mod tests;
