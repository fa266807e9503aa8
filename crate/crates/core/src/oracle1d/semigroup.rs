//! Cross-validation of the Stein table against the semigroup integral
//! `f_φ(x) = −∫_0^∞ [P_tφ(x) − π(φ)] dt`, and growth diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SteinSolution1d;
use crate::ergodic::{steps_for_horizon, ChainRunner};
use crate::error::{invalid, Error, Result};
use crate::model::{Sde, TestFunction};
use crate::noise::{lanes, NoiseStream};
use crate::schemes::{SchemeKind, SchemeSpec};
use crate::stats::{linear_fit, mean_stderr, NeumaierSum};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemigroupSettings {
    pub tau_fine: f64,
    pub t_max: f64,
    pub n_traj: usize,
    pub probes: Vec<f64>,
    /// Steps between recorded ensemble means used for the decay fit.
    pub record_every: u64,
    pub seed: u64,
}

impl Default for SemigroupSettings {
    fn default() -> Self {
        Self {
            tau_fine: 1e-3,
            t_max: 10.0,
            n_traj: 4000,
            probes: vec![-2.0, -1.0, 0.5, 1.0, 2.0],
            record_every: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteStatus {
    Agree,
    Disagree,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub x: f64,
    /// Monte-Carlo estimate of `−∫_0^T [P_tφ(x) − π(φ)] dt`.
    pub mc_integral: f64,
    pub mc_stderr: f64,
    /// Bound on `|∫_T^∞ [P_tφ(x) − π(φ)] dt|` from the fitted decay.
    pub tail_bound: f64,
    pub decay_rate: f64,
    /// `f(x) − π(f)` from the table.
    pub table_value: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub status: RouteStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemigroupReport {
    pub status: RouteStatus,
    pub pi_phi: f64,
    pub gauge_constant: f64,
    pub probes: Vec<ProbeResult>,
}

/// Fine-step tamed Monte Carlo of the semigroup integral at each probe,
/// compared with the table value `f(x) − π(f)` within
/// `3 (stderr + tail bound)`.
pub fn verify_semigroup_route<P: Sde + ?Sized>(
    problem: &P,
    phi: &TestFunction,
    table: &SteinSolution1d,
    settings: &SemigroupSettings,
) -> Result<SemigroupReport> {
    if settings.probes.len() < 5 {
        return Err(invalid("probes", "need at least 5 probe points"));
    }
    if settings.n_traj < 2 || settings.record_every < 1 {
        return Err(invalid("n_traj", "need >= 2 trajectories and record_every >= 1"));
    }
    let scheme = SchemeSpec::new(SchemeKind::Tem, settings.tau_fine)?;
    let n_steps = steps_for_horizon(settings.t_max, settings.tau_fine)?;
    let pi = table.pi_phi;
    let mut probes = Vec::with_capacity(settings.probes.len());
    for (pi_idx, &x) in settings.probes.iter().enumerate() {
        let table_value = table.value_at(x)? - table.gauge_constant;
        let r = probe(problem, phi, pi, &scheme, n_steps, x, pi_idx as u64, settings)?;
        let tolerance = 3.0 * (r.0 + r.2);
        let gap = r.1 - table_value;
        let status = if !r.2.is_finite() {
            RouteStatus::Inconclusive
        } else if gap.abs() <= tolerance {
            RouteStatus::Agree
        } else {
            RouteStatus::Disagree
        };
        probes.push(ProbeResult {
            x,
            mc_integral: r.1,
            mc_stderr: r.0,
            tail_bound: r.2,
            decay_rate: r.3,
            table_value,
            gap,
            tolerance,
            status,
        });
    }
    let status = if probes.iter().any(|p| p.status == RouteStatus::Disagree) {
        RouteStatus::Disagree
    } else if probes.iter().any(|p| p.status == RouteStatus::Inconclusive) {
        RouteStatus::Inconclusive
    } else {
        RouteStatus::Agree
    };
    Ok(SemigroupReport {
        status,
        pi_phi: pi,
        gauge_constant: table.gauge_constant,
        probes,
    })
}

/// `(stderr, integral, tail bound, decay rate)` at one probe.
#[allow(clippy::too_many_arguments)]
fn probe<P: Sde + ?Sized>(
    problem: &P,
    phi: &TestFunction,
    pi: f64,
    scheme: &SchemeSpec,
    n_steps: u64,
    x: f64,
    probe_idx: u64,
    settings: &SemigroupSettings,
) -> Result<(f64, f64, f64, f64)> {
    let tau = settings.tau_fine;
    let every = settings.record_every;
    let first_id = lanes::ENSEMBLE + (probe_idx << 32);
    let runs: Vec<Result<(f64, Vec<f64>)>> = (0..settings.n_traj as u64)
        .into_par_iter()
        .map(|j| {
            let mut chain = ChainRunner::new(problem, *scheme, &[x], NoiseStream::new(settings.seed, first_id + j))?;
            let mut integral = NeumaierSum::new();
            let mut prev = phi.d1(0, x) - pi;
            let mut rec = vec![prev];
            while chain.k() < n_steps {
                if !chain.advance()? {
                    return Err(Error::NonFinite {
                        what: "semigroup trajectory",
                        point: chain.state().to_vec(),
                    });
                }
                let cur = phi.d1(0, chain.state()[0]) - pi;
                integral.add(0.5 * tau * (prev + cur));
                prev = cur;
                if chain.k() % every == 0 {
                    rec.push(cur);
                }
            }
            Ok((-integral.value(), rec))
        })
        .collect();
    let mut ints = Vec::with_capacity(runs.len());
    let mut recs = Vec::with_capacity(runs.len());
    for r in runs {
        let (i, rec) = r?;
        ints.push(i);
        recs.push(rec);
    }
    let (mean, se) = mean_stderr(&ints);

    // decay of |P_tφ − π| from the recorded ensemble means
    let n_rec = recs[0].len();
    let mut signal_t = Vec::new();
    let mut signal_log = Vec::new();
    let mut all_zero = true;
    for r in 0..n_rec {
        let col: Vec<f64> = recs.iter().map(|v| v[r]).collect();
        let (m, s) = mean_stderr(&col);
        if m != 0.0 || s != 0.0 {
            all_zero = false;
        }
        if m.abs() > 3.0 * s && m != 0.0 {
            signal_t.push((r as u64 * every) as f64 * tau);
            signal_log.push(m.abs().ln());
        }
    }
    if all_zero {
        return Ok((se, mean, 0.0, f64::INFINITY));
    }
    if signal_t.len() < 3 {
        return Ok((se, mean, f64::INFINITY, f64::NAN));
    }
    let fit = linear_fit(&signal_t, &signal_log, None)?;
    let lambda = -fit.slope;
    if !(lambda > 0.0) || fit.r_squared < 0.5 {
        return Ok((se, mean, f64::INFINITY, lambda));
    }
    // envelope |P_tφ − π| ≤ e^{a − λ t} with a the largest offset seen
    let a = signal_t
        .iter()
        .zip(&signal_log)
        .map(|(t, l)| l + lambda * t)
        .fold(f64::NEG_INFINITY, f64::max);
    let tail = (a - lambda * settings.t_max).exp() / lambda;
    Ok((se, mean, tail, lambda))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub order: usize,
    /// Fitted exponent of `|f^{(i)}(x)| ≈ C (1 + |x|)^{γ₁}`.
    pub exponent: f64,
    pub r_squared: f64,
    pub skipped: bool,
}

/// Fits `log|f^{(i)}|` against `log(1 + |x|)` on the outer half of the grid
/// (`|x| ≥ R/2`) for `i = 1..=4`. Orders whose table vanishes are skipped.
pub fn derivative_growth_fit(table: &SteinSolution1d) -> Vec<GrowthFit> {
    let cols = [&table.f1, &table.f2, &table.f3, &table.f4];
    cols.iter()
        .enumerate()
        .map(|(k, col)| {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (x, v) in table.grid.iter().zip(col.iter()) {
                if x.abs() >= 0.5 * table.radius && v.abs() > 1e-300 {
                    xs.push(x.abs().ln_1p());
                    ys.push(v.abs().ln());
                }
            }
            let fit = if xs.len() >= 3 { linear_fit(&xs, &ys, None).ok() } else { None };
            match fit {
                Some(f) => GrowthFit {
                    order: k + 1,
                    exponent: f.slope,
                    r_squared: f.r_squared,
                    skipped: false,
                },
                None => GrowthFit {
                    order: k + 1,
                    exponent: f64::NAN,
                    r_squared: 0.0,
                    skipped: true,
                },
            }
        })
        .collect()
}
