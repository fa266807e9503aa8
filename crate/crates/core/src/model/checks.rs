//! Sampled checks of the monotonicity, coercivity and derivative-growth
//! hypotheses. These are searches for violations, not proofs: a clean report
//! means "no violation found among `n_samples` probes".

use serde::{Deserialize, Serialize};

use super::{hs_norm_sq, norm, Sde};
use crate::error::{Error, Result};
use crate::noise::{lanes, NoiseStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    Monotonicity,
    Coercivity,
    GrowthBounds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckVerdict {
    NoViolationFound,
    ViolationFound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checked_condition: Condition,
    pub n_samples: usize,
    /// Minimum slack over all probes; negative means the inequality failed.
    pub worst_margin: f64,
    /// Probe point(s) attaining `worst_margin`.
    pub witness: Vec<Vec<f64>>,
    /// Probes whose slack is below `-1e-9 (1 + scale)`, where `scale` is the
    /// magnitude of the terms compared (absorbs rounding).
    pub violations: usize,
    pub verdict: CheckVerdict,
    /// Derivative order of the witness (growth bounds only).
    pub witness_order: Option<usize>,
}

/// Probe distribution: half the points uniform in the box `[-R, R]^d`, half
/// along uniformly random directions at radius `min(s |Cauchy|, cap)`.
/// Monotonicity pairs are independent for even indices and `y = x + 0.1 Z`
/// for odd ones, so both far-apart and near-diagonal pairs are probed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSpec {
    pub n_samples: usize,
    pub box_radius: f64,
    pub tail_scale: f64,
    pub tail_cap: f64,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            box_radius: 10.0,
            tail_scale: 10.0,
            tail_cap: 1e3,
            seed: 0,
        }
    }
}

impl SampleSpec {
    fn stream(&self, lane: u64) -> NoiseStream {
        NoiseStream::new(self.seed, lanes::SAMPLER + lane)
    }

    /// i-th probe point in ℝ^d drawn from `lane`.
    pub fn point(&self, lane: u64, i: u64, d: usize) -> Vec<f64> {
        let s = self.stream(lane);
        if i % 2 == 0 {
            (0..d)
                .map(|j| self.box_radius * (2.0 * s.uniform(i, 0, j as u32) - 1.0))
                .collect()
        } else {
            let mut dir: Vec<f64> = (0..d).map(|j| s.normal(i, 1, j as u32)).collect();
            let n = norm(&dir);
            let u = s.uniform(i, 2, 0);
            let radius = (self.tail_scale * (std::f64::consts::PI * (u - 0.5)).tan().abs())
                .min(self.tail_cap);
            dir.iter_mut().for_each(|v| *v *= radius / n);
            dir
        }
    }

    /// Random unit vector in ℝ^d.
    pub fn direction(&self, lane: u64, i: u64, which: u32, d: usize) -> Vec<f64> {
        let s = self.stream(lane);
        let mut v: Vec<f64> = (0..d).map(|j| s.normal(i, 8 + which, j as u32)).collect();
        let n = norm(&v);
        v.iter_mut().for_each(|e| *e /= n);
        v
    }

    fn pair(&self, i: u64, d: usize) -> (Vec<f64>, Vec<f64>) {
        let x = self.point(0, i, d);
        let y = if i % 2 == 0 {
            self.point(1, i + 1, d)
        } else {
            let s = self.stream(2);
            x.iter()
                .enumerate()
                .map(|(j, v)| v + 0.1 * s.normal(i, 0, j as u32))
                .collect()
        };
        (x, y)
    }
}

struct Tracker {
    condition: Condition,
    n: usize,
    worst: f64,
    witness: Vec<Vec<f64>>,
    witness_order: Option<usize>,
    violations: usize,
}

impl Tracker {
    fn new(condition: Condition) -> Self {
        Self {
            condition,
            n: 0,
            worst: f64::INFINITY,
            witness: Vec::new(),
            witness_order: None,
            violations: 0,
        }
    }

    fn record(&mut self, slack: f64, scale: f64, witness: &[&[f64]], order: Option<usize>) {
        self.n += 1;
        if slack < -1e-9 * (1.0 + scale.abs()) {
            self.violations += 1;
        }
        if slack < self.worst {
            self.worst = slack;
            self.witness = witness.iter().map(|w| w.to_vec()).collect();
            self.witness_order = order;
        }
    }

    fn finish(self) -> AssumptionReport {
        AssumptionReport {
            checked_condition: self.condition,
            n_samples: self.n,
            worst_margin: self.worst,
            witness: self.witness,
            violations: self.violations,
            verdict: if self.violations == 0 {
                CheckVerdict::NoViolationFound
            } else {
                CheckVerdict::ViolationFound
            },
            witness_order: self.witness_order,
        }
    }
}

fn ensure_finite(what: &'static str, values: &[f64], point: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what,
            point: point.to_vec(),
        })
    }
}

/// Slack of `⟨x−y, b(x)−b(y)⟩ + ((2p★−1)/2)‖σ(x)−σ(y)‖²_HS ≤ −L₁|x−y|²`.
pub fn check_monotonicity<P: Sde + ?Sized>(problem: &P, sampler: &SampleSpec) -> Result<AssumptionReport> {
    let params = problem.params();
    params.validate()?;
    let (d, m) = (problem.dim_state(), problem.dim_noise());
    let c = (2.0 * params.p_star - 1.0) / 2.0;
    let (mut bx, mut by) = (vec![0.0; d], vec![0.0; d]);
    let (mut sx, mut sy) = (vec![0.0; d * m], vec![0.0; d * m]);
    let mut t = Tracker::new(Condition::Monotonicity);
    for i in 0..sampler.n_samples as u64 {
        let (x, y) = sampler.pair(i, d);
        problem.drift(&x, &mut bx);
        problem.drift(&y, &mut by);
        problem.diffusion(&x, &mut sx);
        problem.diffusion(&y, &mut sy);
        ensure_finite("drift", &bx, &x)?;
        ensure_finite("drift", &by, &y)?;
        ensure_finite("diffusion", &sx, &x)?;
        ensure_finite("diffusion", &sy, &y)?;
        let dxy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let dist_sq: f64 = dxy.iter().map(|v| v * v).sum();
        let inner: f64 = dxy.iter().zip(bx.iter().zip(&by)).map(|(v, (a, b))| v * (a - b)).sum();
        let ds: Vec<f64> = sx.iter().zip(&sy).map(|(a, b)| a - b).collect();
        let hs = hs_norm_sq(&ds);
        let slack = -params.l1 * dist_sq - (inner + c * hs);
        let scale = params.l1 * dist_sq + inner.abs() + c * hs;
        t.record(slack, scale, &[&x, &y], None);
    }
    Ok(t.finish())
}

/// Slack of `⟨x, b(x)⟩ + (p★(2p★−1)/2)‖σ(x)‖²_HS ≤ L₂ − L₃|x|^{γ+1}`.
pub fn check_coercivity<P: Sde + ?Sized>(problem: &P, sampler: &SampleSpec) -> Result<AssumptionReport> {
    let params = problem.params();
    params.validate()?;
    let (d, m) = (problem.dim_state(), problem.dim_noise());
    let c = params.p_star * (2.0 * params.p_star - 1.0) / 2.0;
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * m];
    let mut t = Tracker::new(Condition::Coercivity);
    for i in 0..sampler.n_samples as u64 {
        let x = sampler.point(0, i, d);
        problem.drift(&x, &mut b);
        problem.diffusion(&x, &mut s);
        ensure_finite("drift", &b, &x)?;
        ensure_finite("diffusion", &s, &x)?;
        let inner: f64 = x.iter().zip(&b).map(|(a, b)| a * b).sum();
        let growth = params.l3 * norm(&x).powf(params.gamma + 1.0);
        let hs = hs_norm_sq(&s);
        let slack = params.l2 - growth - (inner + c * hs);
        let scale = params.l2 + growth + inner.abs() + c * hs;
        t.record(slack, scale, &[&x], None);
    }
    Ok(t.finish())
}

/// Worst slack of the order-`k` growth bounds on `∇^k b` and `∇^k σ_j`.
pub fn growth_margin_for_order<P: Sde + ?Sized>(
    problem: &P,
    k: usize,
    sampler: &SampleSpec,
) -> Result<AssumptionReport> {
    let mut t = Tracker::new(Condition::GrowthBounds);
    growth_order(problem, k, sampler, &mut t)?;
    Ok(t.finish())
}

fn growth_order<P: Sde + ?Sized>(problem: &P, k: usize, sampler: &SampleSpec, t: &mut Tracker) -> Result<()> {
    if k == 0 || k > problem.max_derivative_order() {
        return Err(Error::MissingDerivative {
            what: "coefficients",
            order: k,
        });
    }
    let params = problem.params();
    let (d, m) = (problem.dim_state(), problem.dim_noise());
    let (gamma, cst) = (params.gamma, params.growth_const);
    let kf = k as f64;
    let mut out = vec![0.0; d];
    for i in 0..sampler.n_samples as u64 {
        let x = sampler.point(0, i, d);
        let dirs: Vec<Vec<f64>> = (0..k).map(|w| sampler.direction(3, i, w as u32, d)).collect();
        let dir_refs: Vec<&[f64]> = dirs.iter().map(|v| v.as_slice()).collect();
        let r = norm(&x);

        problem.drift_deriv(&x, &dir_refs, &mut out)?;
        ensure_finite("drift derivative", &out, &x)?;
        let lhs = norm(&out);
        let rhs = if gamma <= kf {
            cst
        } else {
            cst * (1.0 + r.powf(gamma - kf))
        };
        t.record(rhs - lhs, rhs, &[&x], Some(k));

        let sig_exp = 2.0 * kf - 1.0;
        let rhs = if gamma <= sig_exp {
            cst
        } else {
            cst * (1.0 + r.powf(gamma - sig_exp))
        };
        for j in 0..m {
            problem.diffusion_deriv(&x, j, &dir_refs, &mut out)?;
            ensure_finite("diffusion derivative", &out, &x)?;
            let lhs: f64 = out.iter().map(|v| v * v).sum();
            t.record(rhs - lhs, rhs, &[&x], Some(k));
        }
    }
    Ok(())
}

/// Checks the derivative growth bounds for every order k = 1..4.
pub fn check_growth_bounds<P: Sde + ?Sized>(problem: &P, sampler: &SampleSpec) -> Result<AssumptionReport> {
    problem.params().validate()?;
    let mut t = Tracker::new(Condition::GrowthBounds);
    for k in 1..=4 {
        growth_order(problem, k, sampler, &mut t)?;
    }
    Ok(t.finish())
}
