//! Monte-Carlo checks of the generator identities: Dynkin's formula, the
//! discrete generator `A_τ`, its six-term remainder decomposition and the
//! ergodic error representation.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ergodic::{default_burn_in, steps_for_horizon, ChainRunner};
use crate::error::{invalid, Error, Result};
use crate::model::{hs_norm_sq, norm, Sde, SmoothFunction, TestFunction};
use crate::noise::{lanes, NoiseStream};
use crate::oracle1d::{auto_density, pi_with_error, stein_solution};
use crate::schemes::{modification_maps, ModificationMaps, SchemeKind, SchemeSpec};
use crate::stats::{mean_stderr, BatchMeans, Moments};

/// Trapezoid panels for the time integrals in `R_1` and `R_2`.
pub const DEFAULT_N_SUB: usize = 16;
/// Inner draws handled by one parallel work item.
const DRAW_BLOCK: u64 = 1024;
/// Chain samples handled by one parallel work item.
const SAMPLE_BLOCK: usize = 256;
/// Chain samples buffered before their inner estimates are reduced.
const SAMPLE_CHUNK: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    /// `Pass` iff `|gap| ≤ 3·err`; non-finite inputs are inconclusive.
    pub fn at_three_sigma(gap: f64, err: f64) -> Self {
        if !gap.is_finite() || !err.is_finite() {
            Verdict::Inconclusive
        } else if gap.abs() <= 3.0 * err {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    /// Process exit code: 0 pass, 1 fail, 2 inconclusive.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
            Verdict::Inconclusive => 2,
        }
    }

    /// The worst of several verdicts (fail > inconclusive > pass).
    pub fn combine(verdicts: impl IntoIterator<Item = Verdict>) -> Verdict {
        verdicts.into_iter().fold(Verdict::Pass, |acc, v| match (acc, v) {
            (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
            (Verdict::Inconclusive, _) | (_, Verdict::Inconclusive) => Verdict::Inconclusive,
            _ => Verdict::Pass,
        })
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

/// `Σ_j ½ ∇²f(σ_j, σ_j)` for a row-major `d × d` Hessian and `d × m` σ.
#[inline]
fn half_trace(hess: &[f64], s: &[f64], d: usize, m: usize) -> f64 {
    let mut acc = 0.0;
    for j in 0..m {
        for a in 0..d {
            let sa = s[a * m + j];
            if sa == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for b in 0..d {
                row += hess[a * d + b] * s[b * m + j];
            }
            acc += sa * row;
        }
    }
    0.5 * acc
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Value, gradient and Hessian of `f` at one point.
#[derive(Clone, Debug)]
struct Jet {
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl Jet {
    fn new(d: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; d],
            hess: vec![0.0; d * d],
        }
    }

    fn eval<F: SmoothFunction + ?Sized>(&mut self, f: &F, x: &[f64]) -> Result<()> {
        self.value = f.jet2(x, &mut self.grad, &mut self.hess)?;
        Ok(())
    }
}

fn check_state<P: Sde + ?Sized>(problem: &P, x: &[f64]) -> Result<()> {
    if x.len() != problem.dim_state() {
        return Err(Error::Dimension {
            what: "state",
            expected: problem.dim_state(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Generator `𝒜f(x) = ∇f(x)·b(x) + ½ Σ_j ∇²f(x)(σ_j(x), σ_j(x))`.
pub fn generator_apply<P, F>(problem: &P, f: &F, x: &[f64]) -> Result<f64>
where
    P: Sde + ?Sized,
    F: SmoothFunction + ?Sized,
{
    check_state(problem, x)?;
    let (d, m) = (problem.dim_state(), problem.dim_noise());
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * m];
    problem.drift(x, &mut b);
    problem.diffusion(x, &mut s);
    let mut jet = Jet::new(d);
    jet.eval(f, x)?;
    Ok(dot(&jet.grad, &b) + half_trace(&jet.hess, &s, d, m))
}

/// Reusable buffers for repeated generator evaluations.
struct GeneratorWork {
    d: usize,
    m: usize,
    b: Vec<f64>,
    s: Vec<f64>,
    jet: Jet,
}

impl GeneratorWork {
    fn new(d: usize, m: usize) -> Self {
        Self {
            d,
            m,
            b: vec![0.0; d],
            s: vec![0.0; d * m],
            jet: Jet::new(d),
        }
    }

    /// Returns `(f(x), 𝒜f(x))`.
    fn apply<P: Sde + ?Sized, F: SmoothFunction + ?Sized>(&mut self, problem: &P, f: &F, x: &[f64]) -> Result<(f64, f64)> {
        problem.drift(x, &mut self.b);
        problem.diffusion(x, &mut self.s);
        self.jet.eval(f, x)?;
        let a = dot(&self.jet.grad, &self.b) + half_trace(&self.jet.hess, &self.s, self.d, self.m);
        Ok((self.jet.value, a))
    }
}

/// Settings of the fine-grid ensemble behind [`dynkin_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynkinSettings {
    /// Scheme used on the fine grid (EM for Lipschitz problems, TEM otherwise).
    pub scheme: SchemeKind,
    pub tau_fine: f64,
    pub n_traj: usize,
    pub seed: u64,
}

impl Default for DynkinSettings {
    fn default() -> Self {
        Self {
            scheme: SchemeKind::Tem,
            tau_fine: 1e-3,
            n_traj: 10_000,
            seed: 0,
        }
    }
}

/// Both sides of `E[f(X_T) − f(X_0)] = ∫_0^T E 𝒜f(X_s) ds` on one ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynkinReport {
    pub t: f64,
    pub tau_fine: f64,
    pub scheme: SchemeKind,
    pub n_traj: usize,
    pub n_diverged: usize,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    /// `lhs − rhs`, with the standard error of the paired difference.
    pub gap: f64,
    pub gap_stderr: f64,
    pub verdict: Verdict,
}

/// Dynkin identity from `x0` over `[0, t]`: the left side from endpoint
/// values, the right side by the trapezoid rule on the fine grid, both on
/// the same trajectories (ids `lanes::ENSEMBLE + i`). Divergent trajectories
/// are excluded and make the verdict inconclusive.
pub fn dynkin_check<P, F>(problem: &P, f: &F, x0: &[f64], t: f64, settings: &DynkinSettings) -> Result<DynkinReport>
where
    P: Sde + ?Sized,
    F: SmoothFunction + ?Sized,
{
    check_state(problem, x0)?;
    if settings.n_traj < 2 {
        return Err(invalid("n_traj", "must be >= 2"));
    }
    let scheme = SchemeSpec::new(settings.scheme, settings.tau_fine)?;
    let n_steps = steps_for_horizon(t, scheme.tau)?;
    let mut report = DynkinReport {
        t,
        tau_fine: scheme.tau,
        scheme: scheme.kind,
        n_traj: settings.n_traj,
        n_diverged: 0,
        lhs: 0.0,
        lhs_stderr: 0.0,
        rhs: 0.0,
        rhs_stderr: 0.0,
        gap: 0.0,
        gap_stderr: 0.0,
        verdict: Verdict::Pass,
    };
    if n_steps == 0 {
        return Ok(report);
    }
    let (d, m) = (problem.dim_state(), problem.dim_noise());
    let tau = scheme.tau;
    let per_traj: Vec<Result<Option<(f64, f64)>>> = (0..settings.n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let stream = NoiseStream::new(settings.seed, lanes::ENSEMBLE + i);
            let mut chain = ChainRunner::new(problem, scheme, x0, stream)?;
            let mut work = GeneratorWork::new(d, m);
            let (f0, a0) = work.apply(problem, f, x0)?;
            let mut integral = 0.5 * a0;
            let mut last = (f0, a0);
            while chain.k() < n_steps {
                if !chain.advance()? {
                    return Ok(None);
                }
                last = work.apply(problem, f, chain.state())?;
                if chain.k() < n_steps {
                    integral += last.1;
                }
            }
            integral += 0.5 * last.1;
            Ok(Some((last.0 - f0, integral * tau)))
        })
        .collect();
    let (mut lhs, mut rhs, mut gap) = (Moments::new(), Moments::new(), Moments::new());
    for r in per_traj {
        match r? {
            Some((l, a)) => {
                lhs.push(l);
                rhs.push(a);
                gap.push(l - a);
            }
            None => report.n_diverged += 1,
        }
    }
    report.lhs = lhs.mean();
    report.lhs_stderr = lhs.stderr();
    report.rhs = rhs.mean();
    report.rhs_stderr = rhs.stderr();
    report.gap = gap.mean();
    report.gap_stderr = gap.stderr();
    report.verdict = if report.n_diverged > 0 {
        Verdict::Inconclusive
    } else {
        Verdict::at_three_sigma(report.gap, report.gap_stderr)
    };
    Ok(report)
}

/// Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

/// MC estimates of `E R_1 … E R_6` at a chain state `x` with `y = g_τ(x)`,
/// together with the direct estimate of `A_τf(y)` and the paired residual of
/// `A_τf(y) = τ𝒜f(x) + Σ_i E R_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderEstimates {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub tau: f64,
    pub r: [f64; 6],
    pub r_stderr: [f64; 6],
    pub n_mc: u64,
    pub n_sub: usize,
    pub atau_f: f64,
    pub atau_stderr: f64,
    /// `τ𝒜f(x)`.
    pub generator_term: f64,
    /// Mean of `[f(Ŷ_τ) − f(y)] − τ𝒜f(x) − Σ_i R_i` over the draws.
    pub identity_gap: f64,
    pub identity_stderr: f64,
}

impl RemainderEstimates {
    pub fn identity_verdict(&self) -> Verdict {
        Verdict::at_three_sigma(self.identity_gap, self.identity_stderr)
    }

    /// `τ𝒜f(x) + Σ_i E R_i`.
    pub fn reconstructed(&self) -> f64 {
        self.generator_term + self.r.iter().sum::<f64>()
    }
}

/// Frozen data of one coarse step started at the chain state `x`, plus the
/// deterministic remainder terms.
struct StepData {
    d: usize,
    m: usize,
    tau: f64,
    y: Vec<f64>,
    bh: Vec<f64>,
    sh: Vec<f64>,
    f_y: f64,
    grad_y: Vec<f64>,
    trace_y: f64,
    /// `τ𝒜f(x)`.
    generator_term: f64,
    /// `R_3 … R_6`.
    fixed: [f64; 4],
}

impl StepData {
    fn new<P, F>(maps: &ModificationMaps<'_, P>, f: &F, x: &[f64]) -> Result<Self>
    where
        P: Sde + ?Sized,
        F: SmoothFunction + ?Sized,
    {
        let problem = maps.problem();
        let (d, m) = (problem.dim_state(), problem.dim_noise());
        let tau = maps.scheme().tau;
        let mut y = vec![0.0; d];
        let mut bh = vec![0.0; d];
        let mut sh = vec![0.0; d * m];
        maps.frozen(x, &mut y, &mut bh, &mut sh);
        let mut bx = vec![0.0; d];
        let mut sx = vec![0.0; d * m];
        problem.drift(x, &mut bx);
        problem.diffusion(x, &mut sx);
        let mut jx = Jet::new(d);
        jx.eval(f, x)?;
        let mut jy = Jet::new(d);
        jy.eval(f, &y)?;
        let grad_diff: Vec<f64> = jy.grad.iter().zip(&jx.grad).map(|(a, b)| a - b).collect();
        let drift_diff: Vec<f64> = bh.iter().zip(&bx).map(|(a, b)| a - b).collect();
        let trace_y = half_trace(&jy.hess, &sh, d, m);
        let trace_x_hat = half_trace(&jx.hess, &sh, d, m);
        let trace_x = half_trace(&jx.hess, &sx, d, m);
        let fixed = [
            dot(&grad_diff, &bh) * tau,
            (trace_y - trace_x_hat) * tau,
            dot(&jx.grad, &drift_diff) * tau,
            (trace_x_hat - trace_x) * tau,
        ];
        let generator_term = (dot(&jx.grad, &bx) + trace_x) * tau;
        Ok(Self {
            d,
            m,
            tau,
            y,
            bh,
            sh,
            f_y: jy.value,
            grad_y: jy.grad,
            trace_y,
            generator_term,
            fixed,
        })
    }
}

/// Per-draw accumulators: `A_τ` sample, `R_1`, `R_2`, identity residual.
#[derive(Clone, Copy, Debug, Default)]
struct DrawStats {
    a: Moments,
    r1: Moments,
    r2: Moments,
    resid: Moments,
    escaped: u64,
}

impl DrawStats {
    fn merge(&mut self, o: &DrawStats) {
        self.a.merge(&o.a);
        self.r1.merge(&o.r1);
        self.r2.merge(&o.r2);
        self.resid.merge(&o.resid);
        self.escaped += o.escaped;
    }
}

/// Simulates draws `j ∈ [j0, j1)` of the interpolated path from `data`,
/// with the coarse increment of draw `j` at index `j` of `stream` and a
/// Brownian bridge through it for the substeps.
fn run_draws<F: SmoothFunction + ?Sized>(
    data: &StepData,
    f: &F,
    stream: &NoiseStream,
    j0: u64,
    j1: u64,
    n_sub: usize,
) -> Result<DrawStats> {
    let (d, m, tau) = (data.d, data.m, data.tau);
    let sqrt_tau = tau.sqrt();
    let h = tau / n_sub as f64;
    let fixed_sum: f64 = data.fixed.iter().sum();
    let mut dw = vec![0.0; m];
    let mut w = vec![0.0; (n_sub + 1) * m];
    let mut point = vec![0.0; d];
    let mut jet = Jet::new(d);
    let mut stats = DrawStats::default();
    'draws: for j in j0..j1 {
        stream.increment_scaled(j, sqrt_tau, &mut dw);
        if n_sub > 1 {
            stream.fill_bridge(j, &dw, &mut w, n_sub, tau);
        } else {
            w[m..2 * m].copy_from_slice(&dw);
        }
        let (mut i1, mut i2) = (0.0, 0.0);
        for i in 1..=n_sub {
            let s = if i == n_sub { tau } else { h * i as f64 };
            let wi = &w[i * m..(i + 1) * m];
            for a in 0..d {
                let mut acc = data.y[a] + s * data.bh[a];
                for k in 0..m {
                    acc += data.sh[a * m + k] * wi[k];
                }
                point[a] = acc;
            }
            match jet.eval(f, &point) {
                Ok(()) => {}
                Err(Error::OutsideTable { .. }) => {
                    stats.escaped += 1;
                    continue 'draws;
                }
                Err(e) => return Err(e),
            }
            let mut g1 = 0.0;
            for a in 0..d {
                g1 += (jet.grad[a] - data.grad_y[a]) * data.bh[a];
            }
            let g2 = half_trace(&jet.hess, &data.sh, d, m) - data.trace_y;
            let wgt = if i == n_sub { 0.5 } else { 1.0 };
            i1 += wgt * g1;
            i2 += wgt * g2;
        }
        let a = jet.value - data.f_y;
        let (r1, r2) = (h * i1, h * i2);
        stats.a.push(a);
        stats.r1.push(r1);
        stats.r2.push(r2);
        stats.resid.push(a - data.generator_term - r1 - r2 - fixed_sum);
    }
    Ok(stats)
}

/// Endpoint-only draws `j ∈ [j0, j1)`: samples of `f(Ŷ_τ) − f(y)`, which
/// need only values of `f`.
fn run_endpoints<F: SmoothFunction + ?Sized>(
    data: &StepData,
    f: &F,
    stream: &NoiseStream,
    j0: u64,
    j1: u64,
) -> Result<(Moments, u64)> {
    let (d, m, tau) = (data.d, data.m, data.tau);
    let sqrt_tau = tau.sqrt();
    let mut dw = vec![0.0; m];
    let mut point = vec![0.0; d];
    let mut acc = Moments::new();
    let mut escaped = 0;
    for j in j0..j1 {
        stream.increment_scaled(j, sqrt_tau, &mut dw);
        for a in 0..d {
            let mut v = data.y[a] + tau * data.bh[a];
            for k in 0..m {
                v += data.sh[a * m + k] * dw[k];
            }
            point[a] = v;
        }
        match f.value(&point) {
            Ok(v) => acc.push(v - data.f_y),
            Err(Error::OutsideTable { .. }) => escaped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((acc, escaped))
}

/// Draws `[0, n_mc)` split into fixed blocks and reduced in block order.
fn run_draws_parallel<F: SmoothFunction + ?Sized>(
    data: &StepData,
    f: &F,
    stream: &NoiseStream,
    n_mc: u64,
    n_sub: usize,
) -> Result<DrawStats> {
    let n_blocks = n_mc.div_ceil(DRAW_BLOCK);
    let blocks: Vec<Result<DrawStats>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| run_draws(data, f, stream, b * DRAW_BLOCK, ((b + 1) * DRAW_BLOCK).min(n_mc), n_sub))
        .collect();
    let mut total = DrawStats::default();
    for b in blocks {
        total.merge(&b?);
    }
    if total.escaped > 0 {
        return Err(Error::TableEscape {
            escaped: total.escaped as usize,
            total: n_mc as usize,
        });
    }
    Ok(total)
}

fn validate_mc(n_mc: u64, n_sub: usize) -> Result<()> {
    if n_mc < 2 {
        return Err(invalid("n_mc", "must be >= 2"));
    }
    if n_sub < 1 {
        return Err(invalid("n_sub", "must be >= 1"));
    }
    Ok(())
}

/// `A_τf(y) = E[f(Ŷ_τ) − f(y)]` at `y = g_τ(x)` for the step started at the
/// chain state `x`, from `n_mc` draws on trajectory id `lanes::INNER_MC`.
/// For EM, TEM and PEM away from the projection ball, `y = x`.
pub fn discrete_generator<P, F>(
    problem: &P,
    scheme: &SchemeSpec,
    f: &F,
    x: &[f64],
    n_mc: u64,
    seed: u64,
) -> Result<MeanEstimate>
where
    P: Sde + ?Sized,
    F: SmoothFunction + ?Sized,
{
    check_state(problem, x)?;
    validate_mc(n_mc, 1)?;
    let maps = modification_maps(problem, *scheme);
    let data = StepData::new(&maps, f, x)?;
    let stream = NoiseStream::new(seed, lanes::INNER_MC);
    let stats = run_draws_parallel(&data, f, &stream, n_mc, 1)?;
    Ok(MeanEstimate {
        mean: stats.a.mean(),
        stderr: stats.a.stderr(),
        n: n_mc,
    })
}

/// Estimates `E R_1 … E R_6` at the chain state `x` (evaluated at
/// `y = g_τ(x)`), with `R_1`, `R_2` by the trapezoid rule over `n_sub`
/// panels of the interpolated path and `R_3 … R_6` exactly. Uses the same
/// draws as [`discrete_generator`] for equal `seed`, so the direct and
/// reconstructed `A_τf(y)` are paired.
pub fn remainder_terms<P, F>(
    problem: &P,
    scheme: &SchemeSpec,
    f: &F,
    x: &[f64],
    n_mc: u64,
    n_sub: usize,
    seed: u64,
) -> Result<RemainderEstimates>
where
    P: Sde + ?Sized,
    F: SmoothFunction + ?Sized,
{
    check_state(problem, x)?;
    validate_mc(n_mc, n_sub)?;
    let maps = modification_maps(problem, *scheme);
    let data = StepData::new(&maps, f, x)?;
    let stream = NoiseStream::new(seed, lanes::INNER_MC);
    let stats = run_draws_parallel(&data, f, &stream, n_mc, n_sub)?;
    let [r3, r4, r5, r6] = data.fixed;
    Ok(RemainderEstimates {
        x: x.to_vec(),
        y: data.y.clone(),
        tau: data.tau,
        r: [stats.r1.mean(), stats.r2.mean(), r3, r4, r5, r6],
        r_stderr: [stats.r1.stderr(), stats.r2.stderr(), 0.0, 0.0, 0.0, 0.0],
        n_mc,
        n_sub,
        atau_f: stats.a.mean(),
        atau_stderr: stats.a.stderr(),
        generator_term: data.generator_term,
        identity_gap: stats.resid.mean(),
        identity_stderr: stats.resid.stderr(),
    })
}

/// Analytic bounds on `|E R_i(x, g_τ(x))|`, `i = 1..6`, given
/// `sups = [‖∇f‖, ‖∇²f‖, ‖∇³f‖, ‖∇⁴f‖]`.
///
/// For the modified Euler family with `z = 𝒫x`, `b̂ = b_τ(z)`, `σ̂ = σ_τ(z)`:
/// `R_1 ≤ ¼(2‖∇²f‖|b̂|² + ‖∇³f‖‖σ̂‖²|b̂|)τ²`,
/// `R_2 ≤ ⅛(2‖∇³f‖‖σ̂‖²|b̂| + ‖∇⁴f‖‖σ̂‖⁴)τ²`,
/// `R_3 ≤ ‖∇²f‖|z − x||b̂|τ`, `R_4 ≤ ‖∇³f‖|z − x|‖σ̂‖²τ`,
/// `R_5 ≤ ‖∇f‖|b̂ − b(x)|τ`, `R_6 ≤ ½‖∇²f‖Σ_j|σ̂_j − σ_j(x)||σ̂_j + σ_j(x)|τ`.
/// For BEM the same `R_1`, `R_2` bounds hold with `b(x)`, `σ(x)`,
/// `R_3 ≤ ‖∇²f‖|b(x)|²τ²`, `R_4 ≤ ‖∇³f‖|b(x)|‖σ(x)‖²τ²` and `R_5 = R_6 = 0`.
pub fn remainder_bounds<P: Sde + ?Sized>(problem: &P, scheme: &SchemeSpec, x: &[f64], sups: [f64; 4]) -> Result<[f64; 6]> {
    check_state(problem, x)?;
    let (d, m) = (problem.dim_state(), problem.dim_noise());
    let tau = scheme.tau;
    let maps = modification_maps(problem, *scheme);
    let mut z = vec![0.0; d];
    let mut bh = vec![0.0; d];
    let mut sh = vec![0.0; d * m];
    maps.frozen(x, &mut z, &mut bh, &mut sh);
    let [s1, s2, s3, s4] = sups;
    let bn = norm(&bh);
    let hs = hs_norm_sq(&sh);
    let r1 = 0.25 * (2.0 * s2 * bn * bn + s3 * hs * bn) * tau * tau;
    let r2 = 0.125 * (2.0 * s3 * hs * bn + s4 * hs * hs) * tau * tau;
    if scheme.kind == SchemeKind::Bem {
        return Ok([r1, r2, s2 * bn * bn * tau * tau, s3 * bn * hs * tau * tau, 0.0, 0.0]);
    }
    let mut bx = vec![0.0; d];
    let mut sx = vec![0.0; d * m];
    problem.drift(x, &mut bx);
    problem.diffusion(x, &mut sx);
    let shift: Vec<f64> = z.iter().zip(x).map(|(a, b)| a - b).collect();
    let dz = norm(&shift);
    let db: Vec<f64> = bh.iter().zip(&bx).map(|(a, b)| a - b).collect();
    let mut r6 = 0.0;
    for j in 0..m {
        let minus: Vec<f64> = (0..d).map(|a| sh[a * m + j] - sx[a * m + j]).collect();
        let plus: Vec<f64> = (0..d).map(|a| sh[a * m + j] + sx[a * m + j]).collect();
        r6 += norm(&minus) * norm(&plus);
    }
    Ok([
        r1,
        r2,
        s2 * dz * bn * tau,
        s3 * dz * hs * tau,
        s1 * norm(&db) * tau,
        0.5 * s2 * r6 * tau,
    ])
}

/// Settings of [`error_representation_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepresentationSettings {
    pub y0: f64,
    /// Chain length, including burn-in.
    pub n_steps: u64,
    /// Defaults to 20% of `n_steps`.
    pub burn_in: Option<u64>,
    /// Stride between retained samples; defaults to `⌈1/τ⌉`.
    pub thin: Option<u64>,
    /// Total inner path draws for `R_1`, `R_2`, spread evenly over the
    /// retained samples (at least one per sample).
    pub n_mc: u64,
    /// Total draws for the `A_τ` term; the path draws are reused and topped
    /// up with endpoint-only draws. Defaults to `n_mc`.
    pub n_mc_atau: Option<u64>,
    pub n_sub: usize,
    pub n_batches: usize,
    /// Grid density of the 1-D oracle.
    pub points_per_unit: usize,
    pub seed: u64,
}

impl Default for RepresentationSettings {
    fn default() -> Self {
        Self {
            y0: 0.0,
            n_steps: 10_000_000,
            burn_in: None,
            thin: None,
            n_mc: 100_000,
            n_mc_atau: None,
            n_sub: DEFAULT_N_SUB,
            n_batches: 32,
            points_per_unit: 256,
            seed: 0,
        }
    }
}

/// Both sides of the ergodic error representation
/// `|π_τ(φ) − π(φ)| = τ^{-1}|E^{π_τ} A_τf_φ(g_τ(X_0)) − Σ_i E^{π_τ} E R_i(X_0, g_τ(X_0))|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationReport {
    pub scheme: SchemeKind,
    pub tau: f64,
    pub phi: TestFunction,
    pub seed: u64,
    pub n_steps: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub n_samples: u64,
    pub n_inner: u64,
    /// Draws per sample for the `A_τ` term.
    pub n_inner_atau: u64,
    pub n_sub: usize,
    /// Oracle `π(φ)` and its quadrature error estimate.
    pub pi: f64,
    pub pi_error: f64,
    /// Time-average estimate of `π_τ(φ)`.
    pub pi_tau: f64,
    pub pi_tau_stderr: f64,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    /// `E^{π_τ} A_τf_φ(g_τ(X_0))`, reported on its own: it vanishes in law
    /// for BEM and is small but nonzero for the modified Euler family.
    pub atau_term: f64,
    pub atau_term_stderr: f64,
    pub r: [f64; 6],
    pub r_stderr: [f64; 6],
    pub combined_error: f64,
    /// First-half and second-half time averages agree within 4 standard
    /// errors.
    pub equilibrated: bool,
    pub diverged_at: Option<u64>,
    pub verdict: Verdict,
}

/// Per-sample inner estimates: `[A_τ, R_1, …, R_6]`.
fn sample_terms<F: SmoothFunction + ?Sized, P: Sde + ?Sized>(
    maps: &ModificationMaps<'_, P>,
    f: &F,
    x: &[f64],
    stream: &NoiseStream,
    n_inner: u64,
    n_atau: u64,
    n_sub: usize,
) -> Result<[f64; 7]> {
    let data = StepData::new(maps, f, x)?;
    let stats = run_draws(&data, f, stream, 0, n_inner, n_sub)?;
    let mut a = stats.a;
    let mut escaped = stats.escaped;
    if n_atau > n_inner {
        let (extra, e) = run_endpoints(&data, f, stream, n_inner, n_atau)?;
        a.merge(&extra);
        escaped += e;
    }
    if escaped > 0 {
        return Err(Error::TableEscape {
            escaped: escaped as usize,
            total: n_atau.max(n_inner) as usize,
        });
    }
    let [r3, r4, r5, r6] = data.fixed;
    Ok([a.mean(), stats.r1.mean(), stats.r2.mean(), r3, r4, r5, r6])
}

/// Checks the ergodic error representation on a 1-D problem: `π(φ)` and
/// `f_φ` from the quadrature oracle, `π_τ(φ)` and samples `X_0 ~ π_τ` from
/// one long chain (id `lanes::CHAIN`, retained every `thin` steps after
/// burn-in), inner draws for sample `i` on id `lanes::INNER_MC + i`.
pub fn error_representation_check<P: Sde + ?Sized>(
    problem: &P,
    scheme: &SchemeSpec,
    phi: &TestFunction,
    settings: &RepresentationSettings,
) -> Result<RepresentationReport> {
    if problem.dim_state() != 1 || problem.dim_noise() != 1 {
        return Err(invalid("problem", "the representation check needs a scalar problem"));
    }
    if settings.n_sub < 1 {
        return Err(invalid("n_sub", "must be >= 1"));
    }
    if settings.n_batches < 8 {
        return Err(invalid("n_batches", "must be >= 8"));
    }
    let tau = scheme.tau;
    let burn_in = settings.burn_in.unwrap_or_else(|| default_burn_in(settings.n_steps));
    if burn_in >= settings.n_steps {
        return Err(invalid("burn_in", "must be < n_steps"));
    }
    let kept = settings.n_steps - burn_in;
    let thin = settings.thin.unwrap_or_else(|| (1.0 / tau).ceil() as u64);
    if thin < 1 {
        return Err(invalid("thin", "must be >= 1"));
    }
    let n_samples = kept / thin;
    if (n_samples as usize) < settings.n_batches || kept < 2 * settings.n_batches as u64 {
        return Err(invalid("n_steps", "too short for the requested batches and thinning"));
    }

    let density = auto_density(problem, settings.points_per_unit)?;
    let (pi, pi_error) = pi_with_error(&density, phi)?;
    let sol = stein_solution(problem, &density, phi)?;
    let f = sol.bind(problem);
    let maps = modification_maps(problem, *scheme);

    let mut report = RepresentationReport {
        scheme: scheme.kind,
        tau,
        phi: *phi,
        seed: settings.seed,
        n_steps: settings.n_steps,
        burn_in,
        thin,
        n_samples,
        n_inner: 0,
        n_inner_atau: 0,
        n_sub: settings.n_sub,
        pi,
        pi_error,
        pi_tau: f64::NAN,
        pi_tau_stderr: f64::INFINITY,
        lhs: f64::NAN,
        lhs_stderr: f64::INFINITY,
        rhs: f64::NAN,
        rhs_stderr: f64::INFINITY,
        atau_term: f64::NAN,
        atau_term_stderr: f64::INFINITY,
        r: [f64::NAN; 6],
        r_stderr: [f64::INFINITY; 6],
        combined_error: f64::INFINITY,
        equilibrated: false,
        diverged_at: None,
        verdict: Verdict::Inconclusive,
    };

    // Chain pass: streamed time average (two halves for the equilibration
    // diagnostic) and thinned samples.
    let half = kept / 2;
    let mut first = BatchMeans::new(half, settings.n_batches / 2)?;
    let mut second = BatchMeans::new(kept - half, settings.n_batches / 2)?;
    let mut samples = Vec::with_capacity(n_samples as usize);
    let mut chain = ChainRunner::new(problem, *scheme, &[settings.y0], NoiseStream::new(settings.seed, lanes::CHAIN))?;
    while chain.k() < settings.n_steps {
        if !chain.advance()? {
            report.diverged_at = chain.diverged_at();
            return Ok(report);
        }
        let k = chain.k();
        if k <= burn_in {
            continue;
        }
        let idx = k - burn_in - 1;
        let v = phi.eval(chain.state());
        if idx < half {
            first.push(v);
        } else {
            second.push(v);
        }
        if (idx + 1) % thin == 0 && (samples.len() as u64) < n_samples {
            samples.push(chain.state()[0]);
        }
    }
    let (m1, se1) = first.finish();
    let (m2, se2) = second.finish();
    let mut all = first.batch_means().to_vec();
    all.extend_from_slice(second.batch_means());
    let (_, pi_tau_stderr) = mean_stderr(&all);
    let pi_tau = (m1 * half as f64 + m2 * (kept - half) as f64) / kept as f64;
    report.pi_tau = pi_tau;
    report.pi_tau_stderr = pi_tau_stderr;
    report.equilibrated = (m1 - m2).abs() <= 4.0 * (se1 * se1 + se2 * se2).sqrt();
    report.lhs = (pi_tau - pi).abs();
    report.lhs_stderr = (pi_tau_stderr * pi_tau_stderr + pi_error * pi_error).sqrt();

    // Inner pass over the retained samples.
    let n_inner = settings.n_mc.div_ceil(n_samples).max(1);
    let n_atau = settings.n_mc_atau.unwrap_or(settings.n_mc).div_ceil(n_samples).max(n_inner);
    report.n_inner = n_inner;
    report.n_inner_atau = n_atau;
    let mut diff = BatchMeans::new(n_samples, settings.n_batches)?;
    let mut terms = [Moments::new(); 7];
    for (c, chunk) in samples.chunks(SAMPLE_CHUNK).enumerate() {
        let base = (c * SAMPLE_CHUNK) as u64;
        let blocks: Vec<Result<Vec<[f64; 7]>>> = chunk
            .par_chunks(SAMPLE_BLOCK)
            .enumerate()
            .map(|(b, xs)| {
                xs.iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let id = base + (b * SAMPLE_BLOCK + i) as u64;
                        let stream = NoiseStream::new(settings.seed, lanes::INNER_MC + id);
                        sample_terms(&maps, &f, &[x], &stream, n_inner, n_atau, settings.n_sub)
                    })
                    .collect()
            })
            .collect();
        for block in blocks {
            for t in block? {
                for (acc, v) in terms.iter_mut().zip(t) {
                    acc.push(v);
                }
                diff.push(t[0] - t[1..].iter().sum::<f64>());
            }
        }
    }
    let (dm, dse) = diff.finish();
    report.rhs = (dm / tau).abs();
    report.rhs_stderr = dse / tau;
    report.atau_term = terms[0].mean();
    report.atau_term_stderr = terms[0].stderr();
    for i in 0..6 {
        report.r[i] = terms[i + 1].mean();
        report.r_stderr[i] = terms[i + 1].stderr();
    }
    report.combined_error = (report.lhs_stderr.powi(2) + report.rhs_stderr.powi(2)).sqrt();
    report.verdict = if report.equilibrated {
        Verdict::at_three_sigma(report.lhs - report.rhs, report.combined_error)
    } else {
        Verdict::Inconclusive
    };
    Ok(report)
}

#[cfg(test)]
mod tests;
