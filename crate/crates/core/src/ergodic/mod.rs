//! Long-run chains, time averages, ensembles, moment traces and
//! first-variation decay.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{check_monotonicity, norm, CheckVerdict, SampleSpec, Sde, TestFunction};
use crate::noise::{lanes, NoiseStream};
use crate::schemes::{tame_factor, SchemeKind, SchemeSpec, Stepper};
use crate::stats::{compensated_sum, linear_fit, mean_stderr, BatchMeans};

/// A chain is declared divergent once `|Y_k|` exceeds this (or is not finite).
pub const DIVERGENCE_THRESHOLD: f64 = 1e100;

/// Iterates a scheme with increments `δ_k W` taken from `stream` at step
/// index `k` (the transition `Y_k → Y_{k+1}` uses index `k`).
pub struct ChainRunner<'a, P: Sde + ?Sized> {
    stepper: Stepper<'a, P>,
    stream: NoiseStream,
    sqrt_tau: f64,
    state: Vec<f64>,
    next: Vec<f64>,
    dw: Vec<f64>,
    k: u64,
    diverged_at: Option<u64>,
}

impl<'a, P: Sde + ?Sized> ChainRunner<'a, P> {
    pub fn new(problem: &'a P, scheme: SchemeSpec, y0: &[f64], stream: NoiseStream) -> Result<Self> {
        if y0.len() != problem.dim_state() {
            return Err(Error::Dimension {
                what: "initial state",
                expected: problem.dim_state(),
                got: y0.len(),
            });
        }
        let stepper = Stepper::new(problem, scheme)?;
        Ok(Self {
            stepper,
            stream,
            sqrt_tau: scheme.tau.sqrt(),
            state: y0.to_vec(),
            next: vec![0.0; y0.len()],
            dw: vec![0.0; problem.dim_noise()],
            k: 0,
            diverged_at: None,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    /// Number of steps taken so far.
    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn diverged_at(&self) -> Option<u64> {
        self.diverged_at
    }

    /// Advances one step. Returns `Ok(false)` once the chain has diverged;
    /// the state is then frozen at the first divergent iterate.
    #[inline]
    pub fn advance(&mut self) -> Result<bool> {
        if self.diverged_at.is_some() {
            return Ok(false);
        }
        self.stream.increment_scaled(self.k, self.sqrt_tau, &mut self.dw);
        let k = self.k;
        self.stepper
            .step(&self.state, &self.dw, &mut self.next)
            .map_err(|e| Error::AtStep {
                step: k,
                source: Box::new(e),
            })?;
        std::mem::swap(&mut self.state, &mut self.next);
        self.k += 1;
        let r = norm(&self.state);
        if !(r <= DIVERGENCE_THRESHOLD) {
            self.diverged_at = Some(self.k);
            return Ok(false);
        }
        Ok(true)
    }
}

/// Thinned trajectory: `states[i]` is `Y_{i·thin}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub thin: u64,
    pub n_steps: u64,
    pub seed: u64,
    pub diverged_at: Option<u64>,
}

pub fn simulate_chain<P: Sde + ?Sized>(
    problem: &P,
    scheme: &SchemeSpec,
    y0: &[f64],
    n_steps: u64,
    stream: NoiseStream,
    thin: u64,
) -> Result<Trajectory> {
    if n_steps < 1 {
        return Err(invalid("n_steps", "must be >= 1"));
    }
    if thin < 1 {
        return Err(invalid("thin", "must be >= 1"));
    }
    let mut chain = ChainRunner::new(problem, *scheme, y0, stream)?;
    let mut states = vec![y0.to_vec()];
    while chain.k() < n_steps {
        if !chain.advance()? {
            states.push(chain.state().to_vec());
            break;
        }
        if chain.k() % thin == 0 {
            states.push(chain.state().to_vec());
        }
    }
    Ok(Trajectory {
        states,
        thin,
        n_steps,
        seed: stream.seed(),
        diverged_at: chain.diverged_at(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicEstimate {
    pub phi_mean: f64,
    pub stderr: f64,
    pub n_steps: u64,
    pub burn_in: u64,
    pub n_batches: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub diverged: bool,
    pub diverged_at: Option<u64>,
}

impl ErgodicEstimate {
    fn diverged(n_steps: u64, burn_in: u64, n_batches: usize, n_chains: usize, seed: u64, at: u64) -> Self {
        Self {
            phi_mean: f64::NAN,
            stderr: f64::INFINITY,
            n_steps,
            burn_in,
            n_batches,
            n_chains,
            seed,
            diverged: true,
            diverged_at: Some(at),
        }
    }
}

/// Default burn-in: 20% of the steps.
pub fn default_burn_in(n_steps: u64) -> u64 {
    n_steps / 5
}

pub const DEFAULT_BATCHES: usize = 32;

/// Time average of `φ(Y_k)` over the stored states with `k > burn_in`
/// (unthinned trajectories only count every step; thinned ones count the
/// stored states). Standard error from non-overlapping batch means.
pub fn time_average(phi: &TestFunction, trajectory: &Trajectory, burn_in: u64, n_batches: usize) -> Result<ErgodicEstimate> {
    if burn_in >= trajectory.n_steps {
        return Err(invalid("burn_in", "must be smaller than n_steps"));
    }
    if n_batches < 8 {
        return Err(invalid("n_batches", "must be >= 8"));
    }
    if let Some(at) = trajectory.diverged_at {
        return Ok(ErgodicEstimate::diverged(
            trajectory.n_steps,
            burn_in,
            n_batches,
            1,
            trajectory.seed,
            at,
        ));
    }
    let kept: Vec<&Vec<f64>> = trajectory
        .states
        .iter()
        .enumerate()
        .filter(|(i, _)| *i as u64 * trajectory.thin > burn_in)
        .map(|(_, s)| s)
        .collect();
    let mut bm = BatchMeans::new(kept.len() as u64, n_batches)?;
    for s in kept {
        bm.push(phi.eval(s));
    }
    let (phi_mean, stderr) = bm.finish();
    Ok(ErgodicEstimate {
        phi_mean,
        stderr,
        n_steps: trajectory.n_steps,
        burn_in,
        n_batches,
        n_chains: 1,
        seed: trajectory.seed,
        diverged: false,
        diverged_at: None,
    })
}

/// Settings of a streaming ergodic average over one or more chains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicConfig {
    pub y0: Vec<f64>,
    pub n_steps: u64,
    /// Defaults to 20% of `n_steps`.
    #[serde(default)]
    pub burn_in: Option<u64>,
    #[serde(default = "default_batches")]
    pub n_batches: usize,
    #[serde(default = "one")]
    pub n_chains: usize,
}

fn default_batches() -> usize {
    DEFAULT_BATCHES
}

fn one() -> usize {
    1
}

impl ErgodicConfig {
    pub fn new(y0: Vec<f64>, n_steps: u64) -> Self {
        Self {
            y0,
            n_steps,
            burn_in: None,
            n_batches: DEFAULT_BATCHES,
            n_chains: 1,
        }
    }

    pub fn burn_in(&self) -> u64 {
        self.burn_in.unwrap_or_else(|| default_burn_in(self.n_steps))
    }

    fn validate(&self) -> Result<()> {
        if self.n_steps < 1 {
            return Err(invalid("n_steps", "must be >= 1"));
        }
        if self.burn_in() >= self.n_steps {
            return Err(invalid("burn_in", "must be smaller than n_steps"));
        }
        if self.n_batches < 8 {
            return Err(invalid("n_batches", "must be >= 8"));
        }
        if self.n_chains < 1 {
            return Err(invalid("n_chains", "must be >= 1"));
        }
        Ok(())
    }
}

struct ChainSummary {
    mean: f64,
    batch_means: Vec<f64>,
    diverged_at: Option<u64>,
}

fn run_streaming_chain<P: Sde + ?Sized>(
    problem: &P,
    scheme: &SchemeSpec,
    phi: &TestFunction,
    cfg: &ErgodicConfig,
    stream: NoiseStream,
) -> Result<ChainSummary> {
    let burn_in = cfg.burn_in();
    let mut chain = ChainRunner::new(problem, *scheme, &cfg.y0, stream)?;
    let mut bm = BatchMeans::new(cfg.n_steps - burn_in, cfg.n_batches)?;
    while chain.k() < cfg.n_steps {
        if !chain.advance()? {
            return Ok(ChainSummary {
                mean: f64::NAN,
                batch_means: Vec::new(),
                diverged_at: chain.diverged_at(),
            });
        }
        if chain.k() > burn_in {
            bm.push(phi.eval(chain.state()));
        }
    }
    let (mean, _) = bm.finish();
    Ok(ChainSummary {
        mean,
        batch_means: bm.batch_means().to_vec(),
        diverged_at: None,
    })
}

/// Streaming estimate of `π_τ(φ)` from `n_chains` independent chains on
/// trajectory ids `lanes::CHAIN + chain_offset + i`. The mean is the average
/// of the chain means; the standard error pools all batch means.
pub fn ergodic_average<P: Sde + ?Sized>(
    problem: &P,
    scheme: &SchemeSpec,
    phi: &TestFunction,
    cfg: &ErgodicConfig,
    seed: u64,
    chain_offset: u64,
) -> Result<ErgodicEstimate> {
    cfg.validate()?;
    let burn_in = cfg.burn_in();
    let summaries: Vec<Result<ChainSummary>> = (0..cfg.n_chains as u64)
        .into_par_iter()
        .map(|i| {
            let stream = NoiseStream::new(seed, lanes::CHAIN + chain_offset + i);
            run_streaming_chain(problem, scheme, phi, cfg, stream)
        })
        .collect();
    let mut means = Vec::with_capacity(cfg.n_chains);
    let mut batches = Vec::with_capacity(cfg.n_chains * cfg.n_batches);
    for s in summaries {
        let s = s?;
        if let Some(at) = s.diverged_at {
            return Ok(ErgodicEstimate::diverged(
                cfg.n_steps,
                burn_in,
                cfg.n_batches,
                cfg.n_chains,
                seed,
                at,
            ));
        }
        means.push(s.mean);
        batches.extend(s.batch_means);
    }
    let phi_mean = compensated_sum(means.iter().copied()) / means.len() as f64;
    let (_, stderr) = mean_stderr(&batches);
    Ok(ErgodicEstimate {
        phi_mean,
        stderr,
        n_steps: cfg.n_steps,
        burn_in,
        n_batches: cfg.n_batches,
        n_chains: cfg.n_chains,
        seed,
        diverged: false,
        diverged_at: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_traj: usize,
    pub n_steps: u64,
    pub n_diverged: usize,
    pub divergence_fraction: f64,
}

/// Number of steps of size `tau` covering `[0, t]`; `t` must be a multiple of
/// `tau` up to 1e-9 relative.
pub fn steps_for_horizon(t: f64, tau: f64) -> Result<u64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("T", format!("must be finite and >= 0, got {t}")));
    }
    let n = (t / tau).round();
    if (n * tau - t).abs() > 1e-9 * t.max(tau) {
        return Err(invalid("T", format!("{t} is not a multiple of tau = {tau}")));
    }
    Ok(n as u64)
}

/// Monte-Carlo estimate of `E φ(Y_n)`, `n = T/τ`, from `x0` over `n_traj`
/// trajectories on ids `lanes::ENSEMBLE + offset + i`. Divergent trajectories
/// are excluded from the mean and counted.
pub fn ensemble_expectation<P: Sde + ?Sized>(
    problem: &P,
    scheme: &SchemeSpec,
    phi: &TestFunction,
    x0: &[f64],
    t: f64,
    n_traj: usize,
    seed: u64,
    offset: u64,
) -> Result<EnsembleEstimate> {
    if n_traj < 1 {
        return Err(invalid("n_traj", "must be >= 1"));
    }
    let n_steps = steps_for_horizon(t, scheme.tau)?;
    if n_steps == 0 {
        return Ok(EnsembleEstimate {
            mean: phi.eval(x0),
            stderr: 0.0,
            n_traj,
            n_steps,
            n_diverged: 0,
            divergence_fraction: 0.0,
        });
    }
    let finals = final_states(problem, scheme, x0, n_steps, n_traj, seed, lanes::ENSEMBLE + offset)?;
    let values: Vec<f64> = finals.iter().flatten().map(|s| phi.eval(s)).collect();
    let n_diverged = n_traj - values.len();
    let (mean, stderr) = if values.is_empty() {
        (f64::NAN, f64::INFINITY)
    } else {
        mean_stderr(&values)
    };
    Ok(EnsembleEstimate {
        mean,
        stderr,
        n_traj,
        n_steps,
        n_diverged,
        divergence_fraction: n_diverged as f64 / n_traj as f64,
    })
}

/// Final states after `n_steps` (`None` for divergent trajectories), in
/// trajectory order.
pub fn final_states<P: Sde + ?Sized>(
    problem: &P,
    scheme: &SchemeSpec,
    x0: &[f64],
    n_steps: u64,
    n_traj: usize,
    seed: u64,
    first_id: u64,
) -> Result<Vec<Option<Vec<f64>>>> {
    (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut chain = ChainRunner::new(problem, *scheme, x0, NoiseStream::new(seed, first_id + i))?;
            while chain.k() < n_steps {
                if !chain.advance()? {
                    return Ok(None);
                }
            }
            Ok(Some(chain.state().to_vec()))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentTrace {
    pub p: f64,
    pub running_sup: f64,
    /// `(k, ensemble mean of |Y_k|^{2p})`.
    pub checkpoints: Vec<(u64, f64)>,
    pub n_traj: usize,
    pub n_diverged: usize,
}

impl MomentTrace {
    /// Whether the supremum is attained strictly before the last checkpoint.
    pub fn plateaued(&self) -> bool {
        match self.checkpoints.split_last() {
            Some((last, rest)) => self.running_sup.is_finite() && rest.iter().any(|c| c.1 >= last.1),
            None => false,
        }
    }
}

/// `0, 1, 2, 4, …` up to and including `n_steps`.
pub fn geometric_checkpoints(n_steps: u64) -> Vec<u64> {
    let mut ks = vec![0];
    let mut k = 1;
    while k < n_steps {
        ks.push(k);
        k *= 2;
    }
    if n_steps > 0 {
        ks.push(n_steps);
    }
    ks
}

/// Ensemble mean of `|Y_k|^{2p}` at geometric checkpoints. Trajectories
/// that diverge contribute `+∞` from then on, so divergence shows up as a
/// non-finite `running_sup`.
#[allow(clippy::too_many_arguments)]
pub fn moment_trace<P: Sde + ?Sized>(
    problem: &P,
    scheme: &SchemeSpec,
    y0: &[f64],
    p: f64,
    n_traj: usize,
    n_steps: u64,
    seed: u64,
) -> Result<MomentTrace> {
    if n_traj < 1 {
        return Err(invalid("n_traj", "must be >= 1"));
    }
    if !(p > 0.0) {
        return Err(invalid("p", "must be > 0"));
    }
    let ks = geometric_checkpoints(n_steps);
    let per_traj: Vec<Result<(Vec<f64>, bool)>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut chain = ChainRunner::new(problem, *scheme, y0, NoiseStream::new(seed, lanes::ENSEMBLE + i))?;
            let mut out = Vec::with_capacity(ks.len());
            let mut alive = true;
            for &k in &ks {
                while alive && chain.k() < k {
                    alive = chain.advance()?;
                }
                out.push(if alive {
                    norm(chain.state()).powf(2.0 * p)
                } else {
                    f64::INFINITY
                });
            }
            Ok((out, !alive))
        })
        .collect();
    let mut sums = vec![crate::stats::NeumaierSum::new(); ks.len()];
    let mut n_diverged = 0;
    for r in per_traj {
        let (vals, diverged) = r?;
        n_diverged += diverged as usize;
        for (s, v) in sums.iter_mut().zip(vals) {
            s.add(v);
        }
    }
    let checkpoints: Vec<(u64, f64)> = ks
        .iter()
        .zip(&sums)
        .map(|(&k, s)| {
            let v = s.value() / n_traj as f64;
            (k, if v.is_nan() { f64::INFINITY } else { v })
        })
        .collect();
    let running_sup = checkpoints.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(MomentTrace {
        p,
        running_sup,
        checkpoints,
        n_traj,
        n_diverged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub lambda_hat: f64,
    pub r_squared: f64,
    /// `(t, log E|η_t|^{2q})`.
    pub series: Vec<(f64, f64)>,
    pub q: f64,
    pub tau_fine: f64,
    pub n_traj: usize,
    pub notice: Option<String>,
    pub warnings: Vec<String>,
}

/// Settings for [`first_variation_decay`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySettings {
    pub tau_fine: f64,
    pub horizon: f64,
    pub n_points: usize,
    pub n_traj: usize,
    pub seed: u64,
}

impl Default for DecaySettings {
    fn default() -> Self {
        Self {
            tau_fine: 1e-4,
            horizon: 4.0,
            n_points: 40,
            n_traj: 1000,
            seed: 0,
        }
    }
}

/// Simulates `(X, η)` jointly with the tamed scheme on a fine grid:
///
/// ```text
/// X ← X + f(X) [b(X) τ + σ(X) δW]
/// η ← η + f(X) [∇b(X)η τ + Σ_j ∇σ_j(X)η δW_j]
/// ```
///
/// with the taming factor `f`, then fits `log E|η_t|^{2q}` against `t`.
pub fn first_variation_decay<P: Sde + ?Sized>(
    problem: &P,
    x: &[f64],
    v: &[f64],
    q: f64,
    settings: &DecaySettings,
) -> Result<DecayFit> {
    let (d, m) = (problem.dim_state(), problem.dim_noise());
    if x.len() != d || v.len() != d {
        return Err(Error::Dimension {
            what: "first-variation start",
            expected: d,
            got: if x.len() != d { x.len() } else { v.len() },
        });
    }
    if !(q > 0.0) {
        return Err(invalid("q", "must be > 0"));
    }
    if settings.n_points < 3 || settings.n_traj < 1 {
        return Err(invalid("n_points", "need >= 3 points and >= 1 trajectory"));
    }
    SchemeSpec::new(SchemeKind::Tem, settings.tau_fine)?;
    let mut fit = DecayFit {
        lambda_hat: f64::NAN,
        r_squared: 0.0,
        series: Vec::new(),
        q,
        tau_fine: settings.tau_fine,
        n_traj: settings.n_traj,
        notice: None,
        warnings: Vec::new(),
    };
    if v.iter().all(|c| *c == 0.0) {
        fit.notice = Some("zero direction vector: η ≡ 0, fit skipped".into());
        return Ok(fit);
    }
    let mono = check_monotonicity(problem, &SampleSpec::default())?;
    if mono.verdict == CheckVerdict::ViolationFound {
        fit.warnings.push(format!(
            "monotonicity violated (worst margin {:.3e}); decay is not guaranteed",
            mono.worst_margin
        ));
    }
    let total = steps_for_horizon(settings.horizon, settings.tau_fine)?;
    let marks: Vec<u64> = (0..=settings.n_points as u64)
        .map(|i| i * total / settings.n_points as u64)
        .collect();
    let gamma = problem.params().gamma;
    let tau = settings.tau_fine;
    let per_traj: Vec<Result<Vec<f64>>> = (0..settings.n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let stream = NoiseStream::new(settings.seed, lanes::ENSEMBLE + i);
            let sq = tau.sqrt();
            let (mut xs, mut eta) = (x.to_vec(), v.to_vec());
            let (mut b, mut s) = (vec![0.0; d], vec![0.0; d * m]);
            let (mut jb, mut js) = (vec![0.0; d], vec![0.0; d]);
            let mut dw = vec![0.0; m];
            let mut out = Vec::with_capacity(marks.len());
            let mut k = 0u64;
            for &mark in &marks {
                while k < mark {
                    stream.increment_scaled(k, sq, &mut dw);
                    let f = tame_factor(norm(&xs), tau, gamma);
                    problem.drift(&xs, &mut b);
                    problem.diffusion(&xs, &mut s);
                    problem.drift_deriv(&xs, &[&eta], &mut jb)?;
                    let mut deta: Vec<f64> = jb.iter().map(|g| g * tau).collect();
                    for j in 0..m {
                        problem.diffusion_deriv(&xs, j, &[&eta], &mut js)?;
                        for (de, g) in deta.iter_mut().zip(&js) {
                            *de += g * dw[j];
                        }
                    }
                    for r in 0..d {
                        let mut dx = b[r] * tau;
                        for j in 0..m {
                            dx += s[r * m + j] * dw[j];
                        }
                        xs[r] += f * dx;
                        eta[r] += f * deta[r];
                    }
                    k += 1;
                }
                out.push(norm(&eta).powf(2.0 * q));
            }
            Ok(out)
        })
        .collect();
    let mut sums = vec![crate::stats::NeumaierSum::new(); marks.len()];
    for r in per_traj {
        for (s, val) in sums.iter_mut().zip(r?) {
            s.add(val);
        }
    }
    fit.series = marks
        .iter()
        .zip(&sums)
        .map(|(&k, s)| (k as f64 * tau, (s.value() / settings.n_traj as f64).ln()))
        .collect();
    let usable: Vec<(f64, f64)> = fit.series.iter().copied().filter(|p| p.1.is_finite()).collect();
    if usable.len() < 3 {
        fit.notice = Some("E|η|^{2q} underflowed; too few points to fit".into());
        return Ok(fit);
    }
    let (ts, ys): (Vec<f64>, Vec<f64>) = usable.into_iter().unzip();
    let lf = linear_fit(&ts, &ys, None)?;
    fit.lambda_hat = -lf.slope / (2.0 * q);
    fit.r_squared = lf.r_squared;
    if fit.series.windows(2).any(|w| w[1].1 > w[0].1) {
        fit.warnings.push("E|η|^{2q} is not monotonically decreasing along the grid".into());
    }
    Ok(fit)
}
