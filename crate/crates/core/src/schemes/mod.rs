//! One-step schemes and the maps that describe their continuous
//! interpolation on `[0, τ]`:
//!
//! ```text
//! Ŷ_s = g_τ(Y_0) + s b̂_τ(g̃_τ(Y_0)) + σ̂_τ(g̃_τ(Y_0)) W(s)
//! ```
//!
//! Modified Euler schemes (EM, TEM, PEM) take `Y_1 = 𝒫(Y_0) + b_τ(𝒫Y_0) τ +
//! σ_τ(𝒫Y_0) δW` with `g_τ = g̃_τ = 𝒫`, so `Ŷ_τ = Y_1`. The backward Euler
//! scheme solves `Y_1 = Y_0 + b(Y_1) τ + σ(Y_0) δW` and interpolates with
//! `g_τ(x) = x − b(x) τ`, `g̃_τ = id`, so `Ŷ_τ = g_τ(Y_1)`.

mod implicit;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use implicit::NewtonSettings;

use crate::error::{invalid, Error, Result};
use crate::model::{norm, Sde};
use crate::noise::BrownianPath;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Em,
    Tem,
    Pem,
    Bem,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [SchemeKind::Em, SchemeKind::Tem, SchemeKind::Pem, SchemeKind::Bem];

    /// Explicit schemes of the modified-Euler family.
    pub fn is_modified_euler(self) -> bool {
        !matches!(self, SchemeKind::Bem)
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Em => "em",
            SchemeKind::Tem => "tem",
            SchemeKind::Pem => "pem",
            SchemeKind::Bem => "bem",
        })
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "em" => Ok(SchemeKind::Em),
            "tem" => Ok(SchemeKind::Tem),
            "pem" => Ok(SchemeKind::Pem),
            "bem" => Ok(SchemeKind::Bem),
            other => Err(invalid("scheme", format!("unknown scheme `{other}` (em|tem|pem|bem)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub tau: f64,
    pub bem_solver: NewtonSettings,
}

impl SchemeSpec {
    pub fn new(kind: SchemeKind, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(invalid("tau", format!("must lie in (0, 1), got {tau}")));
        }
        Ok(Self {
            kind,
            tau,
            bem_solver: NewtonSettings::default(),
        })
    }

    pub fn with_solver(mut self, solver: NewtonSettings) -> Self {
        self.bem_solver = solver;
        self
    }
}

/// Taming factor `(1 + τ r^{4(γ−1)})^{−1/4}` for `r = |x|`. Switches to log
/// space once `τ r^{4(γ−1)}` exceeds `e^30`, which keeps it finite for
/// arbitrarily large `r`.
#[inline]
pub fn tame_factor(r: f64, tau: f64, gamma: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    let e = 4.0 * (gamma - 1.0);
    let log_t = tau.ln() + e * r.ln();
    if log_t > 30.0 {
        (-0.25 * (log_t + (-log_t).exp().ln_1p())).exp()
    } else {
        (1.0 + tau * r.powf(e)).powf(-0.25)
    }
}

/// Tamed drift `b(x) / (1 + τ|x|^{4(γ−1)})^{1/4}`.
pub fn tame_drift<P: Sde + ?Sized>(problem: &P, x: &[f64], tau: f64) -> Vec<f64> {
    let mut b = vec![0.0; problem.dim_state()];
    problem.drift(x, &mut b);
    let f = tame_factor(norm(x), tau, problem.params().gamma);
    b.iter_mut().for_each(|v| *v *= f);
    b
}

/// Tamed diffusion, row-major `d × m`.
pub fn tame_diffusion<P: Sde + ?Sized>(problem: &P, x: &[f64], tau: f64) -> Vec<f64> {
    let mut s = vec![0.0; problem.dim_state() * problem.dim_noise()];
    problem.diffusion(x, &mut s);
    let f = tame_factor(norm(x), tau, problem.params().gamma);
    s.iter_mut().for_each(|v| *v *= f);
    s
}

/// Radius `τ^{−1/(2γ)}` of the projection ball.
pub fn projection_radius(tau: f64, gamma: f64) -> f64 {
    tau.powf(-1.0 / (2.0 * gamma))
}

/// Radial projection onto the ball of radius `radius`, in place.
/// Idempotent bit for bit: the scaled point is nudged inward until its
/// computed norm does not exceed the radius.
#[inline]
pub fn project_onto_ball(x: &mut [f64], radius: f64) {
    let r = norm(x);
    if r <= radius || r == 0.0 {
        return;
    }
    if x.len() == 1 {
        x[0] = radius.copysign(x[0]);
        return;
    }
    let mut s = radius / r;
    loop {
        let scaled: Vec<f64> = x.iter().map(|v| v * s).collect();
        if norm(&scaled) <= radius {
            x.copy_from_slice(&scaled);
            return;
        }
        s *= 1.0 - f64::EPSILON;
    }
}

/// `min{1, τ^{−1/(2γ)}|x|^{−1}} x`, and 0 at the origin.
pub fn project(x: &[f64], tau: f64, gamma: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    project_onto_ball(&mut out, projection_radius(tau, gamma));
    out
}

/// Exponent `4(γ−1)` as `powi` when integral.
#[derive(Clone, Copy, Debug)]
enum TameExp {
    Int(i32),
    Real,
}

/// Modification maps of a scheme: `𝒫`, `b_τ∘𝒫`, `σ_τ∘𝒫`, `g_τ`, `g̃_τ`,
/// `b̂_τ` and `σ̂_τ`.
#[derive(Clone, Copy)]
pub struct ModificationMaps<'a, P: Sde + ?Sized> {
    problem: &'a P,
    scheme: SchemeSpec,
    radius: f64,
    exp: TameExp,
}

/// Builds the modification maps of `scheme` for `problem`.
pub fn modification_maps<P: Sde + ?Sized>(problem: &P, scheme: SchemeSpec) -> ModificationMaps<'_, P> {
    let gamma = problem.params().gamma;
    let e = 4.0 * (gamma - 1.0);
    let exp = if e.fract() == 0.0 && e.abs() < 64.0 {
        TameExp::Int(e as i32)
    } else {
        TameExp::Real
    };
    ModificationMaps {
        problem,
        scheme,
        radius: projection_radius(scheme.tau, gamma),
        exp,
    }
}

impl<'a, P: Sde + ?Sized> ModificationMaps<'a, P> {
    pub fn scheme(&self) -> SchemeSpec {
        self.scheme
    }

    pub fn problem(&self) -> &'a P {
        self.problem
    }

    #[inline]
    fn factor(&self, x: &[f64]) -> f64 {
        if self.scheme.kind != SchemeKind::Tem {
            return 1.0;
        }
        let r = norm(x);
        if r == 0.0 {
            return 1.0;
        }
        let tau = self.scheme.tau;
        match self.exp {
            TameExp::Int(n) => {
                let t = tau * r.powi(n);
                if t < 1e13 {
                    (1.0 + t).sqrt().sqrt().recip()
                } else {
                    tame_factor(r, tau, self.problem.params().gamma)
                }
            }
            TameExp::Real => tame_factor(r, tau, self.problem.params().gamma),
        }
    }

    /// `𝒫` in place (identity except for PEM).
    #[inline]
    pub fn project_into(&self, x: &mut [f64]) {
        if self.scheme.kind == SchemeKind::Pem {
            project_onto_ball(x, self.radius);
        }
    }

    pub fn projection(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.project_into(&mut out);
        out
    }

    /// `b_τ(z)` and `σ_τ(z)` at an already-modified point `z`.
    #[inline]
    fn tamed_at(&self, z: &[f64], b: &mut [f64], s: &mut [f64]) {
        self.problem.drift(z, b);
        self.problem.diffusion(z, s);
        let f = self.factor(z);
        if f != 1.0 {
            b.iter_mut().for_each(|v| *v *= f);
            s.iter_mut().for_each(|v| *v *= f);
        }
    }

    /// `b_τ(𝒫x)`.
    pub fn tamed_drift(&self, x: &[f64]) -> Vec<f64> {
        let z = self.projection(x);
        let mut b = vec![0.0; self.problem.dim_state()];
        let mut s = vec![0.0; self.problem.dim_state() * self.problem.dim_noise()];
        self.tamed_at(&z, &mut b, &mut s);
        b
    }

    /// `σ_τ(𝒫x)`, row-major `d × m`.
    pub fn tamed_diffusion(&self, x: &[f64]) -> Vec<f64> {
        let z = self.projection(x);
        let mut b = vec![0.0; self.problem.dim_state()];
        let mut s = vec![0.0; self.problem.dim_state() * self.problem.dim_noise()];
        self.tamed_at(&z, &mut b, &mut s);
        s
    }

    /// Initial-datum map `g_τ`.
    pub fn g_tau_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        match self.scheme.kind {
            SchemeKind::Bem => {
                let mut b = vec![0.0; x.len()];
                self.problem.drift(x, &mut b);
                for (o, bi) in out.iter_mut().zip(&b) {
                    *o -= bi * self.scheme.tau;
                }
            }
            _ => self.project_into(out),
        }
    }

    pub fn g_tau(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.g_tau_into(x, &mut out);
        out
    }

    /// Coefficient-freezing map `g̃_τ`.
    pub fn g_tilde_tau(&self, x: &[f64]) -> Vec<f64> {
        match self.scheme.kind {
            SchemeKind::Bem => x.to_vec(),
            _ => self.projection(x),
        }
    }

    /// `b̂_τ(z)` and `σ̂_τ(z)`: `b_τ∘𝒫`, `σ_τ∘𝒫` for the modified Euler family,
    /// `b`, `σ` for BEM.
    pub fn hat_coefficients_into(&self, z: &[f64], b: &mut [f64], s: &mut [f64]) {
        match self.scheme.kind {
            SchemeKind::Bem => {
                self.problem.drift(z, b);
                self.problem.diffusion(z, s);
            }
            SchemeKind::Pem => {
                let mut p = z.to_vec();
                self.project_into(&mut p);
                self.tamed_at(&p, b, s);
            }
            _ => self.tamed_at(z, b, s),
        }
    }

    pub fn b_hat(&self, z: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.problem.dim_state()];
        let mut s = vec![0.0; self.problem.dim_state() * self.problem.dim_noise()];
        self.hat_coefficients_into(z, &mut b, &mut s);
        b
    }

    pub fn sigma_hat(&self, z: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.problem.dim_state()];
        let mut s = vec![0.0; self.problem.dim_state() * self.problem.dim_noise()];
        self.hat_coefficients_into(z, &mut b, &mut s);
        s
    }

    /// Frozen interpolation data for a step started at `x`:
    /// `(g_τ(x), b̂_τ(g̃_τ(x)), σ̂_τ(g̃_τ(x)))`.
    pub fn frozen(&self, x: &[f64], start: &mut [f64], b: &mut [f64], s: &mut [f64]) {
        match self.scheme.kind {
            SchemeKind::Bem => {
                self.problem.drift(x, b);
                self.problem.diffusion(x, s);
                for ((o, xi), bi) in start.iter_mut().zip(x).zip(b.iter()) {
                    *o = xi - bi * self.scheme.tau;
                }
            }
            _ => {
                start.copy_from_slice(x);
                self.project_into(start);
                self.tamed_at(start, b, s);
            }
        }
    }
}

/// Reusable one-step kernel with preallocated scratch space.
pub struct Stepper<'a, P: Sde + ?Sized> {
    maps: ModificationMaps<'a, P>,
    d: usize,
    m: usize,
    b: Vec<f64>,
    s: Vec<f64>,
    newton: implicit::NewtonScratch,
}

impl<'a, P: Sde + ?Sized> Stepper<'a, P> {
    pub fn new(problem: &'a P, scheme: SchemeSpec) -> Result<Self> {
        if !(scheme.tau > 0.0 && scheme.tau < 1.0) {
            return Err(invalid("tau", format!("must lie in (0, 1), got {}", scheme.tau)));
        }
        let (d, m) = (problem.dim_state(), problem.dim_noise());
        Ok(Self {
            maps: modification_maps(problem, scheme),
            d,
            m,
            b: vec![0.0; d],
            s: vec![0.0; d * m],
            newton: implicit::NewtonScratch::new(d),
        })
    }

    pub fn maps(&self) -> &ModificationMaps<'a, P> {
        &self.maps
    }

    pub fn scheme(&self) -> SchemeSpec {
        self.maps.scheme
    }

    /// One iterate: `out = Y_1` given `y = Y_0` and `dw = δW`.
    #[inline]
    pub fn step(&mut self, y: &[f64], dw: &[f64], out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(dw.len(), self.m);
        let tau = self.maps.scheme.tau;
        match self.maps.scheme.kind {
            SchemeKind::Bem => {
                self.maps.problem.diffusion(y, &mut self.s);
                // rhs = y + σ(y) δW, stored in out as the Newton start
                for i in 0..self.d {
                    let mut acc = y[i];
                    for j in 0..self.m {
                        acc += self.s[i * self.m + j] * dw[j];
                    }
                    out[i] = acc;
                }
                implicit::solve(self.maps.problem, tau, &self.maps.scheme.bem_solver, out, &mut self.newton)
            }
            _ => {
                out.copy_from_slice(y);
                self.maps.project_into(out);
                self.maps.tamed_at(out, &mut self.b, &mut self.s);
                for i in 0..self.d {
                    let mut acc = out[i] + tau * self.b[i];
                    for j in 0..self.m {
                        acc += self.s[i * self.m + j] * dw[j];
                    }
                    out[i] = acc;
                }
                Ok(())
            }
        }
    }
}

/// One iterate of `scheme` from `y` with Brownian increment `dw`.
pub fn step<P: Sde + ?Sized>(problem: &P, scheme: &SchemeSpec, y: &[f64], dw: &[f64]) -> Result<Vec<f64>> {
    check_dims(problem, y, dw)?;
    let mut st = Stepper::new(problem, *scheme)?;
    let mut out = vec![0.0; y.len()];
    st.step(y, dw, &mut out)?;
    Ok(out)
}

fn check_dims<P: Sde + ?Sized>(problem: &P, y: &[f64], dw: &[f64]) -> Result<()> {
    if y.len() != problem.dim_state() {
        return Err(Error::Dimension {
            what: "state",
            expected: problem.dim_state(),
            got: y.len(),
        });
    }
    if dw.len() != problem.dim_noise() {
        return Err(Error::Dimension {
            what: "noise increment",
            expected: problem.dim_noise(),
            got: dw.len(),
        });
    }
    Ok(())
}

/// Continuous interpolation `Ŷ_s` at every node of `path` (including
/// `s = 0`). The last node reproduces the step: `Ŷ_τ = Y_1` for the modified
/// Euler family and `Ŷ_τ = g_τ(Y_1)` for BEM.
pub fn interpolate<P: Sde + ?Sized>(
    problem: &P,
    scheme: &SchemeSpec,
    y0: &[f64],
    path: &BrownianPath,
) -> Result<Vec<Vec<f64>>> {
    let (d, m) = (problem.dim_state(), problem.dim_noise());
    check_dims(problem, y0, &vec![0.0; m])?;
    path.check_against(scheme.tau, m)?;
    let maps = modification_maps(problem, *scheme);
    let mut start = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * m];
    maps.frozen(y0, &mut start, &mut b, &mut s);
    Ok(path
        .times
        .iter()
        .enumerate()
        .map(|(n, &t)| {
            let w = path.at(n);
            (0..d)
                .map(|i| {
                    let mut acc = start[i] + t * b[i];
                    for j in 0..m {
                        acc += s[i * m + j] * w[j];
                    }
                    acc
                })
                .collect()
        })
        .collect())
}
