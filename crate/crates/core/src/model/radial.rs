use serde::{Deserialize, Serialize};

use super::{AssumptionParams, Sde};
use crate::error::{Error, Result};

/// Derivatives `h, h', …, h''''` of `q ↦ ν (α + β q)^{1/2}`.
pub(crate) fn sqrt_profile(nu: f64, alpha: f64, beta: f64, q: f64) -> [f64; 5] {
    let a = alpha + beta * q;
    let s = a.sqrt();
    [
        nu * s,
        nu * beta / (2.0 * s),
        -nu * beta * beta / (4.0 * a * s),
        3.0 * nu * beta.powi(3) / (8.0 * a * a * s),
        -15.0 * nu * beta.powi(4) / (16.0 * a * a * a * s),
    ]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// k-th directional derivative of `x ↦ h(|x|²)` given the profile
/// derivatives `h[0..=4]` at `q = |x|²` (Faà di Bruno with a quadratic
/// inner map).
pub(crate) fn compose_quadratic(h: &[f64; 5], x: &[f64], dirs: &[&[f64]]) -> f64 {
    let q1 = |v: &[f64]| 2.0 * dot(x, v);
    let q2 = |v: &[f64], w: &[f64]| 2.0 * dot(v, w);
    match dirs.len() {
        0 => h[0],
        1 => h[1] * q1(dirs[0]),
        2 => {
            let (a, b) = (dirs[0], dirs[1]);
            h[2] * q1(a) * q1(b) + h[1] * q2(a, b)
        }
        3 => {
            let (a, b, c) = (dirs[0], dirs[1], dirs[2]);
            h[3] * q1(a) * q1(b) * q1(c)
                + h[2] * (q2(a, b) * q1(c) + q2(a, c) * q1(b) + q2(b, c) * q1(a))
        }
        4 => {
            let (a, b, c, d) = (dirs[0], dirs[1], dirs[2], dirs[3]);
            let (qa, qb, qc, qd) = (q1(a), q1(b), q1(c), q1(d));
            h[4] * qa * qb * qc * qd
                + h[3]
                    * (q2(a, b) * qc * qd
                        + q2(a, c) * qb * qd
                        + q2(a, d) * qb * qc
                        + q2(b, c) * qa * qd
                        + q2(b, d) * qa * qc
                        + q2(c, d) * qa * qb)
                + h[2] * (q2(a, b) * q2(c, d) + q2(a, c) * q2(b, d) + q2(a, d) * q2(b, c))
        }
        _ => f64::NAN,
    }
}

/// Rotation-invariant problem on ℝ^d with `m = d`:
/// `b(x) = −(a + c|x|²) x`, `σ(x) = ν (α + β|x|²)^{1/2} I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialSde {
    pub name: String,
    pub dim: usize,
    pub linear: f64,
    pub cubic: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub params: AssumptionParams,
}

impl RadialSde {
    #[inline]
    fn drift_profile(&self, q: f64) -> [f64; 5] {
        [-(self.linear + self.cubic * q), -self.cubic, 0.0, 0.0, 0.0]
    }

    fn check_order(k: usize) -> Result<()> {
        if k == 0 || k > 4 {
            return Err(Error::MissingDerivative {
                what: "radial coefficient",
                order: k,
            });
        }
        Ok(())
    }
}

impl Sde for RadialSde {
    fn dim_state(&self) -> usize {
        self.dim
    }
    fn dim_noise(&self) -> usize {
        self.dim
    }
    fn params(&self) -> &AssumptionParams {
        &self.params
    }
    #[inline]
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let q = dot(x, x);
        let g = -(self.linear + self.cubic * q);
        for (o, v) in out.iter_mut().zip(x) {
            *o = g * v;
        }
    }
    #[inline]
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let s = self.nu * (self.alpha + self.beta * dot(x, x)).sqrt();
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            out[i * d + i] = s;
        }
    }
    fn drift_deriv(&self, x: &[f64], dirs: &[&[f64]], out: &mut [f64]) -> Result<()> {
        let k = dirs.len();
        Self::check_order(k)?;
        let g = self.drift_profile(dot(x, x));
        // D^k[x G](v) = x D^k G(v) + Σ_i v_i D^{k-1} G(v without i)
        let full = compose_quadratic(&g, x, dirs);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi * full;
        }
        let mut rest: Vec<&[f64]> = Vec::with_capacity(k);
        for i in 0..k {
            rest.clear();
            rest.extend(dirs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v));
            let c = compose_quadratic(&g, x, &rest);
            for (o, vi) in out.iter_mut().zip(dirs[i]) {
                *o += vi * c;
            }
        }
        Ok(())
    }
    fn diffusion_deriv(
        &self,
        x: &[f64],
        column: usize,
        dirs: &[&[f64]],
        out: &mut [f64],
    ) -> Result<()> {
        Self::check_order(dirs.len())?;
        if column >= self.dim {
            return Err(Error::Dimension {
                what: "diffusion column",
                expected: self.dim,
                got: column + 1,
            });
        }
        let h = sqrt_profile(self.nu, self.alpha, self.beta, dot(x, x));
        let s = compose_quadratic(&h, x, dirs);
        out.iter_mut().for_each(|v| *v = 0.0);
        out[column] = s;
        Ok(())
    }
}
