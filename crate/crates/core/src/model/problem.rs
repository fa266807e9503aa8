use serde::{Deserialize, Serialize};

use super::{AssumptionParams, RadialSde, ScalarSde};
use crate::error::{Error, Result};

/// Coefficients of an Itô SDE `dX = b(X) dt + σ(X) dW` on ℝ^d driven by an
/// m-dimensional Wiener process.
///
/// Diffusion matrices are row-major `d × m`; column `j` is `σ_j`.
/// Derivative evaluators return the k-linear form `∇^k b(x)(v_1, …, v_k)`
/// with `k = dirs.len()`. Implementations must be pure.
pub trait Sde: Send + Sync {
    fn dim_state(&self) -> usize;
    fn dim_noise(&self) -> usize;
    fn params(&self) -> &AssumptionParams;

    fn drift(&self, x: &[f64], out: &mut [f64]);
    fn diffusion(&self, x: &[f64], out: &mut [f64]);

    /// Highest derivative order the evaluators support.
    fn max_derivative_order(&self) -> usize {
        4
    }

    fn drift_deriv(&self, x: &[f64], dirs: &[&[f64]], out: &mut [f64]) -> Result<()>;
    fn diffusion_deriv(
        &self,
        x: &[f64],
        column: usize,
        dirs: &[&[f64]],
        out: &mut [f64],
    ) -> Result<()>;

    /// `∇b(x)` as a row-major `d × d` matrix.
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim_state();
        let mut e = vec![0.0; d];
        let mut col = vec![0.0; d];
        for k in 0..d {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[k] = 1.0;
            self.drift_deriv(x, &[&e], &mut col)?;
            for i in 0..d {
                out[i * d + k] = col[i];
            }
        }
        Ok(())
    }
}

/// Euclidean norm, safe against overflow of the squares.
pub fn norm(x: &[f64]) -> f64 {
    if x.len() == 1 {
        return x[0].abs();
    }
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    if scale > 1e150 || scale < 1e-150 {
        let s: f64 = x.iter().map(|v| (v / scale) * (v / scale)).sum();
        return scale * s.sqrt();
    }
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Squared Hilbert–Schmidt norm of a row-major matrix.
pub fn hs_norm_sq(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Built-in problem families, dispatched statically in the hot loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Problem {
    Scalar(ScalarSde),
    Radial(RadialSde),
}

impl Problem {
    pub fn name(&self) -> &str {
        match self {
            Problem::Scalar(p) => &p.name,
            Problem::Radial(p) => &p.name,
        }
    }
}

impl Sde for Problem {
    fn dim_state(&self) -> usize {
        match self {
            Problem::Scalar(p) => p.dim_state(),
            Problem::Radial(p) => p.dim_state(),
        }
    }
    fn dim_noise(&self) -> usize {
        match self {
            Problem::Scalar(p) => p.dim_noise(),
            Problem::Radial(p) => p.dim_noise(),
        }
    }
    fn params(&self) -> &AssumptionParams {
        match self {
            Problem::Scalar(p) => p.params(),
            Problem::Radial(p) => p.params(),
        }
    }
    #[inline]
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Problem::Scalar(p) => p.drift(x, out),
            Problem::Radial(p) => p.drift(x, out),
        }
    }
    #[inline]
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Problem::Scalar(p) => p.diffusion(x, out),
            Problem::Radial(p) => p.diffusion(x, out),
        }
    }
    fn drift_deriv(&self, x: &[f64], dirs: &[&[f64]], out: &mut [f64]) -> Result<()> {
        match self {
            Problem::Scalar(p) => p.drift_deriv(x, dirs, out),
            Problem::Radial(p) => p.drift_deriv(x, dirs, out),
        }
    }
    fn diffusion_deriv(
        &self,
        x: &[f64],
        column: usize,
        dirs: &[&[f64]],
        out: &mut [f64],
    ) -> Result<()> {
        match self {
            Problem::Scalar(p) => p.diffusion_deriv(x, column, dirs, out),
            Problem::Radial(p) => p.diffusion_deriv(x, column, dirs, out),
        }
    }
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Problem::Scalar(p) => p.drift_jacobian(x, out),
            Problem::Radial(p) => p.drift_jacobian(x, out),
        }
    }
}

/// Scalar view of a problem with `d = m = 1`.
#[derive(Clone, Copy)]
pub struct Scalar1d<'a, P: Sde + ?Sized> {
    inner: &'a P,
}

impl<'a, P: Sde + ?Sized> Scalar1d<'a, P> {
    pub fn new(inner: &'a P) -> Result<Self> {
        if inner.dim_state() != 1 {
            return Err(Error::Dimension {
                what: "state (one-dimensional problem required)",
                expected: 1,
                got: inner.dim_state(),
            });
        }
        if inner.dim_noise() != 1 {
            return Err(Error::Dimension {
                what: "noise (one-dimensional problem required)",
                expected: 1,
                got: inner.dim_noise(),
            });
        }
        Ok(Self { inner })
    }

    pub fn problem(&self) -> &'a P {
        self.inner
    }

    #[inline]
    pub fn b(&self, x: f64) -> f64 {
        let mut o = [0.0];
        self.inner.drift(&[x], &mut o);
        o[0]
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        let mut o = [0.0];
        self.inner.diffusion(&[x], &mut o);
        o[0]
    }

    /// k-th derivative of b (k = 0..=4).
    pub fn b_deriv(&self, k: usize, x: f64) -> Result<f64> {
        if k == 0 {
            return Ok(self.b(x));
        }
        if k > 4 {
            return Err(Error::MissingDerivative {
                what: "scalar coefficient",
                order: k,
            });
        }
        let one = [1.0];
        let dirs = [&one[..]; 4];
        let mut o = [0.0];
        self.inner.drift_deriv(&[x], &dirs[..k], &mut o)?;
        Ok(o[0])
    }

    /// k-th derivative of σ (k = 0..=4).
    pub fn sigma_deriv(&self, k: usize, x: f64) -> Result<f64> {
        if k == 0 {
            return Ok(self.sigma(x));
        }
        if k > 4 {
            return Err(Error::MissingDerivative {
                what: "scalar coefficient",
                order: k,
            });
        }
        let one = [1.0];
        let dirs = [&one[..]; 4];
        let mut o = [0.0];
        self.inner.diffusion_deriv(&[x], 0, &dirs[..k], &mut o)?;
        Ok(o[0])
    }
}
