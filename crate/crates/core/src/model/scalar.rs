use serde::{Deserialize, Serialize};

use super::radial::{compose_quadratic, sqrt_profile};
use super::{AssumptionParams, Sde};
use crate::error::{Error, Result};

/// Polynomial with coefficients in ascending order: `Σ c_k x^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// k-th derivative at x.
    pub fn deriv(&self, k: usize, x: f64) -> f64 {
        let mut acc = 0.0;
        for (n, c) in self.coeffs.iter().enumerate().skip(k).rev() {
            let falling: f64 = ((n - k + 1)..=n).map(|v| v as f64).product();
            acc = acc * x + c * falling;
        }
        acc
    }
}

/// Diffusion coefficient of a scalar problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarDiffusion {
    /// σ(x) = value
    Constant { value: f64 },
    /// σ(x) = c0 + c1 x
    Affine { c0: f64, c1: f64 },
    /// σ(x) = ν (α + β x²)^{1/2}
    SqrtQuadratic { nu: f64, alpha: f64, beta: f64 },
}

impl ScalarDiffusion {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ScalarDiffusion::Constant { value } => value,
            ScalarDiffusion::Affine { c0, c1 } => c0 + c1 * x,
            ScalarDiffusion::SqrtQuadratic { nu, alpha, beta } => nu * (alpha + beta * x * x).sqrt(),
        }
    }

    pub fn deriv(&self, k: usize, x: f64) -> f64 {
        if k == 0 {
            return self.eval(x);
        }
        match *self {
            ScalarDiffusion::Constant { .. } => 0.0,
            ScalarDiffusion::Affine { c1, .. } => {
                if k == 1 {
                    c1
                } else {
                    0.0
                }
            }
            ScalarDiffusion::SqrtQuadratic { nu, alpha, beta } => {
                if k > 4 {
                    return f64::NAN;
                }
                let h = sqrt_profile(nu, alpha, beta, x * x);
                let one = [1.0];
                let dirs = [&one[..]; 4];
                compose_quadratic(&h, &[x], &dirs[..k])
            }
        }
    }
}

/// One-dimensional problem with polynomial drift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarSde {
    pub name: String,
    pub drift: Polynomial,
    pub diffusion: ScalarDiffusion,
    pub params: AssumptionParams,
}

impl ScalarSde {
    pub fn new(
        name: impl Into<String>,
        drift: Polynomial,
        diffusion: ScalarDiffusion,
        params: AssumptionParams,
    ) -> Self {
        Self {
            name: name.into(),
            drift,
            diffusion,
            params,
        }
    }

    fn order_of(dirs: &[&[f64]]) -> Result<(usize, f64)> {
        let k = dirs.len();
        if k == 0 || k > 4 {
            return Err(Error::MissingDerivative {
                what: "scalar coefficient",
                order: k,
            });
        }
        Ok((k, dirs.iter().map(|v| v[0]).product()))
    }
}

impl Sde for ScalarSde {
    fn dim_state(&self) -> usize {
        1
    }
    fn dim_noise(&self) -> usize {
        1
    }
    fn params(&self) -> &AssumptionParams {
        &self.params
    }
    #[inline]
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.drift.eval(x[0]);
    }
    #[inline]
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.diffusion.eval(x[0]);
    }
    fn drift_deriv(&self, x: &[f64], dirs: &[&[f64]], out: &mut [f64]) -> Result<()> {
        let (k, scale) = Self::order_of(dirs)?;
        out[0] = self.drift.deriv(k, x[0]) * scale;
        Ok(())
    }
    fn diffusion_deriv(
        &self,
        x: &[f64],
        column: usize,
        dirs: &[&[f64]],
        out: &mut [f64],
    ) -> Result<()> {
        if column != 0 {
            return Err(Error::Dimension {
                what: "diffusion column",
                expected: 1,
                got: column + 1,
            });
        }
        let (k, scale) = Self::order_of(dirs)?;
        out[0] = self.diffusion.deriv(k, x[0]) * scale;
        Ok(())
    }
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = self.drift.deriv(1, x[0]);
        Ok(())
    }
}
