use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A scalar function with first and second derivatives, as needed by the
/// generator `𝒜f = ∇f·b + ½ Σ_j ∇²f(σ_j, σ_j)`.
pub trait SmoothFunction: Sync {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    /// Row-major `d × d` Hessian.
    fn hessian(&self, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// Value, gradient and Hessian in one call.
    fn jet2(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> Result<f64> {
        self.gradient(x, grad)?;
        self.hessian(x, hess)?;
        self.value(x)
    }
}

/// One-dimensional profile `h`; the test function is `φ(x) = h(x_1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Constant { value: f64 },
    Identity,
    Square,
    Tanh,
    /// x² / (1 + x²)
    RationalSquare,
}

impl Profile {
    /// k-th derivative of the profile, k = 0..=4.
    pub fn deriv(&self, k: usize, x: f64) -> f64 {
        match *self {
            Profile::Constant { value } => {
                if k == 0 {
                    value
                } else {
                    0.0
                }
            }
            Profile::Identity => match k {
                0 => x,
                1 => 1.0,
                _ => 0.0,
            },
            Profile::Square => match k {
                0 => x * x,
                1 => 2.0 * x,
                2 => 2.0,
                _ => 0.0,
            },
            Profile::Tanh => {
                let t = x.tanh();
                let s = 1.0 - t * t;
                match k {
                    0 => t,
                    1 => s,
                    2 => -2.0 * t * s,
                    3 => -2.0 * s * (1.0 - 3.0 * t * t),
                    4 => 8.0 * t * s * (2.0 - 3.0 * t * t),
                    _ => 0.0,
                }
            }
            Profile::RationalSquare => {
                let x2 = x * x;
                let u = 1.0 / (1.0 + x2);
                match k {
                    0 => x2 * u,
                    1 => 2.0 * x * u * u,
                    2 => (2.0 - 6.0 * x2) * u * u * u,
                    3 => 24.0 * x * (x2 - 1.0) * u.powi(4),
                    4 => 24.0 * (-5.0 * x2 * x2 + 10.0 * x2 - 1.0) * u.powi(5),
                    _ => 0.0,
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Profile::Constant { .. })
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Constant { value } => write!(f, "constant:{value}"),
            Profile::Identity => f.write_str("identity"),
            Profile::Square => f.write_str("square"),
            Profile::Tanh => f.write_str("tanh"),
            Profile::RationalSquare => f.write_str("rational_square"),
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(v) = s.strip_prefix("constant:") {
            let value = v
                .parse::<f64>()
                .map_err(|e| invalid("phi", format!("bad constant `{v}`: {e}")))?;
            return Ok(Profile::Constant { value });
        }
        match s {
            "constant" => Ok(Profile::Constant { value: 1.0 }),
            "identity" | "x" => Ok(Profile::Identity),
            "square" | "x2" => Ok(Profile::Square),
            "tanh" => Ok(Profile::Tanh),
            "rational_square" | "x2_over_1px2" => Ok(Profile::RationalSquare),
            other => Err(invalid("phi", format!("unknown test function `{other}`"))),
        }
    }
}

/// Test function `φ(x) = h(x_1)` with derivatives up to order four and a
/// bound on the seminorm `|φ|_4 = Σ_{i≤4} sup ‖∇^i φ‖`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub profile: Profile,
    pub seminorm_bound: f64,
}

impl TestFunction {
    pub fn new(profile: Profile) -> Self {
        let seminorm_bound = match profile {
            Profile::Constant { .. } => 0.0,
            Profile::Identity => 1.0,
            Profile::Square => f64::INFINITY,
            Profile::Tanh | Profile::RationalSquare => scanned_seminorm(&profile),
        };
        Self {
            profile,
            seminorm_bound,
        }
    }

    pub fn tanh() -> Self {
        Self::new(Profile::Tanh)
    }

    pub fn rational_square() -> Self {
        Self::new(Profile::RationalSquare)
    }

    pub fn constant(value: f64) -> Self {
        Self::new(Profile::Constant { value })
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.profile.deriv(0, x[0])
    }

    /// Scalar derivative `h^{(k)}(x)`.
    #[inline]
    pub fn d1(&self, k: usize, x: f64) -> f64 {
        self.profile.deriv(k, x)
    }

    /// `∇^k φ(x)(v_1, …, v_k)`.
    pub fn deriv(&self, x: &[f64], dirs: &[&[f64]]) -> Result<f64> {
        let k = dirs.len();
        if k > 4 {
            return Err(Error::MissingDerivative {
                what: "test function",
                order: k,
            });
        }
        Ok(self.profile.deriv(k, x[0]) * dirs.iter().map(|v| v[0]).product::<f64>())
    }
}

impl SmoothFunction for TestFunction {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval(x))
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[0] = self.profile.deriv(1, x[0]);
        Ok(())
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[0] = self.profile.deriv(2, x[0]);
        Ok(())
    }
}

fn scanned_seminorm(profile: &Profile) -> f64 {
    // All bounded profiles here attain their derivative extrema in |x| < 5.
    let n = 200_000;
    let mut total = 0.0;
    for k in 1..=4 {
        let mut sup = 0.0f64;
        for i in 0..=n {
            let x = -20.0 + 40.0 * i as f64 / n as f64;
            sup = sup.max(profile.deriv(k, x).abs());
        }
        total += sup;
    }
    total * (1.0 + 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
    }

    #[test]
    fn profile_derivatives_match_finite_differences() {
        for p in [Profile::Tanh, Profile::RationalSquare, Profile::Square, Profile::Identity] {
            for k in 1..=4 {
                for &x in &[-2.3, -0.7, 0.0, 0.4, 1.1, 3.0] {
                    let fd = central(|t| p.deriv(k - 1, t), x, 1e-3);
                    let exact = p.deriv(k, x);
                    let rel = (fd - exact).abs() / exact.abs().max(1.0);
                    assert!(rel < 1e-5, "{p} k={k} x={x}: {fd} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn seminorm_covers_samples() {
        let phi = TestFunction::tanh();
        assert!(phi.seminorm_bound.is_finite());
        for i in 0..1000 {
            let x = -7.0 + 0.014 * i as f64;
            let s: f64 = (1..=4).map(|k| phi.d1(k, x).abs()).sum();
            assert!(s <= phi.seminorm_bound);
        }
    }

    #[test]
    fn parse_ids() {
        assert_eq!("tanh".parse::<Profile>().unwrap(), Profile::Tanh);
        assert_eq!(
            "constant:2.5".parse::<Profile>().unwrap(),
            Profile::Constant { value: 2.5 }
        );
        assert!("sin".parse::<Profile>().is_err());
        for p in [Profile::Tanh, Profile::RationalSquare, Profile::Constant { value: -1.0 }] {
            assert_eq!(p.to_string().parse::<Profile>().unwrap(), p);
        }
    }
}
