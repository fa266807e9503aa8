use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Constants of the monotonicity/coercivity hypotheses and of the growth
/// bound on the coefficient derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionParams {
    /// Growth exponent γ.
    pub gamma: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    /// Moment exponent p★.
    pub p_star: f64,
    /// Constant C of the derivative growth bound.
    pub growth_const: f64,
}

impl AssumptionParams {
    pub fn new(gamma: f64, l1: f64, l2: f64, l3: f64, p_star: f64, growth_const: f64) -> Result<Self> {
        let p = Self {
            gamma,
            l1,
            l2,
            l3,
            p_star,
            growth_const,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) || !self.gamma.is_finite() {
            return Err(invalid("gamma", format!("must be > 1, got {}", self.gamma)));
        }
        if !(self.l1 > 0.0) {
            return Err(invalid("l1", format!("must be > 0, got {}", self.l1)));
        }
        if !(self.l2 > 0.0) {
            return Err(invalid("l2", format!("must be > 0, got {}", self.l2)));
        }
        if !(self.l3 > 0.0) {
            return Err(invalid("l3", format!("must be > 0, got {}", self.l3)));
        }
        if !(self.p_star >= 2.0) {
            return Err(invalid("p_star", format!("must be >= 2, got {}", self.p_star)));
        }
        if !(self.growth_const > 0.0) {
            return Err(invalid(
                "growth_const",
                format!("must be > 0, got {}", self.growth_const),
            ));
        }
        Ok(())
    }

    /// Moment condition `2p★ ≥ max{5γ−4, 4γ+1}` required by the first-order
    /// ergodic rate for the modified and implicit schemes.
    pub fn meets_rate_moment_condition(&self) -> bool {
        2.0 * self.p_star >= (5.0 * self.gamma - 4.0).max(4.0 * self.gamma + 1.0)
    }

    pub fn validate_for_rate_study(&self) -> Result<()> {
        self.validate()?;
        if !self.meets_rate_moment_condition() {
            return Err(invalid(
                "p_star",
                format!(
                    "2 p_star = {} < max(5 gamma - 4, 4 gamma + 1) = {}",
                    2.0 * self.p_star,
                    (5.0 * self.gamma - 4.0).max(4.0 * self.gamma + 1.0)
                ),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_one_is_rejected() {
        assert!(AssumptionParams::new(1.0, 1.0, 1.0, 1.0, 2.0, 1.0).is_err());
        assert!(AssumptionParams::new(1.0001, 1.0, 1.0, 1.0, 2.0, 1.0).is_ok());
    }

    #[test]
    fn rate_moment_condition() {
        // gamma = 3 needs 2 p* >= 13
        let p = AssumptionParams::new(3.0, 0.5, 50.0, 0.5, 6.5, 6.0).unwrap();
        assert!(p.meets_rate_moment_condition());
        let p = AssumptionParams::new(3.0, 0.5, 50.0, 0.5, 6.0, 6.0).unwrap();
        assert!(!p.meets_rate_moment_condition());
        assert!(p.validate_for_rate_study().is_err());
    }

    #[test]
    fn small_p_star_rejected() {
        assert!(AssumptionParams::new(2.0, 1.0, 1.0, 1.0, 1.5, 1.0).is_err());
    }
}
