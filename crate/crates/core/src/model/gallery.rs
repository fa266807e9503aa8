use serde::{Deserialize, Serialize};

use super::{AssumptionParams, Polynomial, Problem, RadialSde, ScalarDiffusion, ScalarSde};
use crate::error::{invalid, Result};

/// How much of the dissipativity/growth hypotheses a built-in problem meets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemStatus {
    /// Globally Lipschitz; coercivity with γ > 1 does not hold.
    Lipschitz,
    /// Monotonicity, coercivity and derivative growth all hold.
    Full,
    /// Coercive but not globally monotone.
    A1Partial,
}

#[derive(Clone, Debug)]
pub struct GalleryEntry {
    pub id: &'static str,
    pub status: ProblemStatus,
    pub problem: Problem,
}

fn ou() -> GalleryEntry {
    GalleryEntry {
        id: "ou",
        status: ProblemStatus::Lipschitz,
        problem: Problem::Scalar(ScalarSde::new(
            "ou",
            Polynomial::new(vec![0.0, -1.0]),
            ScalarDiffusion::Constant {
                value: std::f64::consts::SQRT_2,
            },
            AssumptionParams {
                gamma: 2.0,
                l1: 1.0,
                l2: 6.0,
                l3: 0.5,
                p_star: 2.0,
                growth_const: 1.0,
            },
        )),
    }
}

fn cubic() -> GalleryEntry {
    GalleryEntry {
        id: "cubic",
        status: ProblemStatus::Full,
        problem: Problem::Scalar(ScalarSde::new(
            "cubic",
            Polynomial::new(vec![0.0, -1.0, 0.0, -1.0]),
            ScalarDiffusion::SqrtQuadratic {
                nu: 0.5,
                alpha: 1.0,
                beta: 1.0,
            },
            AssumptionParams {
                gamma: 3.0,
                l1: 0.5,
                l2: 50.0,
                l3: 0.5,
                p_star: 6.5,
                growth_const: 6.0,
            },
        )),
    }
}

fn double_well() -> GalleryEntry {
    GalleryEntry {
        id: "double_well",
        status: ProblemStatus::A1Partial,
        problem: Problem::Scalar(ScalarSde::new(
            "double_well",
            Polynomial::new(vec![0.0, 1.0, 0.0, -1.0]),
            ScalarDiffusion::Constant {
                value: std::f64::consts::SQRT_2,
            },
            AssumptionParams {
                gamma: 3.0,
                l1: 0.5,
                l2: 8.0,
                l3: 0.5,
                p_star: 2.0,
                growth_const: 6.0,
            },
        )),
    }
}

fn cubic_2d() -> GalleryEntry {
    GalleryEntry {
        id: "cubic_2d",
        status: ProblemStatus::Full,
        problem: Problem::Radial(RadialSde {
            name: "cubic_2d".into(),
            dim: 2,
            linear: 1.0,
            cubic: 1.0,
            nu: 0.5,
            alpha: 1.0,
            beta: 1.0,
            params: AssumptionParams {
                gamma: 3.0,
                l1: 0.25,
                l2: 2.0,
                l3: 0.5,
                p_star: 2.0,
                growth_const: 6.0,
            },
        }),
    }
}

/// Looks up a built-in problem. Aliases: `p1` = `ou`, `p2` = `cubic`,
/// `p3` = `double_well`.
pub fn gallery(id: &str) -> Result<GalleryEntry> {
    match id.trim().to_ascii_lowercase().as_str() {
        "ou" | "p1" => Ok(ou()),
        "cubic" | "p2" => Ok(cubic()),
        "double_well" | "double-well" | "p3" => Ok(double_well()),
        "cubic_2d" => Ok(cubic_2d()),
        other => Err(invalid("problem", format!("unknown problem id `{other}`"))),
    }
}
