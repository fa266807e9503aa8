//! SDE problems `dX = b(X) dt + σ(X) dW`, smooth test functions and sampled
//! checkers for the dissipativity and growth hypotheses.

mod checks;
mod gallery;
mod params;
mod problem;
mod radial;
mod scalar;
mod test_fn;

pub use checks::{
    check_coercivity, check_growth_bounds, check_monotonicity, growth_margin_for_order,
    AssumptionReport, CheckVerdict, Condition, SampleSpec,
};
pub use gallery::{gallery, GalleryEntry, ProblemStatus};
pub use params::AssumptionParams;
pub use problem::{hs_norm_sq, norm, Problem, Scalar1d, Sde};
pub use radial::RadialSde;
pub use scalar::{Polynomial, ScalarDiffusion, ScalarSde};
pub use test_fn::{Profile, SmoothFunction, TestFunction};
