//! Long-time simulation of SDEs with superlinear coefficients.
//!
//! The crate provides one-step schemes (Euler–Maruyama, tamed, projected and
//! backward Euler), invariant-measure estimators, an exact one-dimensional
//! reference (stationary density and Stein-equation solution), numerical
//! checks of the Stein error representation for one-step schemes, and a
//! harness that measures the order of the ergodic error `|π_τ(φ) − π(φ)|`.
//!
//! All randomness is counter based (see [`noise`]); every estimator is
//! bitwise reproducible for a fixed seed regardless of the number of rayon
//! workers.

pub mod converge;
pub mod ergodic;
mod error;
pub mod model;
pub mod noise;
pub mod oracle1d;
pub mod quadrature;
pub mod schemes;
pub mod stats;
pub mod stein_check;

pub use error::{Error, Result};
pub use model::{AssumptionParams, Problem, Sde, SmoothFunction, TestFunction};
pub use noise::NoiseStream;
pub use schemes::{SchemeKind, SchemeSpec};
