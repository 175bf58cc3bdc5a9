//! Locally noncommutative space-times on flat tangent bundles.
//!
//! The crate is organised bottom-up:
//!
//! - [`jets`]: truncated multivariate Taylor arithmetic, the derivative engine.
//! - [`smoothfn`]: inspectable expression trees for smooth functions.
//! - [`formal`]: truncated power series in the deformation parameter.
//! - [`poisson`]: vertical multivector fields, the Schouten bracket, HKR map
//!   and compactly supported vertical Poisson structures.
//! - [`starprod`]: vertical star products up to a finite order.
//! - [`states`]: deformed point evaluations, expectation values, variances and
//!   the deformed light cone.
//!
//! Points of the tangent bundle `TM = R^n x R^n` are stored as `(p, v)` with
//! the base point first, so a function on `TM` has `2n` variables and the
//! fiber coordinates are `n..2n`.

pub mod formal;
pub mod jets;
pub mod poisson;
pub mod sampling;
pub mod smoothfn;
pub mod starprod;
pub mod states;

mod error;

pub use error::Error;
pub use formal::{FormalSeries, Sign};
pub use jets::{Jet, JetLayout, Scalar};
pub use num_complex::Complex64;
pub use poisson::VerticalMultivector;
pub use smoothfn::{ComplexMap, Elementary, Observable, SmoothMap};
pub use starprod::{StarMode, StarProduct};
pub use states::{CausalClass, QuadraticObservable, StateFunctional};

pub type Result<T, E = Error> = std::result::Result<T, E>;
