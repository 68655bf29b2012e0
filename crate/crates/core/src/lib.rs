//! Geometric video anomaly scoring on the unit hypersphere.

// Parameter checks are written `!(x > 0.0)` so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod dataset;
pub mod dlsp;
pub mod error;
pub mod eval;
pub mod io;
pub mod pipeline;
pub mod prototypes;
pub mod sgp;
pub mod sphere;
pub mod synth;
pub mod vmf;

pub use error::{Error, Result};
pub use prototypes::PrototypeBank;
pub use sphere::{TangentVector, UnitVector};
