//! Self-normalized statistics of i.i.d. samples: exact and Monte Carlo
//! moments of Student's t, concentration-based finiteness classification,
//! and the finite-dimensional geometry behind the near-degenerate event.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the range
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod cli;
pub mod dist;
pub mod error;
pub mod exact;
pub mod extended;
pub mod geom;
pub mod mc;
pub mod quad;
pub mod selfnorm;
pub mod survival;

pub use dist::{DistributionSpec, Family};
pub use error::{Error, Result};
pub use extended::Extended;
