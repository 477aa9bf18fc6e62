//! Large-deviation asymptotics for row sums of truncated heavy-tailed
//! triangular arrays: heavy-tailed laws, the recursive constants `c_k`,
//! stable and normal limit moments, and rare-event estimators that check the
//! predicted decay rates.

pub mod distributions;
pub mod error;
pub mod parallel;
pub mod quadrature;
pub mod stable;
pub mod model;
pub mod estimators;
pub mod constants;
pub mod stats;
pub mod harness;

pub use error::{Error, Result};
