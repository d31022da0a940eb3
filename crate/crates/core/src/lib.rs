//! Dynamic matrix control toolkit.
//!
//! The crate covers the full workflow around two-term and three-term DMC:
//! discrete plant models ([`lti`]), the dynamic matrix and control laws
//! ([`dmc`]), constrained moves through a dense active-set QP ([`qp`]),
//! the equivalent-reference and closed-loop response theory ([`analysis`]),
//! ARMAX identification ([`sysid`]), the two tuning procedures ([`tuning`]),
//! method comparison under model mismatch ([`compare`]) and the scenario
//! file format consumed by the `dmc` binary ([`scenario`]).

pub mod analysis;
pub mod compare;
pub mod dmc;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod lti;
pub mod poly;
pub mod qp;
pub mod scenario;
pub mod signal;
pub mod sim;
pub mod sysid;
pub mod tuning;

pub use error::{Error, Result};
pub use nalgebra;
