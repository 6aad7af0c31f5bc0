//! Slow f64 reference implementations and the verification suites built on
//! them. Everything here favors obviousness over speed: naive loop nests,
//! f64 throughout, no shared code with the production kernels.
//!
//! The `suites` module packages the checks so that integration tests and the
//! acceptance harness run the exact same code with different iteration
//! counts.

pub mod fullattn;
pub mod kernels;
pub mod refmodel;
pub mod suites;
