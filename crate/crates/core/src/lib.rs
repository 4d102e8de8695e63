//! Adaptive recovery of band-limited quaternion-valued graph signals.
//!
//! The crate provides quaternion algebra ([`quat`]), the graph spectral
//! toolkit ([`spectral`]), sampling-set selection ([`sampling`]), the
//! quaternion graph LMS filter with a four-channel real baseline
//! ([`filters`]), the mean / mean-square convergence theory ([`analysis`]),
//! and a deterministic Monte-Carlo experiment harness ([`harness`]).

pub mod analysis;
pub mod error;
pub mod filters;
pub mod harness;
pub mod linalg;
pub mod quat;
pub mod rng;
pub mod sampling;
pub mod spectral;

pub use error::{Error, Result};
pub use quat::{QSignal, Quaternion};
