//! Expectation conditional maximization for rigid and articulated point
//! registration with anisotropic covariances and an outlier class.

pub mod articulated;
pub mod bench;
pub mod error;
pub mod geometry;
pub mod mixture;
pub mod rigid;
pub mod sdp;

pub use error::{Error, Result};
