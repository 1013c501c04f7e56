//! Synthetic benchmark: scene generators, metrics, a trimmed-ICP baseline
//! and seeded batch runs.

pub mod articulated;
pub mod batch;
pub mod icp;
pub mod metrics;
pub mod scene;
pub mod stats;
