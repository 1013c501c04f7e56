//! Error measures for registration results.

use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, RigidTransform, Rotation};
use crate::mixture::{Assignment, Label};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Geodesic angle between estimate and truth over π, in percent.
    pub rotation_error_pct: f64,
    /// ‖t − t_g‖/‖t_g‖ in percent; may exceed 100.
    pub translation_error_pct: f64,
    pub correct_match_pct: f64,
    /// RMS residual over the estimated inliers.
    pub minimization_error: f64,
    pub iterations: usize,
    pub wall_time_ms: f64,
}

pub fn rotation_error_pct(est: &Rotation, truth: &Rotation) -> f64 {
    est.angle_to(truth) / std::f64::consts::PI * 100.0
}

/// Relative translation error. When ‖t_g‖ < 1e-12 the absolute error is
/// used instead (i.e. a unit reference length).
pub fn translation_error_pct(est: &nalgebra::Vector3<f64>, truth: &nalgebra::Vector3<f64>) -> f64 {
    let err = (est - truth).norm();
    let reference = truth.norm();
    if reference < 1e-12 {
        err * 100.0
    } else {
        err / reference * 100.0
    }
}

/// Share of data points whose label equals the generator's label.
pub fn correct_match_pct(assignment: &Assignment, truth: &[Label]) -> f64 {
    if truth.is_empty() {
        return 100.0;
    }
    let ok = assignment.labels().iter().zip(truth).filter(|(a, b)| a == b).count();
    ok as f64 / truth.len() as f64 * 100.0
}

/// √(1/n_in Σ‖Y_j − R X_i − t‖²) over data labeled as inliers; 0 if none.
pub fn minimization_error(data: &[Point3], model: &[Point3], transform: &RigidTransform, assignment: &Assignment) -> f64 {
    let (sum, n) = data.iter().zip(assignment.labels()).fold((0.0, 0usize), |(s, n), (y, l)| match l {
        Label::Inlier(i) => (s + (y - transform.apply(&model[*i])).norm_squared(), n + 1),
        Label::Outlier => (s, n),
    });
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Everything needed to score one run.
pub struct Outcome<'a> {
    pub transform: &'a RigidTransform,
    pub assignment: &'a Assignment,
    pub iterations: usize,
    pub wall_time_ms: f64,
}

pub fn compute_metrics(
    outcome: &Outcome<'_>,
    data: &[Point3],
    model: &[Point3],
    ground_truth: &RigidTransform,
    labels: &[Label],
) -> Metrics {
    Metrics {
        rotation_error_pct: rotation_error_pct(&outcome.transform.rotation, &ground_truth.rotation),
        translation_error_pct: translation_error_pct(&outcome.transform.translation, &ground_truth.translation),
        correct_match_pct: correct_match_pct(outcome.assignment, labels),
        minimization_error: minimization_error(data, model, outcome.transform, outcome.assignment),
        iterations: outcome.iterations,
        wall_time_ms: outcome.wall_time_ms,
    }
}
