//! Trimmed ICP baseline with restarts.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::scene::rng_for;
use crate::error::{Error, Result};
use crate::geometry::{project_to_rotation, BoundingBox, Point3, RigidTransform, Rotation};
use crate::mixture::{Assignment, Label};
use crate::sdp::rotation_grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    /// Fraction of data pairs discarded each iteration.
    pub trim_fraction: f64,
    /// Restart 0 starts from the identity; the rest from grid rotations.
    pub n_restarts: usize,
    /// Match-acceptance distance for labeling.
    pub threshold: f64,
    pub seed: u64,
    pub max_iterations: usize,
    /// Stop when the trimmed RMS improves by less than this.
    pub tolerance: f64,
}

impl IcpConfig {
    /// Trims the expected outlier share, 10 restarts, threshold 5% of the
    /// data diagonal.
    pub fn for_data(data: &[Point3], trim_fraction: f64, seed: u64) -> Self {
        let diag = BoundingBox::of(data).map(|b| b.diagonal()).filter(|d| *d > 0.0).unwrap_or(1.0);
        IcpConfig { trim_fraction, n_restarts: 10, threshold: 0.05 * diag, seed, max_iterations: 100, tolerance: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub assignment: Assignment,
    /// Iterations summed over all restarts.
    pub iterations: usize,
    pub trimmed_error: f64,
    /// Trimmed RMS per iteration of the winning restart.
    pub error_trace: Vec<f64>,
}

fn nearest(p: &Point3, pts: &[Point3]) -> (usize, f64) {
    pts.iter()
        .enumerate()
        .map(|(i, q)| (i, (p - q).norm_squared()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, f64::INFINITY))
}

/// Least-squares rigid fit of `src[i] ↦ dst[i]`.
fn fit(src: &[Point3], dst: &[Point3]) -> Option<RigidTransform> {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let h = src.iter().zip(dst).fold(Matrix3::zeros(), |h, (s, d)| h + (d - cd) * (s - cs).transpose());
    let r = project_to_rotation(&h).ok()?;
    Some(RigidTransform::new(r, cd - r.matrix() * cs))
}

struct Run {
    transform: RigidTransform,
    error: f64,
    trace: Vec<f64>,
}

fn run_from(data: &[Point3], model: &[Point3], keep: usize, start: Rotation, cfg: &IcpConfig) -> Run {
    let cd = data.iter().sum::<Vector3<f64>>() / data.len() as f64;
    let cm = model.iter().sum::<Vector3<f64>>() / model.len() as f64;
    let mut tf = RigidTransform::new(start, cd - start.matrix() * cm);
    let mut trace: Vec<f64> = Vec::new();
    for _ in 0..cfg.max_iterations {
        let moved = tf.apply_all(model);
        let mut pairs: Vec<(usize, usize, f64)> =
            data.iter().enumerate().map(|(j, y)| {
                let (i, d) = nearest(y, &moved);
                (j, i, d)
            }).collect();
        pairs.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
        pairs.truncate(keep);
        let err = (pairs.iter().map(|p| p.2).sum::<f64>() / keep as f64).sqrt();
        let improved = trace.last().is_none_or(|last| *last - err > cfg.tolerance);
        trace.push(err);
        if !improved {
            break;
        }
        let src: Vec<Point3> = pairs.iter().map(|p| model[p.1]).collect();
        let dst: Vec<Point3> = pairs.iter().map(|p| data[p.0]).collect();
        match fit(&src, &dst) {
            Some(next) => tf = next,
            None => break,
        }
    }
    // the last fit may not have been scored yet
    let moved = tf.apply_all(model);
    let mut d: Vec<f64> = data.iter().map(|y| nearest(y, &moved).1).collect();
    d.sort_by(f64::total_cmp);
    let err = (d[..keep].iter().sum::<f64>() / keep as f64).sqrt();
    if trace.last().is_none_or(|last| err <= *last) {
        trace.push(err);
    }
    let error = *trace.last().unwrap_or(&f64::INFINITY);
    Run { transform: tf, error, trace }
}

/// Closest data point per model point, kept when within `threshold`.
pub fn threshold_labels(data: &[Point3], model: &[Point3], tf: &RigidTransform, threshold: f64) -> Assignment {
    let mut labels = vec![Label::Outlier; data.len()];
    let mut best = vec![f64::INFINITY; data.len()];
    for (i, x) in model.iter().enumerate() {
        let (j, d2) = nearest(&tf.apply(x), data);
        let d = d2.sqrt();
        if d <= threshold && d < best[j] {
            labels[j] = Label::Inlier(i);
            best[j] = d;
        }
    }
    Assignment(labels)
}

pub fn icp_trimmed(data: &[Point3], model: &[Point3], cfg: &IcpConfig) -> Result<IcpResult> {
    if model.len() < 3 || data.len() < 3 {
        return Err(Error::InvalidConfig("trimmed ICP needs at least 3 data and 3 model points".into()));
    }
    if !(0.0..1.0).contains(&cfg.trim_fraction) || cfg.n_restarts == 0 {
        return Err(Error::InvalidConfig("trim fraction must be in [0, 1) and restarts ≥ 1".into()));
    }
    let keep = (((1.0 - cfg.trim_fraction) * data.len() as f64).round() as usize).clamp(3, data.len());
    let grid = rotation_grid(30.0)?;
    let mut rng = rng_for(cfg.seed, 0);
    let picks = sample(&mut rng, grid.len() - 1, (cfg.n_restarts - 1).min(grid.len() - 1));
    let starts = std::iter::once(Rotation::identity()).chain(picks.iter().map(|k| grid[k + 1]));

    let mut total = 0;
    let mut best: Option<Run> = None;
    for start in starts {
        let run = run_from(data, model, keep, start, cfg);
        total += run.trace.len();
        if best.as_ref().is_none_or(|b| run.error < b.error) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(IcpResult {
        assignment: threshold_labels(data, model, &best.transform, cfg.threshold),
        transform: best.transform,
        iterations: total,
        trimmed_error: best.error,
        error_trace: best.trace,
    })
}
