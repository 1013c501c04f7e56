//! Articulated scenes and joint trajectories.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::scene::{add_noise, rng_for, uniform_in, NoiseModel};
use crate::articulated::{
    forward_kinematics, joint_rotation_from_conjugate, substitute_part_problem, ArticulatedModel, PoseParams,
};
use crate::error::{Error, Result};
use crate::geometry::{compose, project_to_rotation, BoundingBox, Point3, PointSet, RigidTransform, Rotation};
use crate::mixture::Label;
use crate::rigid::rotation_isotropic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedFrame {
    /// Noisy model points in model order, then outliers.
    pub data: PointSet,
    pub pose: PoseParams,
    /// `Inlier(k)` indexes the concatenated model points.
    pub labels: Vec<Label>,
}

/// One frame per pose. Noise is relative to the diagonal of the posed,
/// noise-free points; `round(outlier_fraction · n_points)` outliers are
/// drawn uniformly over the box of the noisy points. Frame `f` uses RNG
/// stream `f` of `seed`.
pub fn gen_articulated_scene(
    model: &ArticulatedModel,
    trajectory: &[PoseParams],
    noise: NoiseModel,
    outlier_fraction: f64,
    seed: u64,
) -> Result<Vec<ArticulatedFrame>> {
    if trajectory.is_empty() {
        return Err(Error::InvalidConfig("trajectory needs at least one pose".into()));
    }
    if !(0.0..=10.0).contains(&outlier_fraction) {
        return Err(Error::InvalidConfig(format!("outlier fraction {outlier_fraction} out of range")));
    }
    noise.validate()?;
    let n_out = (outlier_fraction * model.n_points() as f64).round() as usize;
    trajectory
        .iter()
        .enumerate()
        .map(|(f, pose)| {
            let mut rng = rng_for(seed, f as u64);
            let clean = model.posed_points(&forward_kinematics(model, pose)?);
            let diag = BoundingBox::of(&clean).map_or(0.0, |b| b.diagonal());
            let sigma = Vector3::from(noise.sigmas()) * diag;
            let mut data: PointSet = clean.iter().map(|p| add_noise(&mut rng, p, &sigma)).collect();
            let span = BoundingBox::of(&data)
                .filter(|b| b.volume() > 0.0)
                .unwrap_or(BoundingBox { min: Point3::repeat(-1.0), max: Point3::repeat(1.0) });
            for _ in 0..n_out {
                data.push(uniform_in(&mut rng, &span));
            }
            let labels = (0..clean.len()).map(Label::Inlier).chain((0..n_out).map(|_| Label::Outlier)).collect();
            Ok(ArticulatedFrame { data, pose: pose.clone(), labels })
        })
        .collect()
}

/// Flexion scale of the first axis of a joint at chain depth 1, 2, 3+.
const FLEXION_BY_DEPTH: [f64; 3] = [1.0, 0.9, 0.7];

/// `n_frames` poses of one flexion cycle: the first axis of every joint
/// follows bend(s) = ½(1 − cos 2πs), scaled by the joint's depth in the
/// chain; further axes swing by 0.15·sin 2πs rad; the root drifts slightly.
/// Frame 0 is the rest pose.
pub fn flexion_trajectory(model: &ArticulatedModel, n_frames: usize) -> Vec<PoseParams> {
    let depth: Vec<usize> = model
        .parts()
        .iter()
        .map(|part| {
            let (mut d, mut q) = (0, part.parent);
            while let Some(k) = q {
                d += 1;
                q = model.parts()[k].parent;
            }
            d
        })
        .collect();
    let two_pi = 2.0 * std::f64::consts::PI;
    (0..n_frames)
        .map(|f| {
            let s = f as f64 / n_frames.max(1) as f64;
            let bend = 0.5 * (1.0 - (two_pi * s).cos());
            let swing = 0.15 * (two_pi * s).sin();
            let root = RigidTransform::new(
                Rotation::from_axis_angle(&Vector3::new(0.3, 1.0, 0.2), 0.15 * (two_pi * s).sin()),
                Vector3::new(0.05 * (two_pi * s).sin(), 0.03 * (two_pi * s).cos() - 0.03, 0.0),
            );
            let joints = model
                .parts()
                .iter()
                .enumerate()
                .map(|(p, part)| match &part.joint {
                    None => vec![],
                    Some(j) => (0..j.dof())
                        .map(|k| if k == 0 { FLEXION_BY_DEPTH[(depth[p] - 1).min(2)] * bend } else { swing })
                        .collect(),
                })
                .collect();
            PoseParams { root, joints }
        })
        .collect()
}

/// A fixed bent pose of the built-in 4-part chain: root turned 10° about
/// (1, 1, 1) and shifted by (0.1, 0.05, 0), joints (25°, 8°), 30°, 20°.
pub fn bent_chain_pose() -> PoseParams {
    let deg = f64::to_radians;
    PoseParams {
        root: RigidTransform::new(Rotation::from_axis_angle(&Vector3::new(1.0, 1.0, 1.0), deg(10.0)), Vector3::new(0.1, 0.05, 0.0)),
        joints: vec![vec![], vec![deg(25.0), deg(8.0)], vec![deg(30.0)], vec![deg(20.0)]],
    }
}

/// Pose fitted by sequential least squares from the generator's labels,
/// part by part in chain order as the registration does. Correspondences
/// and outliers are known, so the residual error is what the noise alone
/// costs under this decomposition.
pub fn oracle_pose(model: &ArticulatedModel, frame: &ArticulatedFrame) -> Result<PoseParams> {
    let offsets = model.offsets();
    let mut pose = model.rest_pose();
    for p in model.chain_order() {
        let part = &model.parts()[p];
        let n = part.points.len();
        let mut w = vec![Point3::zeros(); n];
        let mut seen = vec![false; n];
        for (y, l) in frame.data.iter().zip(&frame.labels) {
            if let Label::Inlier(k) = l {
                if (offsets[p]..offsets[p] + n).contains(k) {
                    w[k - offsets[p]] = *y;
                    seen[k - offsets[p]] = true;
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::DimensionMismatch(format!("frame lacks points of part {p}")));
        }
        match &part.joint {
            None => {
                let ones = vec![1.0; n];
                let r = rotation_isotropic(&w, &ones, &ones, &part.points)?;
                let wbar = w.iter().sum::<Vector3<f64>>() / n as f64;
                let xbar = part.points.iter().sum::<Vector3<f64>>() / n as f64;
                pose.root = RigidTransform::new(r, wbar - r.apply(&xbar));
            }
            Some(joint) => {
                // the joint frame of p only depends on parts already fitted
                let transforms = forward_kinematics(model, &pose)?;
                let parent = part.parent.expect("jointed parts have a parent");
                let g = compose(transforms.get(parent), &joint.fixed_frame);
                let (v, offset) = substitute_part_problem(&g, &part.points);
                let h = w.iter().zip(&v).fold(Matrix3::zeros(), |h, (wi, vi)| h + (wi - offset) * vi.transpose());
                let u = project_to_rotation(&h)?;
                pose.joints[p] = joint.fit_angles(&joint_rotation_from_conjugate(&g, &u), &pose.joints[p]);
            }
        }
    }
    Ok(pose)
}

/// Mean absolute joint-angle difference over all degrees of freedom.
pub fn mean_joint_error(estimate: &PoseParams, truth: &PoseParams) -> f64 {
    let pairs: Vec<(f64, f64)> =
        estimate.joints.iter().flatten().copied().zip(truth.joints.iter().flatten().copied()).collect();
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|(a, b)| wrap(a - b).abs()).sum::<f64>() / pairs.len() as f64
}

fn wrap(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    x - two_pi * ((x + std::f64::consts::PI) / two_pi).floor()
}
