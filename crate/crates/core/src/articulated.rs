//! Kinematic chains and part-by-part articulated registration.
//!
//! Part `p` hangs off its parent `a` through a fixed frame `F_p` and a
//! rotational joint `J_p(θ)`, so `T_p = T_a · F_p · J_p(θ)`. With
//! `G = T_a · F_p` the world position of a part point is
//! `R_G R_p X + t_G = U_p (R_G X) + t_G`, which is a rigid problem in the
//! conjugated rotation `U_p = R_G R_p R_Gᵀ` with the translation held at `t_G`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose, BoundingBox, Homogeneous4, Point3, PointSet, RigidTransform, Rotation};
use crate::mixture::{Assignment, CovarianceMode, Label, MixtureConfig};
use crate::rigid::{run, RigidResult, TranslationMode};
use crate::sdp::sphere_directions;

/// Fixed change of coordinates followed by 1 to 3 rotations, applied in
/// declaration order: `J(θ) = Rot(a₁, θ₁)·Rot(a₂, θ₂)·…`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub fixed_frame: Homogeneous4,
    axes: Vec<Vector3<f64>>,
}

impl JointSpec {
    pub fn new(fixed_frame: Homogeneous4, axes: Vec<Vector3<f64>>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 3 {
            return Err(Error::InvalidConfig(format!("a joint has 1 to 3 degrees of freedom, got {}", axes.len())));
        }
        let axes = axes
            .into_iter()
            .map(|a| {
                let n = a.norm();
                if n.is_finite() && n > 1e-12 {
                    Ok(a / n)
                } else {
                    Err(Error::InvalidConfig("joint axis must be a finite non-zero vector".into()))
                }
            })
            .collect::<Result<_>>()?;
        Ok(JointSpec { fixed_frame, axes })
    }

    /// Unit axes in application order.
    pub fn axes(&self) -> &[Vector3<f64>] {
        &self.axes
    }

    pub fn dof(&self) -> usize {
        self.axes.len()
    }

    /// Joint rotation for the given angles (radians).
    pub fn rotation(&self, angles: &[f64]) -> Rotation {
        self.axes
            .iter()
            .zip(angles)
            .fold(Rotation::identity(), |r, (a, t)| r.compose(&Rotation::from_axis_angle(a, *t)))
    }

    /// Angles whose joint rotation is closest to `target` in Frobenius norm.
    /// One axis is solved in closed form; several by coordinate ascent from
    /// `start` and from zero, keeping the better fit.
    pub fn fit_angles(&self, target: &Rotation, start: &[f64]) -> Vec<f64> {
        let m = target.matrix();
        if self.dof() == 1 {
            return vec![best_angle(m, &self.axes[0])];
        }
        let fit = |angles: &[f64]| (self.rotation(angles).matrix() - m).norm_squared();
        let zero = vec![0.0; self.dof()];
        let warm: Vec<f64> = if start.len() == self.dof() { start.to_vec() } else { zero.clone() };
        [warm, zero]
            .into_iter()
            .map(|s| self.coordinate_ascent(m, s))
            .min_by(|a, b| fit(a).total_cmp(&fit(b)))
            .expect("two starts")
    }

    fn coordinate_ascent(&self, m: &Matrix3<f64>, mut angles: Vec<f64>) -> Vec<f64> {
        for _ in 0..500 {
            let mut change: f64 = 0.0;
            for k in 0..self.dof() {
                let before = self.rotation(&angles[..k]);
                let after = self.axes[k + 1..]
                    .iter()
                    .zip(&angles[k + 1..])
                    .fold(Rotation::identity(), |r, (a, t)| r.compose(&Rotation::from_axis_angle(a, *t)));
                let local = before.matrix().transpose() * m * after.matrix().transpose();
                let theta = best_angle(&local, &self.axes[k]);
                change = change.max(wrap_angle(theta - angles[k]).abs());
                angles[k] = theta;
            }
            if change < 1e-13 {
                break;
            }
        }
        angles
    }
}

/// argmax_θ tr(Mᵀ Rot(a, θ)): with Rot = cos θ I + sin θ [a]× + (1 − cos θ) aaᵀ
/// the cos and sin coefficients are tr M − aᵀMa and ⟨M, [a]×⟩.
fn best_angle(m: &Matrix3<f64>, a: &Vector3<f64>) -> f64 {
    let c = m.trace() - a.dot(&(m * a));
    let s = m.component_mul(&crate::geometry::skew(a)).sum();
    s.atan2(c)
}

fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    x - two_pi * ((x + std::f64::consts::PI) / two_pi).floor()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub name: String,
    /// `None` only for the root.
    pub parent: Option<usize>,
    pub joint: Option<JointSpec>,
    /// Model points in the part's local frame.
    pub points: PointSet,
}

/// Parts in index order; every parent precedes its children and part 0 is
/// the jointless root.
#[derive(Debug, Clone, PartialEq)]
pub struct ArticulatedModel {
    parts: Vec<Part>,
}

impl ArticulatedModel {
    pub fn new(parts: Vec<Part>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if parts.is_empty() {
            return bad("a model needs at least the root part".into());
        }
        for (p, part) in parts.iter().enumerate() {
            if part.points.len() < 3 {
                return bad(format!("part {p} has {} points, need at least 3", part.points.len()));
            }
            if part.points.iter().any(|x| !x.iter().all(|v| v.is_finite())) {
                return bad(format!("part {p} has non-finite points"));
            }
            match (p, part.parent, &part.joint) {
                (0, None, None) => {}
                (0, _, _) => return bad("part 0 is the root and has neither parent nor joint".into()),
                (_, Some(q), Some(_)) if q < p => {}
                (_, Some(q), Some(_)) => return bad(format!("part {p} has parent {q}; parents must come first")),
                _ => return bad(format!("part {p} needs a parent and a joint")),
            }
        }
        Ok(ArticulatedModel { parts })
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn n_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn n_points(&self) -> usize {
        self.parts.iter().map(|p| p.points.len()).sum()
    }

    pub fn n_dof(&self) -> usize {
        self.parts.iter().filter_map(|p| p.joint.as_ref()).map(|j| j.dof()).sum()
    }

    /// Index of each part's first point in the concatenated point list.
    pub fn offsets(&self) -> Vec<usize> {
        self.parts
            .iter()
            .scan(0, |acc, p| {
                let o = *acc;
                *acc += p.points.len();
                Some(o)
            })
            .collect()
    }

    /// Parts in depth-first pre-order, children in declaration order, so
    /// each chain is visited in full before the next one starts.
    pub fn chain_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.parts.len());
        let mut stack = vec![0];
        while let Some(p) = stack.pop() {
            order.push(p);
            let children: Vec<usize> = (0..self.parts.len()).filter(|&c| self.parts[c].parent == Some(p)).collect();
            stack.extend(children.into_iter().rev());
        }
        order
    }

    /// All model points placed by `transforms`, in part order.
    pub fn posed_points(&self, transforms: &PartTransforms) -> PointSet {
        self.parts
            .iter()
            .zip(&transforms.0)
            .flat_map(|(part, t)| part.points.iter().map(move |x| t.apply(x)))
            .collect()
    }

    pub fn rest_pose(&self) -> PoseParams {
        PoseParams {
            root: RigidTransform::identity(),
            joints: self.parts.iter().map(|p| vec![0.0; p.joint.as_ref().map_or(0, |j| j.dof())]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub root: RigidTransform,
    /// Joint angles in radians, indexed by part; empty for the root.
    pub joints: Vec<Vec<f64>>,
}

impl PoseParams {
    pub fn check(&self, model: &ArticulatedModel) -> Result<()> {
        if self.joints.len() != model.n_parts() {
            return Err(Error::DimensionMismatch(format!(
                "pose has {} parts, model has {}",
                self.joints.len(),
                model.n_parts()
            )));
        }
        for (p, (angles, part)) in self.joints.iter().zip(model.parts()).enumerate() {
            let dof = part.joint.as_ref().map_or(0, |j| j.dof());
            if angles.len() != dof {
                return Err(Error::DimensionMismatch(format!("part {p} expects {dof} angles, got {}", angles.len())));
            }
            if angles.iter().any(|a| !a.is_finite()) {
                return Err(Error::InvalidConfig(format!("part {p} has non-finite angles")));
            }
        }
        Ok(())
    }
}

/// World displacement `T_p` of every part.
#[derive(Debug, Clone, PartialEq)]
pub struct PartTransforms(pub Vec<Homogeneous4>);

impl PartTransforms {
    pub fn get(&self, p: usize) -> &Homogeneous4 {
        &self.0[p]
    }
}

/// `G = T_parent · F_p`, the frame the joint of part `p` rotates in.
fn joint_base(model: &ArticulatedModel, transforms: &[Homogeneous4], p: usize) -> Homogeneous4 {
    let part = &model.parts[p];
    let (Some(q), Some(joint)) = (part.parent, &part.joint) else {
        return Homogeneous4::identity();
    };
    compose(&transforms[q], &joint.fixed_frame)
}

pub fn forward_kinematics(model: &ArticulatedModel, pose: &PoseParams) -> Result<PartTransforms> {
    pose.check(model)?;
    let mut out: Vec<Homogeneous4> = Vec::with_capacity(model.n_parts());
    for (p, part) in model.parts.iter().enumerate() {
        let t = match &part.joint {
            None => pose.root.to_homogeneous(),
            Some(joint) => {
                let g = joint_base(model, &out, p);
                compose(&g, &Homogeneous4::from_rotation(&joint.rotation(&pose.joints[p])))
            }
        };
        out.push(t);
    }
    Ok(PartTransforms(out))
}

/// Part points rotated into the world orientation of the joint frame `g`,
/// and the frame origin as the fixed translation.
pub fn substitute_part_problem(g: &Homogeneous4, points: &[Point3]) -> (PointSet, Vector3<f64>) {
    let r = g.rotation();
    (points.iter().map(|x| r.apply(x)).collect(), g.translation())
}

/// `R_p = R_Gᵀ U R_G`.
pub fn joint_rotation_from_conjugate(g: &Homogeneous4, u: &Rotation) -> Rotation {
    let r = g.rotation();
    r.transpose().compose(u).compose(&r)
}

/// `U = R_G R_p R_Gᵀ`.
pub fn conjugate_of_joint_rotation(g: &Homogeneous4, rp: &Rotation) -> Rotation {
    let r = g.rotation();
    r.compose(rp).compose(&r.transpose())
}

/// Rigid registration of `v` with the translation held at `offset`.
pub fn register_part(
    data: &[Point3],
    v: &[Point3],
    offset: &Vector3<f64>,
    config: &MixtureConfig,
    init: &Rotation,
) -> Result<(Rotation, RigidResult)> {
    let res = run(data, v, config, RigidTransform::new(*init, *offset), TranslationMode::Fixed(*offset))?;
    Ok((res.transform.rotation, res))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartReport {
    /// False when the part found no support; its joint keeps the initial
    /// angles.
    pub registered: bool,
    pub iterations: usize,
    pub converged: bool,
    /// Data points claimed by this part.
    pub n_inliers: usize,
    pub log_likelihood_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArticulatedResult {
    pub pose: PoseParams,
    pub transforms: PartTransforms,
    /// Per data point: `Inlier(k)` indexes the concatenated model points.
    pub assignment: Assignment,
    pub parts: Vec<PartReport>,
}

impl ArticulatedResult {
    pub fn converged(&self) -> bool {
        self.parts.iter().all(|p| !p.registered || p.converged)
    }
}

/// How the initial covariance of each part is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitSigma {
    /// This factor times the diagonal of the part's own model points.
    PartScaled(f64),
    /// The same standard deviation for every part.
    Absolute(f64),
}

/// Default [`InitSigma::PartScaled`] factor.
pub const PART_SIGMA_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedConfig {
    /// Shared settings; its `init_sigma` is replaced per part.
    pub mixture: MixtureConfig,
    pub init_sigma: InitSigma,
}

impl ArticulatedConfig {
    /// Mixture settings from the full data set and common covariances,
    /// since each part problem involves only a handful of model points.
    pub fn for_data(data: &[Point3], model: &ArticulatedModel) -> Self {
        let mixture = MixtureConfig::for_data(data, model.n_points()).with_mode(CovarianceMode::Common);
        ArticulatedConfig { mixture, init_sigma: InitSigma::PartScaled(PART_SIGMA_SCALE) }
    }

    pub fn with_init_sigma(mut self, init_sigma: InitSigma) -> Self {
        self.init_sigma = init_sigma;
        self
    }

    pub fn with_mode(mut self, mode: CovarianceMode) -> Self {
        self.mixture.covariance_mode = mode;
        self
    }

    pub fn part_init_sigma(&self, model: &ArticulatedModel, p: usize) -> f64 {
        match self.init_sigma {
            InitSigma::Absolute(s) => s,
            InitSigma::PartScaled(k) => {
                let diag = BoundingBox::of(&model.parts[p].points).map_or(0.0, |b| b.diagonal());
                k * if diag > 0.0 { diag } else { 1.0 }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = match self.init_sigma {
            InitSigma::PartScaled(s) | InitSigma::Absolute(s) => s,
        };
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidConfig(format!("initial sigma must be positive, got {s}")));
        }
        Ok(())
    }
}

/// Registers the root against all data, then every other part in chain
/// order against the data not yet claimed; each part's inliers are removed
/// before the next part runs.
pub fn ecmpr_articulated(
    data: &[Point3],
    model: &ArticulatedModel,
    config: &ArticulatedConfig,
    init: &PoseParams,
) -> Result<ArticulatedResult> {
    init.check(model)?;
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("need at least one data point".into()));
    }
    let offsets = model.offsets();
    let mut pose = init.clone();
    let mut transforms: Vec<Homogeneous4> = vec![Homogeneous4::identity(); model.n_parts()];
    let mut reports: Vec<Option<PartReport>> = vec![None; model.n_parts()];
    let mut labels = vec![Label::Outlier; data.len()];
    let mut remaining: Vec<usize> = (0..data.len()).collect();

    for p in model.chain_order() {
        let part = &model.parts[p];
        let subset: PointSet = remaining.iter().map(|&j| data[j]).collect();
        let points = &part.points;
        let part_config = config.mixture.with_init_sigma(config.part_init_sigma(model, p));
        let outcome = match &part.joint {
            None => {
                if subset.is_empty() {
                    Err(Error::NoSupport)
                } else {
                    run(&subset, points, &part_config, pose.root, TranslationMode::Free)
                }
            }
            Some(joint) => {
                let g = joint_base(model, &transforms, p);
                let (v, offset) = substitute_part_problem(&g, points);
                let u0 = conjugate_of_joint_rotation(&g, &joint.rotation(&pose.joints[p]));
                if subset.is_empty() {
                    Err(Error::NoSupport)
                } else {
                    register_part(&subset, &v, &offset, &part_config, &u0).map(|(_, res)| res)
                }
            }
        };
        let res = match outcome {
            Ok(res) if res.assignment.n_inliers() > 0 => Some(res),
            Ok(_) | Err(Error::NoSupport) | Err(Error::DegenerateGeometry) => None,
            Err(e) => return Err(e),
        };
        if let Some(res) = &res {
            match &part.joint {
                None => pose.root = res.transform,
                Some(joint) => {
                    let g = joint_base(model, &transforms, p);
                    let rp = joint_rotation_from_conjugate(&g, &res.transform.rotation);
                    pose.joints[p] = joint.fit_angles(&rp, &pose.joints[p]);
                }
            }
        }
        transforms[p] = match &part.joint {
            None => pose.root.to_homogeneous(),
            Some(joint) => compose(
                &joint_base(model, &transforms, p),
                &Homogeneous4::from_rotation(&joint.rotation(&pose.joints[p])),
            ),
        };
        reports[p] = Some(match res {
            Some(res) => {
                let mut claimed = vec![false; remaining.len()];
                for (k, l) in res.assignment.labels().iter().enumerate() {
                    if let Label::Inlier(i) = *l {
                        labels[remaining[k]] = Label::Inlier(offsets[p] + i);
                        claimed[k] = true;
                    }
                }
                let n_inliers = claimed.iter().filter(|c| **c).count();
                let mut k = 0;
                remaining.retain(|_| {
                    k += 1;
                    !claimed[k - 1]
                });
                PartReport {
                    registered: true,
                    iterations: res.iterations,
                    converged: res.converged,
                    n_inliers,
                    log_likelihood_trace: res.log_likelihood_trace,
                }
            }
            None => PartReport {
                registered: false,
                iterations: 0,
                converged: false,
                n_inliers: 0,
                log_likelihood_trace: Vec::new(),
            },
        });
    }

    Ok(ArticulatedResult {
        pose,
        transforms: PartTransforms(transforms),
        assignment: Assignment(labels),
        parts: reports.into_iter().map(|r| r.expect("every part visited")).collect(),
    })
}

/// Frame-by-frame registration. Each frame starts from the previous
/// frame's pose; covariances restart from `init_sigma` every frame.
pub fn track(
    frames: &[PointSet],
    model: &ArticulatedModel,
    config: &ArticulatedConfig,
    init: &PoseParams,
) -> Result<Vec<ArticulatedResult>> {
    let mut pose = init.clone();
    let mut out = Vec::with_capacity(frames.len());
    for data in frames {
        let res = ecmpr_articulated(data, model, config, &pose)?;
        pose = res.pose.clone();
        out.push(res);
    }
    Ok(out)
}

/// `n` points spread over an ellipsoid surface (Fibonacci lattice).
pub fn ellipsoid_points(center: &Point3, semi_axes: &Vector3<f64>, n: usize) -> PointSet {
    sphere_directions(n).into_iter().map(|d| center + d.component_mul(semi_axes)).collect()
}

const POINTS_PER_PART: usize = 15;

/// A segment of length `len` along the local +x axis.
fn segment(len: f64, width: f64, thickness: f64) -> PointSet {
    ellipsoid_points(&Vector3::new(len / 2.0, 0.0, 0.0), &Vector3::new(len / 2.0, width, thickness), POINTS_PER_PART)
}

fn joint_at(x: Vector3<f64>, frame_rotation: Rotation, axes: Vec<Vector3<f64>>) -> Result<JointSpec> {
    JointSpec::new(Homogeneous4::from_parts(&frame_rotation, &x), axes)
}

/// Appends a finger of three phalanges hanging off `base`, with a
/// `base_dof`-axis first joint and hinge joints after it.
fn add_finger(
    parts: &mut Vec<Part>,
    name: &str,
    base: usize,
    attach: Vector3<f64>,
    heading: Rotation,
    lengths: [f64; 3],
    base_axes: Vec<Vector3<f64>>,
) -> Result<()> {
    let flex = Vector3::z();
    let mut parent = base;
    for (k, len) in lengths.iter().enumerate() {
        let joint = if k == 0 {
            joint_at(attach, heading, base_axes.clone())?
        } else {
            joint_at(Vector3::new(lengths[k - 1], 0.0, 0.0), Rotation::identity(), vec![flex])?
        };
        parts.push(Part {
            name: format!("{name}-{}", k + 1),
            parent: Some(parent),
            joint: Some(joint),
            points: segment(*len, 0.07 * (1.0 - 0.1 * k as f64), 0.045),
        });
        parent = parts.len() - 1;
    }
    Ok(())
}

/// Four parts in one chain: a root block and three links. The first joint
/// has two axes (flexion about z, then abduction about y), the others one.
pub fn chain4() -> ArticulatedModel {
    let mut parts = vec![Part {
        name: "root".into(),
        parent: None,
        joint: None,
        points: ellipsoid_points(&Point3::zeros(), &Vector3::new(0.5, 0.3, 0.12), POINTS_PER_PART),
    }];
    add_finger(
        &mut parts,
        "link",
        0,
        Vector3::new(0.5, 0.0, 0.0),
        Rotation::identity(),
        [0.6, 0.45, 0.35],
        vec![Vector3::z(), Vector3::y()],
    )
    .expect("valid built-in joints");
    ArticulatedModel::new(parts).expect("valid built-in model")
}

/// A single finger: a metacarpal root and three phalanges, 4 joint angles.
pub fn finger() -> ArticulatedModel {
    let mut parts = vec![Part {
        name: "metacarpal".into(),
        parent: None,
        joint: None,
        points: ellipsoid_points(&Vector3::new(0.0, 0.0, 0.0), &Vector3::new(0.4, 0.12, 0.07), POINTS_PER_PART),
    }];
    add_finger(
        &mut parts,
        "phalanx",
        0,
        Vector3::new(0.4, 0.0, 0.0),
        Rotation::identity(),
        [0.45, 0.3, 0.22],
        vec![Vector3::z(), Vector3::y()],
    )
    .expect("valid built-in joints");
    ArticulatedModel::new(parts).expect("valid built-in model")
}

/// Palm plus five three-phalanx fingers: 16 parts, 240 points, 21 joint
/// angles (two at each finger base, three at the thumb base, hinges
/// elsewhere).
pub fn hand() -> ArticulatedModel {
    let mut parts = vec![Part {
        name: "palm".into(),
        parent: None,
        joint: None,
        points: ellipsoid_points(&Point3::zeros(), &Vector3::new(0.45, 0.42, 0.12), POINTS_PER_PART),
    }];
    let fingers = [
        ("index", 0.27, [0.4, 0.25, 0.18]),
        ("middle", 0.09, [0.45, 0.28, 0.2]),
        ("ring", -0.09, [0.42, 0.26, 0.19]),
        ("little", -0.27, [0.33, 0.2, 0.16]),
    ];
    for (name, y, lengths) in fingers {
        add_finger(
            &mut parts,
            name,
            0,
            Vector3::new(0.45, y, 0.0),
            Rotation::identity(),
            lengths,
            vec![Vector3::z(), Vector3::y()],
        )
        .expect("valid built-in joints");
    }
    add_finger(
        &mut parts,
        "thumb",
        0,
        Vector3::new(0.0, 0.42, 0.0),
        Rotation::rot_z(50f64.to_radians()),
        [0.35, 0.25, 0.2],
        vec![Vector3::z(), Vector3::y(), Vector3::x()],
    )
    .expect("valid built-in joints");
    ArticulatedModel::new(parts).expect("valid built-in model")
}

pub const BUILTIN_MODELS: [&str; 3] = ["chain4", "finger", "hand"];

pub fn builtin(name: &str) -> Option<ArticulatedModel> {
    match name {
        "chain4" => Some(chain4()),
        "finger" => Some(finger()),
        "hand" => Some(hand()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn two_part() -> ArticulatedModel {
        let pts = vec![Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0), Point3::new(1.0, 1.0, 0.0)];
        ArticulatedModel::new(vec![
            Part { name: "a".into(), parent: None, joint: None, points: pts.clone() },
            Part {
                name: "b".into(),
                parent: Some(0),
                joint: Some(JointSpec::new(Homogeneous4::identity(), vec![Vector3::z()]).unwrap()),
                points: pts,
            },
        ])
        .unwrap()
    }

    #[test]
    fn rest_pose_leaves_points_in_place() {
        let m = two_part();
        let t = forward_kinematics(&m, &m.rest_pose()).unwrap();
        let flat: PointSet = m.parts().iter().flat_map(|p| p.points.clone()).collect();
        assert_eq!(m.posed_points(&t), flat);
    }

    #[test]
    fn root_translation_moves_everything() {
        let m = hand();
        let mut pose = m.rest_pose();
        let shift = Vector3::new(0.3, -1.0, 2.0);
        pose.root = RigidTransform::new(Rotation::identity(), shift);
        let rest = m.posed_points(&forward_kinematics(&m, &m.rest_pose()).unwrap());
        let moved = m.posed_points(&forward_kinematics(&m, &pose).unwrap());
        for (a, b) in rest.iter().zip(&moved) {
            assert_relative_eq!(b - a, shift, epsilon = 1e-14);
        }
    }

    #[test]
    fn hinge_by_hand_composition() {
        let m = two_part();
        let mut pose = m.rest_pose();
        pose.joints[1] = vec![FRAC_PI_2];
        let t = forward_kinematics(&m, &pose).unwrap();
        // rot_z(90°) sends (1,0,0) to (0,1,0) and (1,1,0) to (−1,1,0)
        let pts = m.posed_points(&t);
        assert_relative_eq!(pts[3], Point3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(pts[4], Point3::new(0.0, 2.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(pts[5], Point3::new(-1.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn conjugation_by_hand() {
        // parent frame rotated 90° about z: the local x hinge becomes world y
        let g = Homogeneous4::from_rotation(&Rotation::rot_z(FRAC_PI_2));
        let u = conjugate_of_joint_rotation(&g, &Rotation::rot_x(0.3));
        assert_relative_eq!(u.matrix(), Rotation::rot_y(0.3).matrix(), epsilon = 1e-15);
        let back = joint_rotation_from_conjugate(&g, &u);
        assert_relative_eq!(back.matrix(), Rotation::rot_x(0.3).matrix(), epsilon = 1e-15);
        let (v, t) = substitute_part_problem(&Homogeneous4::identity(), &[Point3::x()]);
        assert_eq!(v, vec![Point3::x()]);
        assert_eq!(t, Vector3::zeros());
    }

    #[test]
    fn builtin_sizes() {
        let h = hand();
        assert_eq!(h.n_parts(), 16);
        assert_eq!(h.n_points(), 240);
        assert_eq!(h.n_dof(), 21);
        assert_eq!(chain4().n_parts(), 4);
        assert_eq!(finger().n_dof(), 4);
        let order = h.chain_order();
        assert_eq!(order[..4], [0, 1, 2, 3]);
        for name in BUILTIN_MODELS {
            assert!(builtin(name).is_some());
        }
    }

    #[test]
    fn invalid_models() {
        let pts = vec![Point3::x(), Point3::y(), Point3::z()];
        let joint = JointSpec::new(Homogeneous4::identity(), vec![Vector3::z()]).unwrap();
        let child = |parent| Part { name: "c".into(), parent, joint: Some(joint.clone()), points: pts.clone() };
        let root = Part { name: "r".into(), parent: None, joint: None, points: pts.clone() };
        assert!(ArticulatedModel::new(vec![]).is_err());
        assert!(ArticulatedModel::new(vec![root.clone(), child(Some(1))]).is_err());
        assert!(ArticulatedModel::new(vec![root.clone(), child(None)]).is_err());
        assert!(ArticulatedModel::new(vec![Part { points: pts[..2].to_vec(), ..root.clone() }]).is_err());
        assert!(JointSpec::new(Homogeneous4::identity(), vec![]).is_err());
        assert!(JointSpec::new(Homogeneous4::identity(), vec![Vector3::zeros()]).is_err());
        let m = ArticulatedModel::new(vec![root, child(Some(0))]).unwrap();
        let mut pose = m.rest_pose();
        pose.joints[1] = vec![0.0, 0.0];
        assert!(forward_kinematics(&m, &pose).is_err());
    }

    #[test]
    fn angle_fitting_round_trips() {
        let hinge = JointSpec::new(Homogeneous4::identity(), vec![Vector3::new(1.0, 2.0, -0.5)]).unwrap();
        for t in [-3.0, -1.0, 0.0, 0.4, 2.9] {
            let fitted = hinge.fit_angles(&hinge.rotation(&[t]), &[0.0]);
            assert_relative_eq!(fitted[0], t, epsilon = 1e-12);
        }
        let ball = JointSpec::new(Homogeneous4::identity(), vec![Vector3::z(), Vector3::y(), Vector3::x()]).unwrap();
        let angles = [0.5, -0.3, 0.8];
        let fitted = ball.fit_angles(&ball.rotation(&angles), &[0.0; 3]);
        for (a, b) in fitted.iter().zip(angles) {
            assert_relative_eq!(*a, b, epsilon = 1e-9);
        }
    }

    fn config_for(data: &[Point3], model: &ArticulatedModel) -> ArticulatedConfig {
        ArticulatedConfig::for_data(data, model)
    }

    #[test]
    fn register_part_recovers_rotation() {
        let v = segment(0.6, 0.07, 0.045);
        let offset = Vector3::new(0.2, -0.1, 0.4);
        for u in [Rotation::identity(), Rotation::from_axis_angle(&Vector3::new(1.0, 1.0, 0.0), 0.5)] {
            let data: PointSet = v.iter().map(|x| u.apply(x) + offset).collect();
            let cfg = MixtureConfig::for_data(&data, v.len());
            let (est, res) = register_part(&data, &v, &offset, &cfg, &Rotation::identity()).unwrap();
            assert!(est.angle_to(&u) < 1e-6, "{}", est.angle_to(&u));
            assert_eq!(res.transform.translation, offset);
        }
    }

    #[test]
    fn small_whole_body_motion_goes_to_the_root() {
        // registration is local: the motion is on the scale of a tracking step
        let m = chain4();
        let mut truth = m.rest_pose();
        truth.root = RigidTransform::new(Rotation::from_axis_angle(&Vector3::new(0.2, 1.0, 0.3), 0.1), Vector3::new(0.05, 0.03, -0.02));
        let data = m.posed_points(&forward_kinematics(&m, &truth).unwrap());
        let res = ecmpr_articulated(&data, &m, &config_for(&data, &m), &m.rest_pose()).unwrap();
        assert!(res.pose.root.rotation.angle_to(&truth.root.rotation) < 1e-6, "{:?}", res.pose);
        for angles in &res.pose.joints {
            for a in angles {
                assert!(a.abs() < 1e-3, "{:?}", res.pose.joints);
            }
        }
    }

    #[test]
    fn joints_at_truth_leave_only_the_root() {
        let m = chain4();
        let mut truth = m.rest_pose();
        truth.root = RigidTransform::new(Rotation::from_axis_angle(&Vector3::new(1.0, 0.0, 1.0), 0.15), Vector3::new(0.04, -0.02, 0.03));
        truth.joints[1] = vec![0.4, 0.1];
        truth.joints[2] = vec![0.5];
        truth.joints[3] = vec![0.3];
        let data = m.posed_points(&forward_kinematics(&m, &truth).unwrap());
        let mut init = truth.clone();
        init.root = RigidTransform::identity();
        let res = ecmpr_articulated(&data, &m, &config_for(&data, &m), &init).unwrap();
        assert!(res.pose.root.rotation.angle_to(&truth.root.rotation) < 1e-9, "{:?}", res.pose.root);
        assert!((res.pose.root.translation - truth.root.translation).norm() < 1e-9);
        for (a, b) in res.pose.joints.iter().flatten().zip(truth.joints.iter().flatten()) {
            assert!((a - b).abs() < 1e-9, "{:?}", res.pose.joints);
        }
    }

    #[test]
    fn single_part_model_is_rigid_registration() {
        let pts = chain4().parts()[0].points.clone();
        let m = ArticulatedModel::new(vec![Part { name: "only".into(), parent: None, joint: None, points: pts.clone() }]).unwrap();
        let t = RigidTransform::new(Rotation::from_axis_angle(&Vector3::new(0.3, 1.0, 0.0), 0.2), Vector3::new(0.1, 0.0, -0.1));
        let mut data = t.apply_all(&pts);
        data.push(Point3::new(2.0, 2.0, 2.0));
        let config = config_for(&data, &m);
        let art = ecmpr_articulated(&data, &m, &config, &m.rest_pose()).unwrap();
        let rigid = crate::rigid::ecmpr_rigid(&data, &pts, &config.mixture.with_init_sigma(config.part_init_sigma(&m, 0))).unwrap();
        assert_eq!(art.pose.root, rigid.transform);
        assert_eq!(art.assignment, rigid.assignment);
    }

    #[test]
    fn inlier_bookkeeping_partitions_the_data() {
        let m = chain4();
        let mut truth = m.rest_pose();
        truth.joints[1] = vec![0.4, 0.1];
        truth.joints[2] = vec![0.5];
        truth.joints[3] = vec![0.3];
        let mut data = m.posed_points(&forward_kinematics(&m, &truth).unwrap());
        data.extend([Point3::new(3.0, 3.0, 3.0), Point3::new(-2.0, 1.0, 0.5)]);
        let res = ecmpr_articulated(&data, &m, &config_for(&data, &m), &m.rest_pose()).unwrap();
        let claimed: usize = res.parts.iter().map(|p| p.n_inliers).sum();
        let outliers = res.assignment.labels().iter().filter(|l| **l == Label::Outlier).count();
        assert_eq!(claimed + outliers, data.len());
        let offsets = m.offsets();
        for (j, l) in res.assignment.labels().iter().enumerate() {
            if let Label::Inlier(k) = l {
                assert!(*k < m.n_points(), "point {j}");
            }
        }
        assert_eq!(offsets, vec![0, 15, 30, 45]);
    }

    #[test]
    fn unsupported_part_keeps_its_initial_angles() {
        let m = chain4();
        // data covers the root only
        let data = m.parts()[0].points.clone();
        let mut init = m.rest_pose();
        init.joints[3] = vec![0.25];
        let res = ecmpr_articulated(&data, &m, &config_for(&data, &m), &init).unwrap();
        assert!(res.parts[0].registered);
        assert!(res.parts[1..].iter().all(|p| !p.registered));
        assert_eq!(res.pose.joints[3], vec![0.25]);
    }
}
