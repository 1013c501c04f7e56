//! Shared 3-D geometric types: points, rotations, rigid and homogeneous
//! transforms, and SPD covariances.

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;
pub type PointSet = Vec<Point3>;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

/// Covariances with a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// A proper rotation (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix3<f64>", into = "Matrix3<f64>")]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates orthonormality and orientation within [`ROTATION_TOL`].
    pub fn try_from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("rotation has non-finite entries".into()));
        }
        let dev = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if dev > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidConfig(format!(
                "not a rotation: orthonormality deviation {dev:.3e}, det {det:.12}"
            )));
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix the caller already knows to be a rotation.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        Rotation(exp_so3(&(axis * (angle / n))))
    }

    /// Rotation from a rotation vector (axis scaled by angle).
    pub fn from_rotation_vector(w: &Vector3<f64>) -> Self {
        Rotation(exp_so3(w))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.0 * p
    }

    /// Geodesic angle in [0, π] between `self` and `other`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        rotation_angle(&(self.0 * other.0.transpose()))
    }

    /// Angle of this rotation in [0, π].
    pub fn angle(&self) -> f64 {
        rotation_angle(&self.0)
    }

    /// Maximum absolute deviation of RᵀR from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).abs().max()
    }
}

impl TryFrom<Matrix3<f64>> for Rotation {
    type Error = Error;

    fn try_from(m: Matrix3<f64>) -> Result<Self> {
        Rotation::try_from_matrix(m)
    }
}

impl From<Rotation> for Matrix3<f64> {
    fn from(r: Rotation) -> Self {
        r.0
    }
}

impl TryFrom<Matrix3<f64>> for Covariance3 {
    type Error = Error;

    fn try_from(m: Matrix3<f64>) -> Result<Self> {
        Covariance3::new(m)
    }
}

impl From<Covariance3> for Matrix3<f64> {
    fn from(c: Covariance3) -> Self {
        c.matrix
    }
}

/// Cross-product matrix of `w`.
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues exponential map.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    if theta < 1e-8 {
        // second-order Taylor expansion
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + a * k + b * k * k
}

/// Rotation angle of a (near-)rotation matrix, robust near 0 and π.
pub fn rotation_angle(m: &Matrix3<f64>) -> f64 {
    let w = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let s = 0.5 * w.norm();
    let c = 0.5 * (m.trace() - 1.0);
    s.atan2(c)
}

/// Rigid motion X ↦ R·X + t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn apply(&self, x: &Point3) -> Point3 {
        apply_transform(self, x)
    }

    pub fn apply_all(&self, xs: &[Point3]) -> PointSet {
        xs.iter().map(|x| self.apply(x)).collect()
    }

    pub fn to_homogeneous(&self) -> Homogeneous4 {
        Homogeneous4::from_parts(&self.rotation, &self.translation)
    }
}

/// Returns R·X + t.
pub fn apply_transform(t: &RigidTransform, x: &Point3) -> Point3 {
    t.rotation.matrix() * x + t.translation
}

/// 4×4 displacement matrix with an exact (0,0,0,1) bottom row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homogeneous4(Matrix4<f64>);

impl Homogeneous4 {
    pub fn identity() -> Self {
        Homogeneous4(Matrix4::identity())
    }

    pub fn from_parts(r: &Rotation, t: &Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(r.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
        Homogeneous4(m)
    }

    pub fn from_translation(t: &Vector3<f64>) -> Self {
        Self::from_parts(&Rotation::identity(), t)
    }

    pub fn from_rotation(r: &Rotation) -> Self {
        Self::from_parts(r, &Vector3::zeros())
    }

    /// Validates the bottom row and the rotation block.
    pub fn try_from_matrix(m: Matrix4<f64>) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidConfig(format!(
                "homogeneous matrix bottom row must be (0,0,0,1), got {bottom:?}"
            )));
        }
        Rotation::try_from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("homogeneous matrix has non-finite entries".into()));
        }
        Ok(Homogeneous4(m))
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Rotation {
        Rotation::from_matrix_unchecked(self.0.fixed_view::<3, 3>(0, 0).into_owned())
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn to_rigid(&self) -> RigidTransform {
        RigidTransform::new(self.rotation(), self.translation())
    }

    pub fn apply(&self, x: &Point3) -> Point3 {
        self.0.fixed_view::<3, 3>(0, 0) * x + self.translation()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        let t = -(rt.matrix() * self.translation());
        Self::from_parts(&rt, &t)
    }
}

/// Matrix product T1·T2 with the bottom row reset exactly.
pub fn compose(t1: &Homogeneous4, t2: &Homogeneous4) -> Homogeneous4 {
    let mut m = t1.0 * t2.0;
    m[(3, 0)] = 0.0;
    m[(3, 1)] = 0.0;
    m[(3, 2)] = 0.0;
    m[(3, 3)] = 1.0;
    Homogeneous4(m)
}

/// Symmetric positive-definite 3×3 covariance with a cached inverse and
/// log-determinant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix3<f64>", into = "Matrix3<f64>")]
pub struct Covariance3 {
    matrix: Matrix3<f64>,
    inverse: Matrix3<f64>,
    log_det: f64,
}

impl Covariance3 {
    /// Symmetrizes `m`, then checks definiteness and conditioning.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let m = 0.5 * (m + m.transpose());
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateCovariance { condition: f64::INFINITY });
        }
        let eig = SymmetricEigen::new(m);
        let min = eig.eigenvalues.min();
        let max = eig.eigenvalues.max();
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::DegenerateCovariance { condition });
        }
        let chol = m.cholesky().ok_or(Error::DegenerateCovariance { condition })?;
        let l = chol.l();
        let log_det = 2.0 * (0..3).map(|i| l[(i, i)].ln()).sum::<f64>();
        let inverse = chol.inverse();
        Ok(Covariance3 { matrix: m, inverse: 0.5 * (inverse + inverse.transpose()), log_det })
    }

    pub fn isotropic(variance: f64) -> Result<Self> {
        Self::new(Matrix3::identity() * variance)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &Matrix3<f64> {
        &self.inverse
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Mean of the eigenvalues.
    pub fn mean_variance(&self) -> f64 {
        self.matrix.trace() / 3.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix).eigenvalues.min()
    }

    /// (x−y)ᵀ Σ⁻¹ (x−y) with the cached inverse.
    pub fn mahalanobis_sq(&self, x: &Point3, y: &Point3) -> f64 {
        let d = x - y;
        d.dot(&(self.inverse * d)).max(0.0)
    }
}

/// Squared Mahalanobis distance between `x` and `y` under `sigma`.
pub fn mahalanobis_sq(x: &Point3, y: &Point3, sigma: &Matrix3<f64>) -> Result<f64> {
    Ok(Covariance3::new(*sigma)?.mahalanobis_sq(x, y))
}

/// Nearest rotation in Frobenius norm, with the smallest singular direction
/// flipped when the orthogonal factor is a reflection.
pub fn project_to_rotation(m: &Matrix3<f64>) -> Result<Rotation> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidConfig("matrix has non-finite entries".into()));
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::AmbiguousProjection),
    };
    let s = svd.singular_values;
    // nalgebra does not sort singular values
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let largest = s[order[0]];
    if largest <= f64::MIN_POSITIVE || s[order[1]] <= 1e-12 * largest {
        return Err(Error::AmbiguousProjection);
    }
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(order[2], order[2])] = -1.0;
    }
    let r = u * d * v_t;
    Ok(Rotation::from_matrix_unchecked(reorthonormalize(&r)))
}

/// One Newton step of polar refinement, cleaning rounding in an orthogonal matrix.
fn reorthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    match r.try_inverse() {
        Some(inv) => 0.5 * (r + inv.transpose()),
        None => *r,
    }
}

/// Axis-aligned bounding box of a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Point3,
    pub max: Point3,
}

impl BoundingBox {
    pub fn of(points: &[Point3]) -> Option<Self> {
        let first = points.first()?;
        let mut bb = BoundingBox { min: *first, max: *first };
        for p in &points[1..] {
            bb.min = bb.min.inf(p);
            bb.max = bb.max.sup(p);
        }
        Some(bb)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn center(&self) -> Point3 {
        0.5 * (self.min + self.max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn apply_transform_examples() {
        let id = RigidTransform::identity();
        assert_eq!(apply_transform(&id, &Point3::new(1.0, 2.0, 3.0)), Point3::new(1.0, 2.0, 3.0));

        let qz = RigidTransform::new(Rotation::rot_z(FRAC_PI_2), Vector3::zeros());
        let p = apply_transform(&qz, &Point3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(p, Point3::new(0.0, 1.0, 0.0), epsilon = 1e-15);

        let tr = RigidTransform::new(Rotation::identity(), Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(apply_transform(&tr, &Point3::zeros()), Point3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn mahalanobis_examples() {
        let p = Point3::new(5.0, 5.0, 5.0);
        let sigma = Matrix3::new(2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5);
        assert_eq!(mahalanobis_sq(&p, &p, &sigma).unwrap(), 0.0);

        let x = Point3::new(1.0, 0.0, 0.0);
        let y = Point3::zeros();
        assert_relative_eq!(mahalanobis_sq(&x, &y, &Matrix3::identity()).unwrap(), 1.0);
        let d = Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0));
        assert_relative_eq!(mahalanobis_sq(&x, &y, &d).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn singular_covariance_is_rejected() {
        let x = Point3::new(1.0, 0.0, 0.0);
        let sing = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
        assert!(matches!(
            mahalanobis_sq(&x, &Point3::zeros(), &sing),
            Err(Error::DegenerateCovariance { .. })
        ));
        let ill = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 1e-13));
        assert!(matches!(Covariance3::new(ill), Err(Error::DegenerateCovariance { .. })));
        let neg = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
        assert!(Covariance3::new(neg).is_err());
    }

    #[test]
    fn covariance_log_det_and_inverse() {
        let m = Matrix3::new(4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0);
        let c = Covariance3::new(m).unwrap();
        assert_relative_eq!(c.log_det(), m.determinant().ln(), epsilon = 1e-12);
        assert_relative_eq!(c.inverse() * m, Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn projection_fixed_point_and_scaling() {
        let r = Rotation::from_axis_angle(&Vector3::new(0.3, -0.2, 0.9), 1.1);
        let p = project_to_rotation(r.matrix()).unwrap();
        assert_relative_eq!(p.matrix(), r.matrix(), epsilon = 1e-14);

        let p = project_to_rotation(&(2.0 * Matrix3::identity())).unwrap();
        assert_relative_eq!(p.matrix(), &Matrix3::identity(), epsilon = 1e-15);
    }

    /// Brute-force oracle: maximize tr(RᵀM) (equivalently minimize ‖R−M‖_F)
    /// over a dense axis-angle grid.
    fn grid_best_frobenius(m: &Matrix3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        let n_axes = 400;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        for k in 0..n_axes {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / n_axes as f64;
            let rad = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            let axis = Vector3::new(rad * phi.cos(), rad * phi.sin(), z);
            for a in 0..=90 {
                let angle = std::f64::consts::PI * a as f64 / 90.0;
                let r = Rotation::from_axis_angle(&axis, angle);
                best = best.min((r.matrix() - m).norm());
            }
        }
        best
    }

    #[test]
    fn projection_corrects_reflection() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let r = project_to_rotation(&m).unwrap();
        assert_relative_eq!(r.matrix().determinant(), 1.0, epsilon = 1e-12);
        let ours = (r.matrix() - m).norm();
        let grid = grid_best_frobenius(&m);
        // exact minimum is 2: tr(RᵀM) ≤ 1 over SO(3), so ‖R − M‖² ≥ 6 − 2
        assert_relative_eq!(ours, 2.0, epsilon = 1e-12);
        assert!(ours <= grid + 1e-12, "ours {ours} grid {grid}");
        assert!(grid - ours < 0.05);
    }

    #[test]
    fn projection_rank_deficient() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(project_to_rotation(&m), Err(Error::AmbiguousProjection));
        assert_eq!(project_to_rotation(&Matrix3::zeros()), Err(Error::AmbiguousProjection));
        // rank two is fine
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
        assert!(project_to_rotation(&m).is_ok());
    }

    #[test]
    fn compose_examples() {
        let t = Homogeneous4::from_parts(
            &Rotation::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.7),
            &Vector3::new(0.5, -1.0, 2.0),
        );
        assert_eq!(compose(&Homogeneous4::identity(), &t), t);
        let id = compose(&t, &t.inverse());
        assert_relative_eq!(id.matrix(), Homogeneous4::identity().matrix(), epsilon = 1e-10);

        let t1 = Vector3::new(1.0, 2.0, 3.0);
        let t2 = Vector3::new(-0.5, 4.0, 0.25);
        let c = compose(&Homogeneous4::from_translation(&t1), &Homogeneous4::from_translation(&t2));
        assert_eq!(c, Homogeneous4::from_translation(&(t1 + t2)));
    }

    #[test]
    fn homogeneous_validation() {
        let mut m = Matrix4::identity();
        m[(3, 0)] = 1e-3;
        assert!(Homogeneous4::try_from_matrix(m).is_err());
        assert!(Homogeneous4::try_from_matrix(Matrix4::identity()).is_ok());
    }

    #[test]
    fn rotation_angle_near_pi() {
        let r = Rotation::from_axis_angle(&Vector3::new(1.0, 1.0, 0.0), std::f64::consts::PI);
        assert_relative_eq!(r.angle(), std::f64::consts::PI, epsilon = 1e-12);
        let r = Rotation::rot_x(1e-9);
        assert_relative_eq!(r.angle(), 1e-9, epsilon = 1e-20);
    }
}
