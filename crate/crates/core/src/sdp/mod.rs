//! The rotation subproblem for anisotropic covariances.
//!
//! With the translation eliminated, the conditional criterion over R is a
//! quadratic in r = vec(R) (column stacking):
//!
//! ```text
//! f(r) = ½ (rᵀ A r + 2 bᵀ r),   subject to R Rᵀ = I
//! ```
//!
//! Lifting ρ = r rᵀ and relaxing it to ρ ⪰ r rᵀ gives a convex program over
//! the 10×10 block [[ρ, r], [rᵀ, 1]] ⪰ 0, which [`solve_sdp`] solves with a
//! bespoke interior-point method. The relaxed solution is projected onto
//! SO(3) ([`extract_rotation`]) and polished by local descent
//! ([`refine_rotation`]).

mod ipm;

use nalgebra::{Matrix3, SMatrix, SVector, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, project_to_rotation, Covariance3, Point3, Rotation};
use ipm::{Mat as Mat10, StandardSdp, DIM};

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Vector9 = SVector<f64, 9>;

/// Column-stacked vectorization of a 3×3 matrix.
pub fn vec3x3(m: &Matrix3<f64>) -> Vector9 {
    Vector9::from_column_slice(m.as_slice())
}

/// Inverse of [`vec3x3`].
pub fn unvec3x3(r: &Vector9) -> Matrix3<f64> {
    Matrix3::from_column_slice(r.as_slice())
}

/// Kronecker product of two 3×3 matrices.
fn kron3(a: &Matrix3<f64>, b: &Matrix3<f64>) -> Matrix9 {
    let mut out = Matrix9::zeros();
    for i in 0..3 {
        for j in 0..3 {
            out.fixed_view_mut::<3, 3>(3 * i, 3 * j).copy_from(&(b * a[(i, j)]));
        }
    }
    out
}

/// `½(rᵀAr + 2bᵀr)` over rotations.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticRotationProblem {
    pub a: Matrix9,
    pub b: Vector9,
}

impl QuadraticRotationProblem {
    pub fn objective_vec(&self, r: &Vector9) -> f64 {
        0.5 * r.dot(&(self.a * r)) + self.b.dot(r)
    }

    pub fn objective(&self, rot: &Rotation) -> f64 {
        self.objective_vec(&vec3x3(rot.matrix()))
    }

    /// Relaxed objective `½(⟨A, ρ⟩ + 2bᵀr)`.
    pub fn relaxed_objective(&self, rho: &Matrix9, r: &Vector9) -> f64 {
        0.5 * self.a.component_mul(rho).sum() + self.b.dot(r)
    }

    pub fn is_degenerate(&self) -> bool {
        self.a.norm() < 1e-12 && self.b.norm() < 1e-12
    }

    /// Magnitude used to make objective comparisons scale-free.
    pub fn scale(&self) -> f64 {
        self.a.norm() + self.b.norm()
    }
}

fn check_inputs(w: &[Point3], lambda: &[f64], covs: &[Covariance3], x: &[Point3]) -> Result<()> {
    let n = x.len();
    if w.len() != n || lambda.len() != n || covs.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "rotation problem needs matching lengths, got W={}, λ={}, Σ={}, X={}",
            w.len(),
            lambda.len(),
            covs.len(),
            n
        )));
    }
    if lambda.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::InvalidConfig("weights must be non-negative".into()));
    }
    Ok(())
}

/// Builds A and b for the criterion ½Σλ_i‖W_i − R X_i − t‖²_Σi with the
/// optimal translation substituted:
///
/// ```text
/// N = Σ λ_i X_i X_iᵀ ⊗ Σ_i⁻¹      M = Σ λ_i X_iᵀ ⊗ Σ_i⁻¹
/// K = (Σ λ_i Σ_i⁻¹)⁻¹             p = K Σ λ_i Σ_i⁻¹ W_i
/// q = vec(Σ λ_i Σ_i⁻¹ W_i X_iᵀ)
/// A = N − Mᵀ K M                  b = Mᵀ p − q
/// ```
pub fn build_problem(
    w: &[Point3],
    lambda: &[f64],
    covs: &[Covariance3],
    x: &[Point3],
) -> Result<QuadraticRotationProblem> {
    check_inputs(w, lambda, covs, x)?;
    let mut n_mat = Matrix9::zeros();
    let mut m_mat = SMatrix::<f64, 3, 9>::zeros();
    let mut k_inv = Matrix3::zeros();
    let mut pw = Vector3::zeros();
    let mut q = Matrix3::zeros();
    for (((wi, &li), ci), xi) in w.iter().zip(lambda).zip(covs).zip(x) {
        if li == 0.0 {
            continue;
        }
        let si = ci.inverse() * li;
        n_mat += kron3(&(xi * xi.transpose()), &si);
        for c in 0..3 {
            let mut block = m_mat.fixed_view_mut::<3, 3>(0, 3 * c);
            block += si * xi[c];
        }
        k_inv += si;
        pw += si * wi;
        q += si * wi * xi.transpose();
    }
    let k = invert_information(&k_inv)?;
    let p = k * pw;
    let a = n_mat - m_mat.transpose() * k * m_mat;
    let b = m_mat.transpose() * p - vec3x3(&q);
    Ok(QuadraticRotationProblem { a: 0.5 * (a + a.transpose()), b })
}

/// Builds A and b for ½Σλ_i‖W_i − R X_i − t₀‖²_Σi with t₀ held fixed.
pub fn build_problem_fixed_translation(
    w: &[Point3],
    lambda: &[f64],
    covs: &[Covariance3],
    x: &[Point3],
    translation: &Vector3<f64>,
) -> Result<QuadraticRotationProblem> {
    check_inputs(w, lambda, covs, x)?;
    if lambda.iter().sum::<f64>() <= 0.0 {
        return Err(Error::NoSupport);
    }
    let mut a = Matrix9::zeros();
    let mut q = Matrix3::zeros();
    for (((wi, &li), ci), xi) in w.iter().zip(lambda).zip(covs).zip(x) {
        if li == 0.0 {
            continue;
        }
        let si = ci.inverse() * li;
        a += kron3(&(xi * xi.transpose()), &si);
        q += si * (wi - translation) * xi.transpose();
    }
    Ok(QuadraticRotationProblem { a: 0.5 * (a + a.transpose()), b: -vec3x3(&q) })
}

/// Inverts Σλ_iΣ_i⁻¹, failing with `NoSupport` when it is (numerically) singular.
pub(crate) fn invert_information(info: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let eig = SymmetricEigen::new(*info);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || !(min > 1e-14 * max) {
        return Err(Error::NoSupport);
    }
    info.try_inverse().ok_or(Error::NoSupport)
}

/// The six quadratic constraints rᵀΔ_kl r = δ_kl encoding RRᵀ = I.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalityConstraints {
    /// (k, l) for each constraint, zero-based, k ≤ l.
    pub pairs: [(usize, usize); 6],
    pub deltas: [Matrix9; 6],
    pub targets: [f64; 6],
}

/// Δ_kl = I₃ ⊗ (e_k e_lᵀ + e_l e_kᵀ)/2 under column stacking.
pub fn build_constraints() -> OrthonormalityConstraints {
    let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    let mut deltas = [Matrix9::zeros(); 6];
    let mut targets = [0.0; 6];
    for (idx, &(k, l)) in pairs.iter().enumerate() {
        let mut e = Matrix3::zeros();
        e[(k, l)] += 0.5;
        e[(l, k)] += 0.5;
        deltas[idx] = kron3(&Matrix3::identity(), &e);
        targets[idx] = if k == l { 1.0 } else { 0.0 };
    }
    OrthonormalityConstraints { pairs, deltas, targets }
}

/// Optimum of the relaxed program.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub rho: Matrix9,
    pub r: Vector9,
    /// ½(⟨A, ρ⟩ + 2bᵀr), a lower bound on the constrained optimum up to the gap.
    pub objective: f64,
    /// Relative primal-dual gap.
    pub dual_gap: f64,
    pub iterations: usize,
}

impl SdpSolution {
    /// Largest |⟨Δ_kl, ρ⟩ − δ_kl|.
    pub fn constraint_residual(&self, cons: &OrthonormalityConstraints) -> f64 {
        cons.deltas
            .iter()
            .zip(cons.targets)
            .map(|(d, t)| (d.component_mul(&self.rho).sum() - t).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of ρ − r rᵀ.
    pub fn lifting_slack(&self) -> f64 {
        SymmetricEigen::new(self.rho - self.r * self.r.transpose()).eigenvalues.min()
    }
}

/// Constraints that every lifted rotation satisfies but that the row
/// conditions RRᵀ = I do not imply for relaxed points: column
/// orthonormality RᵀR = I and right-handedness c_i × c_j = c_k. Each is
/// returned as (A, b) acting on the 10×10 lifted block.
fn redundant_constraints() -> Vec<(Mat10, f64)> {
    let idx = |row: usize, col: usize| 3 * col + row;
    let mut out = Vec::with_capacity(14);
    for k in 0..3 {
        for l in k..3 {
            // the (3,3) entry follows from the traces of RRᵀ and RᵀR being equal
            if k == 2 && l == 2 {
                continue;
            }
            let mut a = Mat10::zeros();
            // (RᵀR)_kl = Σ_a R_ak R_al
            for row in 0..3 {
                a[(idx(row, k), idx(row, l))] += 0.5;
                a[(idx(row, l), idx(row, k))] += 0.5;
            }
            out.push((a, if k == l { 1.0 } else { 0.0 }));
        }
    }
    for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        for row in 0..3 {
            let (p, q) = ((row + 1) % 3, (row + 2) % 3);
            // (c_i × c_j)_row − (c_k)_row = 0
            let mut a = Mat10::zeros();
            let mut add = |u: usize, v: usize, w: f64| {
                a[(u, v)] += 0.5 * w;
                a[(v, u)] += 0.5 * w;
            };
            add(idx(p, i), idx(q, j), 1.0);
            add(idx(q, i), idx(p, j), -1.0);
            add(idx(row, k), DIM - 1, -1.0);
            out.push((a, 0.0));
        }
    }
    out
}

/// Solves the relaxation over [[ρ, r], [rᵀ, 1]] ⪰ 0 with the six Δ constraints
/// and the unit corner, tightened by the column-orthonormality and
/// handedness identities. Degenerate problems (A ≈ 0, b ≈ 0) return the
/// identity lifting.
pub fn solve_sdp(prob: &QuadraticRotationProblem, cons: &OrthonormalityConstraints) -> Result<SdpSolution> {
    solve_sdp_with(prob, cons, true)
}

pub(crate) fn solve_sdp_with(
    prob: &QuadraticRotationProblem,
    cons: &OrthonormalityConstraints,
    tighten: bool,
) -> Result<SdpSolution> {
    if prob.is_degenerate() {
        let r = vec3x3(&Matrix3::identity());
        return Ok(SdpSolution {
            rho: r * r.transpose(),
            r,
            objective: prob.objective_vec(&r),
            dual_gap: 0.0,
            iterations: 0,
        });
    }
    let mut c = Mat10::zeros();
    c.fixed_view_mut::<9, 9>(0, 0).copy_from(&(prob.a * 0.5));
    c.fixed_view_mut::<9, 1>(0, 9).copy_from(&(prob.b * 0.5));
    c.fixed_view_mut::<1, 9>(9, 0).copy_from(&(prob.b.transpose() * 0.5));

    let mut a = Vec::new();
    let mut b = Vec::new();
    for (delta, target) in cons.deltas.iter().zip(cons.targets) {
        let mut m = Mat10::zeros();
        m.fixed_view_mut::<9, 9>(0, 0).copy_from(delta);
        a.push(m);
        b.push(target);
    }
    let mut corner = Mat10::zeros();
    corner[(DIM - 1, DIM - 1)] = 1.0;
    a.push(corner);
    b.push(1.0);
    if tighten {
        for (m, target) in redundant_constraints() {
            a.push(m);
            b.push(target);
        }
    }

    let sol = StandardSdp { c, a, b }.solve()?;
    let rho: Matrix9 = sol.x.fixed_view::<9, 9>(0, 0).into_owned();
    let r: Vector9 = sol.x.fixed_view::<9, 1>(0, 9).into_owned();
    Ok(SdpSolution {
        objective: prob.relaxed_objective(&rho, &r),
        rho,
        r,
        dual_gap: sol.relative_gap,
        iterations: sol.iterations,
    })
}

/// Eigen-gap above which ρ is treated as rank one.
const RANK_ONE_RATIO: f64 = 1e6;

/// Reads a rotation off the relaxed solution: the principal eigenvector of ρ
/// when ρ is numerically rank one, r otherwise, then projected onto SO(3).
pub fn extract_rotation(sol: &SdpSolution) -> Result<Rotation> {
    let eig = SymmetricEigen::new(sol.rho);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let l1 = eig.eigenvalues[order[0]];
    let l2 = eig.eigenvalues[order[1]];
    let rank_one = l1 > 0.0 && (l2 <= 0.0 || l1 / l2 > RANK_ONE_RATIO);
    let v = if rank_one {
        let mut v: Vector9 = eig.eigenvectors.column(order[0]).into_owned() * l1.sqrt();
        let agreement = v.dot(&sol.r);
        if agreement < 0.0 || (agreement.abs() < 1e-12 && unvec3x3(&v).determinant() < 0.0) {
            v = -v;
        }
        v
    } else {
        sol.r
    };
    project_to_rotation(&unvec3x3(&v))
}

/// Gradient and Hessian of f(R·exp([ω]×)) at ω = 0.
fn local_model(prob: &QuadraticRotationProblem, rot: &Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let r = vec3x3(rot);
    let grad_r = prob.a * r + prob.b;
    // P = Rᵀ G where G = unvec(Ar + b)
    let p = rot.transpose() * unvec3x3(&grad_r);
    let g = Vector3::new(p[(2, 1)] - p[(1, 2)], p[(0, 2)] - p[(2, 0)], p[(1, 0)] - p[(0, 1)]);
    // columns of B: vec(R [e_k]×)
    let mut bmat = SMatrix::<f64, 9, 3>::zeros();
    for k in 0..3 {
        let e = Vector3::ith(k, 1.0);
        bmat.set_column(k, &vec3x3(&(rot * crate::geometry::skew(&e))));
    }
    let ps = 0.5 * (p + p.transpose());
    let h = bmat.transpose() * prob.a * bmat + ps - Matrix3::identity() * p.trace();
    (g, 0.5 * (h + h.transpose()))
}

const REFINE_MAX_ITERATIONS: usize = 100;
const REFINE_MIN_STEP: f64 = 1e-10;

/// Damped Newton descent on SO(3) with right-multiplied axis-angle steps.
/// Only strictly decreasing steps are taken, so the result never scores worse
/// than `r0`.
pub fn refine_rotation(r0: &Rotation, prob: &QuadraticRotationProblem) -> Rotation {
    let mut rot = *r0.matrix();
    let mut f = prob.objective_vec(&vec3x3(&rot));
    let mut damping: f64 = 0.0;
    for _ in 0..REFINE_MAX_ITERATIONS {
        let (g, h) = local_model(prob, &rot);
        let h_scale = h.norm().max(g.norm()).max(1e-300);
        let min_eig = SymmetricEigen::new(h).eigenvalues.min();
        let floor = if min_eig <= 1e-12 * h_scale { -min_eig + 1e-9 * h_scale } else { 0.0 };
        let mut mu = damping.max(floor);
        let mut accepted = None;
        for _ in 0..40 {
            let step = match (h + Matrix3::identity() * mu).cholesky() {
                Some(ch) => -ch.solve(&g),
                None => {
                    mu = (mu * 10.0).max(1e-9 * h_scale);
                    continue;
                }
            };
            if !step.iter().all(|v| v.is_finite()) {
                break;
            }
            let trial = rot * exp_so3(&step);
            let f_trial = prob.objective_vec(&vec3x3(&trial));
            if f_trial < f {
                accepted = Some((trial, f_trial, step.norm()));
                break;
            }
            if step.norm() < REFINE_MIN_STEP {
                break;
            }
            mu = (mu * 10.0).max(1e-6 * h_scale);
        }
        match accepted {
            Some((trial, f_trial, step_norm)) => {
                rot = match project_to_rotation(&trial) {
                    Ok(r) => *r.matrix(),
                    Err(_) => trial,
                };
                let f_clean = prob.objective_vec(&vec3x3(&rot));
                // re-orthonormalization must not undo the decrease
                if f_clean <= f {
                    f = f_clean;
                } else {
                    rot = trial;
                    f = f_trial;
                }
                damping = floor.max(mu / 10.0).max(0.0);
                if step_norm < REFINE_MIN_STEP {
                    break;
                }
            }
            None => break,
        }
    }
    Rotation::from_matrix_unchecked(rot)
}

/// Quasi-uniform directions on the unit sphere (Fibonacci lattice).
pub(crate) fn sphere_directions(count: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
            let rad = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            Vector3::new(rad * phi.cos(), rad * phi.sin(), z)
        })
        .collect()
}

/// Axis-angle grid: axes spaced roughly `step` apart on the sphere, angles
/// in multiples of `step` up to π, plus the identity.
pub fn rotation_grid(step_deg: f64) -> Result<Vec<Rotation>> {
    if !(step_deg > 0.0 && step_deg <= 30.0) {
        return Err(Error::InvalidConfig(format!("grid step must be in (0°, 30°], got {step_deg}")));
    }
    let step = step_deg.to_radians();
    let n_axes = ((4.0 * std::f64::consts::PI) / (step * step)).ceil() as usize;
    let n_angles = (180.0 / step_deg).floor() as usize;
    let mut grid = Vec::with_capacity(1 + n_axes * n_angles);
    grid.push(Rotation::identity());
    for axis in sphere_directions(n_axes) {
        for k in 1..=n_angles {
            grid.push(Rotation::from_axis_angle(&axis, k as f64 * step));
        }
    }
    Ok(grid)
}

/// Exhaustive search over [`rotation_grid`] followed by [`refine_rotation`]
/// from the best grid point. Deterministic for a given step.
pub fn brute_force_rotation(prob: &QuadraticRotationProblem, grid_step_deg: f64) -> Result<Rotation> {
    let grid = rotation_grid(grid_step_deg)?;
    let best = grid
        .iter()
        .map(|r| (prob.objective(r), r))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, r)| *r)
        .unwrap_or_else(Rotation::identity);
    Ok(refine_rotation(&best, prob))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Covariance3;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
        let w = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Rotation::from_axis_angle(&w, rng.random_range(0.0..std::f64::consts::PI))
    }

    fn random_point(rng: &mut ChaCha8Rng) -> Point3 {
        Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn random_cov(rng: &mut ChaCha8Rng) -> Covariance3 {
        let q = random_rotation(rng);
        let d = Matrix3::from_diagonal(&Vector3::new(
            rng.random_range(0.05..1.0),
            rng.random_range(0.05..1.0),
            rng.random_range(0.05..1.0),
        ));
        Covariance3::new(q.matrix() * d * q.matrix().transpose()).unwrap()
    }

    /// Direct criterion with the translation eliminated by its normal equations.
    fn direct_objective(w: &[Point3], lambda: &[f64], covs: &[Covariance3], x: &[Point3], r: &Rotation) -> f64 {
        let mut info = Matrix3::zeros();
        let mut rhs = Vector3::zeros();
        for i in 0..x.len() {
            let s = covs[i].inverse() * lambda[i];
            info += s;
            rhs += s * (w[i] - r.matrix() * x[i]);
        }
        let t = info.try_inverse().unwrap() * rhs;
        (0..x.len())
            .map(|i| {
                let d = w[i] - r.matrix() * x[i] - t;
                0.5 * lambda[i] * d.dot(&(covs[i].inverse() * d))
            })
            .sum()
    }

    #[test]
    fn kronecker_vec_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let r = random_rotation(&mut rng);
            let x = random_point(&mut rng);
            let s = random_cov(&mut rng);
            // (Xᵀ ⊗ Σ⁻¹) vec(R) = Σ⁻¹ R X
            let mut m = SMatrix::<f64, 3, 9>::zeros();
            for c in 0..3 {
                m.fixed_view_mut::<3, 3>(0, 3 * c).copy_from(&(s.inverse() * x[c]));
            }
            assert_relative_eq!(m * vec3x3(r.matrix()), s.inverse() * r.matrix() * x, epsilon = 1e-12);
            // (XXᵀ ⊗ Σ⁻¹) gives rᵀ N r = Xᵀ Rᵀ Σ⁻¹ R X
            let v = vec3x3(r.matrix());
            let n = kron3(&(x * x.transpose()), s.inverse());
            let rx = r.matrix() * x;
            assert_relative_eq!(v.dot(&(n * v)), rx.dot(&(s.inverse() * rx)), epsilon = 1e-10);
        }
    }

    #[test]
    fn single_point_problem_is_zero() {
        let p = build_problem(&[Point3::new(0.3, -2.0, 1.0)], &[1.0], &[Covariance3::isotropic(1.0).unwrap()], &[Point3::x()])
            .unwrap();
        assert!(p.a.norm() < 1e-14);
        assert!(p.b.norm() < 1e-14);
        assert!(p.is_degenerate());
    }

    #[test]
    fn no_support_is_reported() {
        let c = Covariance3::isotropic(1.0).unwrap();
        let err = build_problem(&[Point3::x(); 3], &[0.0; 3], &[c; 3], &[Point3::y(); 3]);
        assert_eq!(err, Err(Error::NoSupport));
    }

    #[test]
    fn objective_identity_holds_up_to_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let n = rng.random_range(3..12);
            let x: Vec<_> = (0..n).map(|_| random_point(&mut rng)).collect();
            let w: Vec<_> = (0..n).map(|_| random_point(&mut rng)).collect();
            let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
            let covs: Vec<_> = (0..n).map(|_| random_cov(&mut rng)).collect();
            let prob = build_problem(&w, &lambda, &covs, &x).unwrap();
            let mut offsets = Vec::new();
            for _ in 0..20 {
                let r = random_rotation(&mut rng);
                offsets.push(prob.objective(&r) - direct_objective(&w, &lambda, &covs, &x, &r));
            }
            let spread = offsets.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
                - offsets.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            assert!(spread < 1e-8, "spread {spread}");
        }
    }

    #[test]
    fn constraint_examples() {
        let cons = build_constraints();
        let r = vec3x3(&Matrix3::identity());
        assert_relative_eq!(r.dot(&(cons.deltas[0] * r)), 1.0);
        assert_relative_eq!(r.dot(&(cons.deltas[1] * r)), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let rot = random_rotation(&mut rng);
            let v = vec3x3(rot.matrix());
            let rrt = rot.matrix() * rot.matrix().transpose();
            for (d, &(k, l)) in cons.deltas.iter().zip(&cons.pairs) {
                assert!((v.dot(&(d * v)) - rrt[(k, l)]).abs() < 1e-12);
                assert_eq!(*d, d.transpose());
            }
        }
    }

    #[test]
    fn identity_problem_solves_to_identity() {
        let x = vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0), Point3::new(0.0, 0.0, 1.0)];
        let c = Covariance3::isotropic(1.0).unwrap();
        let prob = build_problem(&x, &[1.0; 3], &[c; 3], &x).unwrap();
        let sol = solve_sdp(&prob, &build_constraints()).unwrap();
        assert!((sol.r - vec3x3(&Matrix3::identity())).norm() < 1e-6, "{}", sol.r);
        let rot = extract_rotation(&sol).unwrap();
        assert_relative_eq!(rot.matrix(), &Matrix3::identity(), epsilon = 1e-6);
    }

    #[test]
    fn degenerate_problem_returns_identity() {
        let prob = QuadraticRotationProblem { a: Matrix9::zeros(), b: Vector9::zeros() };
        let cons = build_constraints();
        let sol = solve_sdp(&prob, &cons).unwrap();
        assert!(sol.constraint_residual(&cons) < 1e-12);
        assert!(extract_rotation(&sol).unwrap().angle() < 1e-12);
    }

    #[test]
    fn rank_one_extraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let r0 = random_rotation(&mut rng);
            let v = vec3x3(r0.matrix());
            for r in [v, Vector9::zeros()] {
                let sol = SdpSolution { rho: v * v.transpose(), r, objective: 0.0, dual_gap: 0.0, iterations: 0 };
                let got = extract_rotation(&sol).unwrap();
                assert!((got.matrix() - r0.matrix()).abs().max() < 1e-8);
            }
        }
    }

    #[test]
    fn refine_stays_at_optimum_and_recovers_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let truth = random_rotation(&mut rng);
        let x: Vec<_> = (0..8).map(|_| random_point(&mut rng)).collect();
        let w: Vec<_> = x.iter().map(|p| truth.matrix() * p + Vector3::new(0.1, 0.2, 0.3)).collect();
        let c = Covariance3::isotropic(0.5).unwrap();
        let prob = build_problem(&w, &[1.0; 8], &[c; 8], &x).unwrap();
        let same = refine_rotation(&truth, &prob);
        assert!((same.matrix() - truth.matrix()).abs().max() < 1e-12);

        let perturbed = truth.compose(&Rotation::from_axis_angle(&Vector3::new(1.0, 2.0, -1.0), 5f64.to_radians()));
        let back = refine_rotation(&perturbed, &prob);
        assert!((back.matrix() - truth.matrix()).norm() < 1e-6);
    }

    #[test]
    fn refine_never_increases_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..30 {
            let n = 6;
            let x: Vec<_> = (0..n).map(|_| random_point(&mut rng)).collect();
            let w: Vec<_> = (0..n).map(|_| random_point(&mut rng)).collect();
            let covs: Vec<_> = (0..n).map(|_| random_cov(&mut rng)).collect();
            let prob = build_problem(&w, &[1.0; 6], &covs, &x).unwrap();
            let r0 = random_rotation(&mut rng);
            let r1 = refine_rotation(&r0, &prob);
            assert!(prob.objective(&r1) <= prob.objective(&r0));
            assert!(r1.orthonormality_error() < 1e-9);
            assert!((r1.matrix().determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn brute_force_examples() {
        let x = vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0), Point3::new(0.0, 0.0, 1.0), Point3::new(1.0, 1.0, 0.0)];
        let c = Covariance3::isotropic(1.0).unwrap();
        let prob = build_problem(&x, &[1.0; 4], &[c; 4], &x).unwrap();
        let r = brute_force_rotation(&prob, 10.0).unwrap();
        assert!(r.angle() < 1e-6);
        assert!(brute_force_rotation(&prob, 0.0).is_err());
        assert!(brute_force_rotation(&prob, 31.0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let covs: Vec<_> = (0..4).map(|_| random_cov(&mut rng)).collect();
        let w: Vec<_> = (0..4).map(|_| random_point(&mut rng)).collect();
        let prob = build_problem(&w, &[1.0; 4], &covs, &x).unwrap();
        let best = prob.objective(&brute_force_rotation(&prob, 10.0).unwrap());
        for _ in 0..100 {
            assert!(best <= prob.objective(&random_rotation(&mut rng)) + 1e-12);
        }
    }

    #[test]
    fn fixed_translation_problem_matches_direct_criterion() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 7;
        let x: Vec<_> = (0..n).map(|_| random_point(&mut rng)).collect();
        let w: Vec<_> = (0..n).map(|_| random_point(&mut rng)).collect();
        let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let covs: Vec<_> = (0..n).map(|_| random_cov(&mut rng)).collect();
        let t0 = Vector3::new(0.4, -0.3, 1.2);
        let prob = build_problem_fixed_translation(&w, &lambda, &covs, &x, &t0).unwrap();
        let mut offsets = Vec::new();
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            let direct: f64 = (0..n)
                .map(|i| {
                    let d = w[i] - r.matrix() * x[i] - t0;
                    0.5 * lambda[i] * d.dot(&(covs[i].inverse() * d))
                })
                .sum();
            offsets.push(prob.objective(&r) - direct);
        }
        let spread = offsets.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - offsets.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-10);
    }

    #[test]
    fn redundant_constraints_hold_on_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let rot = random_rotation(&mut rng);
            let v = vec3x3(rot.matrix());
            let mut z = Mat10::zeros();
            z.fixed_view_mut::<9, 1>(0, 9).copy_from(&v);
            z.fixed_view_mut::<1, 9>(9, 0).copy_from(&v.transpose());
            z.fixed_view_mut::<9, 9>(0, 0).copy_from(&(v * v.transpose()));
            z[(9, 9)] = 1.0;
            for (a, t) in redundant_constraints() {
                assert!((a.component_mul(&z).sum() - t).abs() < 1e-12);
            }
        }
        // a reflection violates handedness
        let v = vec3x3(&Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0)));
        let mut z = Mat10::zeros();
        z.fixed_view_mut::<9, 1>(0, 9).copy_from(&v);
        z.fixed_view_mut::<1, 9>(9, 0).copy_from(&v.transpose());
        z.fixed_view_mut::<9, 9>(0, 0).copy_from(&(v * v.transpose()));
        z[(9, 9)] = 1.0;
        let worst = redundant_constraints().iter().map(|(a, t)| (a.component_mul(&z).sum() - t).abs()).fold(0.0, f64::max);
        assert!(worst > 1.0);
    }

    #[test]
    fn tightened_relaxation_is_exact_on_noisy_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cons = build_constraints();
        for _ in 0..10 {
            let n = 15;
            let truth = random_rotation(&mut rng);
            let x: Vec<_> = (0..n).map(|_| random_point(&mut rng)).collect();
            let covs: Vec<_> = (0..n).map(|_| random_cov(&mut rng)).collect();
            let w: Vec<_> = x.iter().map(|p| truth.matrix() * p + 0.3 * random_point(&mut rng)).collect();
            let prob = build_problem(&w, &[1.0; 15], &covs, &x).unwrap();
            let bf = prob.objective(&brute_force_rotation(&prob, 10.0).unwrap());
            for tighten in [false, true] {
                let sol = solve_sdp_with(&prob, &cons, tighten).unwrap();
                assert!(sol.objective <= bf + 1e-7 * bf.abs().max(1.0));
                assert!(sol.constraint_residual(&cons) < 1e-8);
                assert!(sol.lifting_slack() > -1e-8);
                if tighten {
                    let fr = prob.objective(&refine_rotation(&extract_rotation(&sol).unwrap(), &prob));
                    assert!((fr - sol.objective) / fr.abs().max(1e-300) < 1e-8);
                    assert!(fr <= bf + 1e-9 * bf.abs());
                }
            }
        }
    }
}
