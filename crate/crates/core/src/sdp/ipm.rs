//! Primal-dual interior-point method for the lifted rotation relaxation.
//!
//! Standard form over 10×10 symmetric matrices:
//!
//! ```text
//! minimize   ⟨C, Z⟩
//! subject to ⟨A_k, Z⟩ = b_k
//!            Z ⪰ 0
//! ```
//!
//! Search directions are HKM (X·ΔS·S⁻¹ linearization) with a Mehrotra
//! predictor-corrector. The start point is the infeasible X = S = I, y = 0.

use nalgebra::{DMatrix, DVector, SMatrix};

use crate::error::{Error, Result};

pub(crate) const DIM: usize = 10;

pub(crate) type Mat = SMatrix<f64, DIM, DIM>;
type Dual = DVector<f64>;

const MAX_ITERATIONS: usize = 200;
/// Target for relative gap and scaled infeasibilities.
const TOLERANCE: f64 = 1e-11;
/// Accepted at the iteration cap if the solver stalls below this.
const STALL_TOLERANCE: f64 = 1e-8;
const STEP_FRACTION: f64 = 0.98;

pub(crate) struct StandardSdp {
    pub c: Mat,
    pub a: Vec<Mat>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmSolution {
    pub x: Mat,
    pub relative_gap: f64,
    pub iterations: usize,
}

fn inner(a: &Mat, b: &Mat) -> f64 {
    a.component_mul(b).sum()
}

/// Nonzero entries of a constraint matrix; each has only a handful.
struct Sparse(Vec<(usize, usize, f64)>);

impl Sparse {
    fn of(a: &Mat) -> Self {
        let mut out = Vec::new();
        for j in 0..DIM {
            for i in 0..DIM {
                if a[(i, j)] != 0.0 {
                    out.push((i, j, a[(i, j)]));
                }
            }
        }
        Sparse(out)
    }

    fn inner(&self, m: &Mat) -> f64 {
        self.0.iter().map(|&(i, j, v)| v * m[(i, j)]).sum()
    }

    /// `l · A · r` as a sum of rank-one terms.
    fn sandwich(&self, l: &Mat, r: &Mat) -> Mat {
        let mut out = Mat::zeros();
        for &(i, j, v) in &self.0 {
            out.ger(v, &l.column(i), &r.row(j).transpose(), 1.0);
        }
        out
    }
}

fn sym(m: &Mat) -> Mat {
    0.5 * (m + m.transpose())
}

/// Largest α with `x + α·dx ⪰ 0` (infinite when dx is PSD along x).
fn max_step(x: &Mat, dx: &Mat) -> f64 {
    if let Some(chol) = x.cholesky() {
        let l = chol.l();
        // L⁻¹ dx L⁻ᵀ by two triangular solves
        if let Some(half) = l.solve_lower_triangular(dx) {
            if let Some(t) = l.solve_lower_triangular(&half.transpose()) {
                let min = sym(&t).symmetric_eigenvalues().min();
                return if min < 0.0 { -1.0 / min } else { f64::INFINITY };
            }
        }
    }
    // factorization trouble: bisect on definiteness
    let mut alpha = 1.0;
    for _ in 0..60 {
        if (x + dx * alpha).cholesky().is_some() {
            return alpha;
        }
        alpha *= 0.5;
    }
    0.0
}

impl StandardSdp {
    fn apply(a: &[Sparse], x: &Mat) -> Dual {
        Dual::from_iterator(a.len(), a.iter().map(|ak| ak.inner(x)))
    }

    fn adjoint(a: &[Sparse], y: &Dual) -> Mat {
        let mut out = Mat::zeros();
        for (ak, yk) in a.iter().zip(y.iter()) {
            for &(i, j, v) in &ak.0 {
                out[(i, j)] += v * yk;
            }
        }
        out
    }

    pub fn solve(&self) -> Result<IpmSolution> {
        let scale = self.c.norm().max(f64::MIN_POSITIVE);
        let c = self.c / scale;
        let b = Dual::from_column_slice(&self.b);
        let a: Vec<Sparse> = self.a.iter().map(Sparse::of).collect();
        let m = a.len();
        let b_norm = b.norm();
        let c_norm = c.norm();

        let mut x = Mat::identity();
        let mut s = Mat::identity();
        let mut y = Dual::zeros(m);
        let n = DIM as f64;

        // best iterate seen so far, by its worst residual
        let mut best: Option<(f64, Mat, Dual, usize)> = None;
        let mut iterations = 0;
        for it in 0..MAX_ITERATIONS {
            iterations = it;
            let rp = &b - Self::apply(&a, &x);
            let rd = c - Self::adjoint(&a, &y) - s;
            let pobj = inner(&c, &x);
            let dobj = b.dot(&y);
            let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            let pinf = rp.norm() / (1.0 + b_norm);
            let dinf = rd.norm() / (1.0 + c_norm);
            let worst = gap.max(pinf).max(dinf);
            if best.as_ref().is_none_or(|b| worst < b.0) {
                best = Some((worst, x, y.clone(), it));
            }
            if worst < TOLERANCE {
                return Ok(IpmSolution { x, relative_gap: gap, iterations: it });
            }

            let s_inv = match s.cholesky() {
                Some(ch) => sym(&ch.inverse()),
                None => break,
            };
            let g: Vec<Mat> = a.iter().map(|ak| ak.sandwich(&x, &s_inv)).collect();
            let mut schur = DMatrix::from_fn(m, m, |i, j| a[i].inner(&g[j]));
            schur = (&schur + schur.transpose()) * 0.5;
            // redundant constraints make the Schur system nearly singular at
            // rank-one optima; a relative ridge keeps it solvable
            let ridge = 1e-14 * schur.diagonal().amax();
            let schur_chol = match schur.clone().cholesky() {
                Some(ch) => ch,
                None => match (schur + DMatrix::identity(m, m) * ridge).cholesky() {
                    Some(ch) => ch,
                    None => break,
                },
            };
            let x_rd = x * rd * s_inv;

            let direction = |rc: &Mat| -> (Mat, Dual, Mat) {
                let rhs = &rp - Self::apply(&a, &(rc - x_rd));
                let dy = schur_chol.solve(&rhs);
                let ds = rd - Self::adjoint(&a, &dy);
                let dx = sym(&(rc - x * ds * s_inv));
                (dx, dy, ds)
            };

            let mu = inner(&x, &s) / n;
            // predictor (affine scaling)
            let (dx_a, _, ds_a) = direction(&(-x));
            let ap = max_step(&x, &dx_a).min(1.0);
            let ad = max_step(&s, &ds_a).min(1.0);
            let mu_aff = inner(&(x + dx_a * ap), &(s + ds_a * ad)) / n;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // corrector
            let rc = s_inv * (sigma * mu) - x - dx_a * ds_a * s_inv;
            let (dx, dy, ds) = direction(&rc);
            let ap = (STEP_FRACTION * max_step(&x, &dx)).min(1.0);
            let ad = (STEP_FRACTION * max_step(&s, &ds)).min(1.0);
            if !(ap > 0.0 && ad > 0.0) {
                break;
            }
            x = sym(&(x + dx * ap));
            y += &dy * ad;
            s = sym(&(s + ds * ad));
        }

        match best {
            Some((worst, x, y, it)) if worst < STALL_TOLERANCE => {
                let pobj = inner(&c, &x);
                let dobj = b.dot(&y);
                let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
                Ok(IpmSolution { x, relative_gap: gap, iterations: it })
            }
            Some((worst, ..)) => Err(Error::RelaxationFailure { iterations: iterations + 1, gap: worst }),
            None => Err(Error::RelaxationFailure { iterations: 0, gap: f64::INFINITY }),
        }
    }
}
