//! Leave-one-out sketches shared by XTrace and XDiag.
//!
//! With test vectors `ω_1..ω_s`, `Y = AΩ` and an orthonormal basis `Q` of
//! `range(Y)` (rank-truncated), the basis built without `ω_i` is
//! `Q U_i` where `U_i` spans the columns of `C = QᵀY` other than `i`.
//! All leave-one-out quantities are formed in these small coordinates.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::linop::LinearOperator;
use crate::solvers::{dot, orthogonalize};

/// Columns are kept in a canonical order so the result does not depend on
/// the order the test vectors were given in.
pub(crate) fn canonical_order(omega: &mut [Vec<f64>]) {
    omega.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
}

/// Orthonormal basis of the given vectors, dropping directions whose
/// remaining norm falls below `rel_tol` times the largest input norm.
pub(crate) fn orth_basis(vectors: &[Vec<f64>], rel_tol: f64) -> Vec<Vec<f64>> {
    let scale = vectors.iter().map(|v| dot(v, v).sqrt()).fold(0.0, f64::max);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    if scale == 0.0 {
        return basis;
    }
    for v in vectors {
        let mut w = v.clone();
        orthogonalize(&mut w, &basis);
        let s = dot(&w, &w).sqrt();
        if s > rel_tol * scale {
            basis.push(w.into_iter().map(|x| x / s).collect());
        }
    }
    basis
}

pub(crate) struct Sketch {
    pub omega: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    /// `A Q` (or `Aᵀ Q` when built for diagonals).
    pub z: Vec<Vec<f64>>,
    /// `C = QᵀY`, `r × s`.
    pub c: DMatrix<f64>,
    /// `QᵀZ`, `r × r`.
    pub h: DMatrix<f64>,
    /// `QᵀΩ`, `r × s`.
    pub w: DMatrix<f64>,
    pub matvecs: usize,
}

const RANK_TOL: f64 = 1e-10;

impl Sketch {
    pub fn new(
        op: &dyn LinearOperator,
        mut omega: Vec<Vec<f64>>,
        transpose_z: bool,
    ) -> Result<Self> {
        canonical_order(&mut omega);
        let y: Vec<Vec<f64>> = omega.iter().map(|o| op.apply(o)).collect::<Result<_>>()?;
        let q = orth_basis(&y, RANK_TOL);
        let z: Vec<Vec<f64>> = q
            .iter()
            .map(|qi| {
                if transpose_z {
                    op.apply_transpose(qi)
                } else {
                    op.apply(qi)
                }
            })
            .collect::<Result<_>>()?;
        let (r, s) = (q.len(), omega.len());
        let c = DMatrix::from_fn(r, s, |a, j| dot(&q[a], &y[j]));
        let h = DMatrix::from_fn(r, r, |a, b| dot(&q[a], &z[b]));
        let w = DMatrix::from_fn(r, s, |a, j| dot(&q[a], &omega[j]));
        let matvecs = y.len() + z.len();
        Ok(Self {
            omega,
            y,
            q,
            z,
            c,
            h,
            w,
            matvecs,
        })
    }

    pub fn rank(&self) -> usize {
        self.q.len()
    }

    /// Orthogonal projector (in basis coordinates) onto the span of all
    /// columns of `C` except `i`, with that span's dimension.
    pub fn leave_one_out(&self, i: usize) -> (DMatrix<f64>, usize) {
        let r = self.rank();
        let cols: Vec<Vec<f64>> = (0..self.c.ncols())
            .filter(|&j| j != i)
            .map(|j| self.c.column(j).iter().copied().collect())
            .collect();
        let u = orth_basis(&cols, RANK_TOL);
        let mut p = DMatrix::zeros(r, r);
        for ui in &u {
            for a in 0..r {
                for b in 0..r {
                    p[(a, b)] += ui[a] * ui[b];
                }
            }
        }
        (p, u.len())
    }
}
