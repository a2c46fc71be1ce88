use crate::error::{Error, Result};
use crate::linop::{square_dim, LinearOperator};

use super::{axpy, dot, norm};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Defaults to `10 · dim` when `None`.
    pub maxiter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 0.0,
            maxiter: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖A z − b‖`, recomputed from the returned solution.
    pub residual_norm: f64,
    pub converged: bool,
}

impl SolveReport {
    /// Turns an unconverged report into an error.
    pub fn require_converged(&self, solver: &'static str) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged {
                solver,
                iterations: self.iterations,
                residuals: vec![self.residual_norm],
            })
        }
    }
}

/// Conjugate gradients for symmetric positive definite `A z = b`, from `z = 0`.
///
/// Stops once `‖A z − b‖ ≤ max(rtol ‖b‖, atol)`. A search direction with
/// `pᵀ A p ≤ 0` aborts with [`Error::Indefinite`].
pub fn cg_solve(
    op: &dyn LinearOperator,
    b: &[f64],
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = square_dim(op)?;
    if !op.is_symmetric() {
        return Err(Error::contract(format!(
            "conjugate gradients needs a symmetric operator, got {}",
            op.name()
        )));
    }
    if b.len() != n {
        return Err(Error::dim("right-hand side", n, b.len()));
    }
    let threshold = (opts.rtol * norm(b)).max(opts.atol);
    let maxiter = opts.maxiter.unwrap_or(10 * n.max(1));
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut it = 0;
    let residual_norm = loop {
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        while rr.sqrt() > threshold && it < maxiter {
            let ap = op.apply(&p)?;
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Indefinite {
                    iteration: it + 1,
                    curvature: pap,
                });
            }
            let alpha = rr / pap;
            axpy(alpha, &p, &mut x);
            axpy(-alpha, &ap, &mut r);
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for (pi, ri) in p.iter_mut().zip(&r) {
                *pi = ri + beta * *pi;
            }
            rr = rr_new;
            it += 1;
        }
        // The recursive residual drifts from the true one; restart from the
        // true residual if they disagree about convergence.
        let ax = op.apply(&x)?;
        r = b.iter().zip(&ax).map(|(bi, a)| bi - a).collect();
        let true_norm = norm(&r);
        if true_norm <= threshold || it >= maxiter {
            break true_norm;
        }
    };
    let converged = residual_norm <= threshold;
    Ok((
        x,
        SolveReport {
            iterations: it,
            residual_norm,
            converged,
        },
    ))
}

/// `α Σ_{k=0}^{K} (I − αA)^k v` with `K` matvecs.
///
/// Converges to `A⁻¹ v` as `K → ∞` only when the spectral radius of `I − αA`
/// is below one; that is the caller's responsibility.
pub fn neumann_inverse(
    op: &dyn LinearOperator,
    v: &[f64],
    terms: usize,
    alpha: f64,
) -> Result<Vec<f64>> {
    let n = square_dim(op)?;
    if v.len() != n {
        return Err(Error::dim("Neumann input", n, v.len()));
    }
    let mut s = v.to_vec();
    for _ in 0..terms {
        let as_ = op.apply(&s)?;
        for ((si, vi), ai) in s.iter_mut().zip(v).zip(as_) {
            *si = vi + *si - alpha * ai;
        }
    }
    Ok(s.into_iter().map(|x| alpha * x).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{DenseOperator, DiagonalOperator, IdentityOperator};
    use nalgebra::DMatrix;

    #[test]
    fn identity_solves_in_one_step() {
        let v = vec![1.0, -2.0, 3.0];
        let (z, rep) = cg_solve(&IdentityOperator(3), &v, &CgOptions::default()).unwrap();
        assert_eq!(z, v);
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
    }

    #[test]
    fn diagonal_closed_form() {
        let n = 12;
        let op = DiagonalOperator::new((1..=n).map(|i| i as f64).collect());
        let v: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let (z, rep) = cg_solve(&op, &v, &CgOptions::default()).unwrap();
        assert!(rep.iterations <= n);
        for (i, zi) in z.iter().enumerate() {
            assert!((zi - v[i] / (i + 1) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn indefinite_operator_reports_iteration() {
        let op = DiagonalOperator::new(vec![1.0, -1.0]);
        let err = cg_solve(&op, &[1.0, 1.0], &CgOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Indefinite { iteration: 1, .. }));
    }

    #[test]
    fn maxiter_gives_unconverged_report() {
        let op = DiagonalOperator::new((1..=50).map(|i| i as f64).collect());
        let opts = CgOptions {
            maxiter: Some(3),
            ..CgOptions::default()
        };
        let (_, rep) = cg_solve(&op, &[1.0; 50], &opts).unwrap();
        assert!(!rep.converged);
        assert!(rep.require_converged("cg").is_err());
    }

    #[test]
    fn neumann_trivial_series() {
        let v = vec![0.3, -1.0];
        assert_eq!(
            neumann_inverse(&IdentityOperator(2), &v, 7, 1.0).unwrap(),
            v
        );
        let half = DenseOperator::new(DMatrix::identity(2, 2) * 0.5);
        let z = neumann_inverse(&half, &v, 20, 1.0).unwrap();
        for (zi, vi) in z.iter().zip(&v) {
            assert!((zi - 2.0 * vi).abs() <= 1e-5);
        }
    }
}
