use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linop::{square_dim, LinearOperator};
use crate::rng;

use super::{axpy, dot, norm, orthogonalize};

/// `A Q = Q T + β_m q_{m+1} e_mᵀ` with tridiagonal `T`.
#[derive(Clone, Debug)]
pub struct LanczosFactorization {
    /// Diagonal of `T`.
    pub alpha: Vec<f64>,
    /// Off-diagonal of `T`, one shorter than `alpha`.
    pub beta: Vec<f64>,
    /// Orthonormal Lanczos vectors, when kept.
    pub basis: Option<Vec<Vec<f64>>>,
    /// Steps asked for; `alpha.len()` is smaller after a breakdown.
    pub requested: usize,
}

impl LanczosFactorization {
    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn broke_down(&self) -> bool {
        self.steps() < self.requested
    }

    pub fn tridiagonal(&self) -> DMatrix<f64> {
        let m = self.steps();
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = self.alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = self.beta[i];
                t[(i + 1, i)] = self.beta[i];
            }
        }
        t
    }

    /// Ritz values in ascending order with their weights, the squared first
    /// components of the eigenvectors of `T`. Weights sum to one.
    pub fn ritz(&self) -> (Vec<f64>, Vec<f64>) {
        let e = SymmetricEigen::new(self.tridiagonal());
        let mut pairs: Vec<(f64, f64)> = (0..self.steps())
            .map(|j| (e.eigenvalues[j], e.eigenvectors[(0, j)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.into_iter().unzip()
    }
}

/// `m` steps of the symmetric Lanczos recurrence from `start`.
///
/// With `full_reorth` every new vector is orthogonalized (twice) against all
/// previous ones. If an invariant subspace is reached early (`β ≈ 0`) the
/// factorization is returned truncated.
pub fn lanczos(
    op: &dyn LinearOperator,
    start: &[f64],
    m: usize,
    full_reorth: bool,
) -> Result<LanczosFactorization> {
    let n = square_dim(op)?;
    if !op.is_symmetric() {
        return Err(Error::contract("Lanczos needs a symmetric operator"));
    }
    if start.len() != n {
        return Err(Error::dim("Lanczos start vector", n, start.len()));
    }
    if m == 0 || m > n {
        return Err(Error::contract(format!(
            "Lanczos steps must be in 1..={n}, got {m}"
        )));
    }
    let s = norm(start);
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::contract(
            "Lanczos start vector must be nonzero and finite",
        ));
    }
    let mut q: Vec<f64> = start.iter().map(|x| x / s).collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut prev: Option<Vec<f64>> = None;
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);
    let mut scale = 0.0f64;
    for j in 0..m {
        let mut w = op.apply(&q)?;
        let a = dot(&q, &w);
        alpha.push(a);
        axpy(-a, &q, &mut w);
        if let (Some(p), Some(&b)) = (&prev, beta.last()) {
            axpy(-b, p, &mut w);
        }
        basis.push(q.clone());
        if full_reorth {
            orthogonalize(&mut w, &basis);
        }
        if j + 1 == m {
            break;
        }
        let b = norm(&w);
        scale = scale.max(a.abs()).max(b);
        if b <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        beta.push(b);
        prev = Some(std::mem::replace(
            &mut q,
            w.into_iter().map(|x| x / b).collect(),
        ));
    }
    Ok(LanczosFactorization {
        alpha,
        beta,
        basis: full_reorth.then_some(basis),
        requested: m,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigshOptions {
    pub tol: f64,
    /// Largest search-space size; defaults to `max(2k + 10, 20)` capped at the dimension.
    pub max_basis: Option<usize>,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for EigshOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_basis: None,
            max_restarts: 500,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigshResult {
    /// Descending.
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub matvecs: usize,
}

fn random_unit(n: usize, seed: u64, draw: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, draw, 0x6569_6773);
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
    let s = norm(&v);
    v.into_iter().map(|x| x / s).collect()
}

/// The `k` algebraically largest eigenpairs by thick-restart Lanczos.
///
/// The search space is grown by Krylov steps with full reorthogonalization
/// up to `max_basis` vectors, then shrunk to the best Ritz vectors; the
/// expansion continues from the residual of the leading unconverged pair,
/// which keeps the space a Krylov space of the kept vectors.
pub fn eigsh_topk(op: &dyn LinearOperator, k: usize, opts: &EigshOptions) -> Result<EigshResult> {
    let n = square_dim(op)?;
    if !op.is_symmetric() {
        return Err(Error::contract("eigsh needs a symmetric operator"));
    }
    if k == 0 || k >= n {
        return Err(Error::contract(format!(
            "need 0 < k < dim = {n}, got k = {k}"
        )));
    }
    let m = opts
        .max_basis
        .unwrap_or((2 * k + 10).max(20))
        .min(n)
        .max(k + 1);
    let keep = (k + (m - k) / 2).min(m - 1).max(k);
    let mut v: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut av: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut next = random_unit(n, opts.seed, 0);
    let mut draws = 1;
    let mut matvecs = 0;
    let mut best_res = vec![f64::INFINITY; k];
    for _restart in 0..=opts.max_restarts {
        // Expand.
        while v.len() < m {
            orthogonalize(&mut next, &v);
            let mut s = norm(&next);
            if s <= 1e-10 {
                // Invariant subspace: continue with a fresh random direction.
                next = random_unit(n, opts.seed, draws);
                draws += 1;
                orthogonalize(&mut next, &v);
                s = norm(&next);
                if s <= 1e-10 {
                    break;
                }
            }
            next.iter_mut().for_each(|x| *x /= s);
            let w = op.apply(&next)?;
            matvecs += 1;
            v.push(std::mem::take(&mut next));
            next = w.clone();
            av.push(w);
        }
        // Rayleigh-Ritz.
        let b = v.len();
        let h = DMatrix::from_fn(b, b, |i, j| 0.5 * (dot(&v[i], &av[j]) + dot(&v[j], &av[i])));
        let e = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| e.eigenvalues[j].total_cmp(&e.eigenvalues[i]));
        let combine = |basis: &[Vec<f64>], col: usize| {
            let mut out = vec![0.0; n];
            for (i, bi) in basis.iter().enumerate() {
                axpy(e.eigenvectors[(i, col)], bi, &mut out);
            }
            out
        };
        let take = keep.min(b);
        let mut ritz_v = Vec::with_capacity(take);
        let mut ritz_av = Vec::with_capacity(take);
        let mut residuals = Vec::with_capacity(take);
        for &col in &order[..take] {
            let x = combine(&v, col);
            let ax = combine(&av, col);
            let theta = e.eigenvalues[col];
            let r: Vec<f64> = ax.iter().zip(&x).map(|(a, xi)| a - theta * xi).collect();
            residuals.push(r);
            ritz_v.push(x);
            ritz_av.push(ax);
        }
        let values: Vec<f64> = order[..take].iter().map(|&c| e.eigenvalues[c]).collect();
        let res_norms: Vec<f64> = residuals.iter().map(|r| norm(r)).collect();
        let ok = |i: usize| res_norms[i] <= opts.tol * values[i].abs().max(1.0);
        for i in 0..k.min(take) {
            best_res[i] = best_res[i].min(res_norms[i]);
        }
        if b == n || (0..k).all(ok) {
            return Ok(EigshResult {
                values: values[..k].to_vec(),
                vectors: ritz_v[..k].to_vec(),
                residuals: res_norms[..k].to_vec(),
                matvecs,
            });
        }
        let first_bad = (0..k).find(|&i| !ok(i)).unwrap_or(0);
        next = residuals[first_bad].clone();
        v = ritz_v;
        av = ritz_av;
    }
    Err(Error::NotConverged {
        solver: "eigsh",
        iterations: opts.max_restarts,
        residuals: best_res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{DenseOperator, DiagonalOperator};
    use nalgebra::DVector;

    #[test]
    fn single_step_is_rayleigh_quotient() {
        let op = DiagonalOperator::new(vec![1.0, 2.0, 3.0]);
        let v = [1.0, 1.0, 2.0];
        let f = lanczos(&op, &v, 1, true).unwrap();
        let rq = (1.0 + 2.0 + 12.0) / 6.0;
        assert!((f.alpha[0] - rq).abs() < 1e-15);
    }

    #[test]
    fn eigenvector_start_breaks_down_immediately() {
        let op = DiagonalOperator::new(vec![1.0, 5.0, 3.0]);
        let f = lanczos(&op, &[0.0, 2.0, 0.0], 3, true).unwrap();
        assert_eq!(f.steps(), 1);
        assert!(f.broke_down());
        assert_eq!(f.alpha[0], 5.0);
    }

    #[test]
    fn full_run_recovers_diagonal() {
        let d: Vec<f64> = (0..15).map(|i| (i * i) as f64 * 0.1 - 3.0).collect();
        let op = DiagonalOperator::new(d.clone());
        let f = lanczos(&op, &[1.0; 15], 15, true).unwrap();
        let (ritz, w) = f.ritz();
        let mut sorted = d;
        sorted.sort_by(f64::total_cmp);
        for (a, b) in ritz.iter().zip(&sorted) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn topk_of_diagonal() {
        let op = DiagonalOperator::new((1..=100).map(|i| i as f64).collect());
        let r = eigsh_topk(&op, 3, &EigshOptions::default()).unwrap();
        for (got, want) in r.values.iter().zip([100.0, 99.0, 98.0]) {
            assert!((got - want).abs() < 1e-8);
        }
    }

    #[test]
    fn rank_two_third_eigenvalue_is_zero() {
        let a = DVector::from_fn(30, |i, _| (i as f64 * 0.3).sin());
        let b = DVector::from_fn(30, |i, _| (i as f64 * 0.7).cos());
        let m = &a * a.transpose() * 3.0 + &b * b.transpose();
        let op = DenseOperator::new(m);
        let r = eigsh_topk(&op, 3, &EigshOptions::default()).unwrap();
        assert!(r.values[2].abs() <= 1e-8);
    }
}
