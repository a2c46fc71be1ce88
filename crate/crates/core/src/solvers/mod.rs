//! Matrix-free iterative solvers.

mod cg;
mod lanczos;

pub use cg::{cg_solve, neumann_inverse, CgOptions, SolveReport};
pub use lanczos::{eigsh_topk, lanczos, EigshOptions, EigshResult, LanczosFactorization};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Classical Gram-Schmidt against an orthonormal set, applied twice.
pub fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        let coeffs: Vec<f64> = basis.iter().map(|q| dot(q, w)).collect();
        for (c, q) in coeffs.iter().zip(basis) {
            axpy(-c, q, w);
        }
    }
}
