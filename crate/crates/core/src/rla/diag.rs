use crate::error::{Error, Result};
use crate::linop::{square_dim, LinearOperator};

use super::exchange::Sketch;
use super::probes::{sphere_probes, ProbeSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalEstimate {
    pub value: Vec<f64>,
    pub matvecs: usize,
}

/// `(Σ_k v_k ⊙ A v_k) ⊘ (Σ_k v_k ⊙ v_k)`.
pub fn hutchinson_diag(op: &dyn LinearOperator, probes: &ProbeSpec) -> Result<DiagonalEstimate> {
    let n = square_dim(op)?;
    if probes.count == 0 {
        return Err(Error::contract("need at least one probe"));
    }
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    for i in 0..probes.count {
        let v = probes.probe(n, i);
        let av = op.apply(&v)?;
        for j in 0..n {
            num[j] += v[j] * av[j];
            den[j] += v[j] * v[j];
        }
    }
    if let Some(j) = den.iter().position(|&d| d == 0.0) {
        return Err(Error::contract(format!(
            "probe entries at index {j} are all zero"
        )));
    }
    Ok(DiagonalEstimate {
        value: num.iter().zip(&den).map(|(a, b)| a / b).collect(),
        matvecs: probes.count,
    })
}

/// XDiag with `budget` matvecs (`budget / 2` test vectors).
pub fn xdiag(op: &dyn LinearOperator, budget: usize, seed: u64) -> Result<DiagonalEstimate> {
    let n = square_dim(op)?;
    if budget < 4 {
        return Err(Error::contract(format!(
            "XDiag needs a budget of at least 4, got {budget}"
        )));
    }
    xdiag_with_probes(op, sphere_probes(n, budget / 2, seed))
}

/// XDiag on given test vectors; invariant to their order.
///
/// For each `i`: `diag(P_i A)` exactly from the sketch, plus a one-probe
/// diagonal estimate `ω_i ⊙ (I − P_i) A ω_i` of the remainder, where `P_i`
/// projects onto the range sketch built without `ω_i`.
pub fn xdiag_with_probes(
    op: &dyn LinearOperator,
    omega: Vec<Vec<f64>>,
) -> Result<DiagonalEstimate> {
    let n = square_dim(op)?;
    if omega.len() < 2 {
        return Err(Error::contract("XDiag needs at least two test vectors"));
    }
    if let Some(o) = omega.iter().find(|o| o.len() != n) {
        return Err(Error::dim("test vector", n, o.len()));
    }
    let sk = Sketch::new(op, omega, true)?;
    let r = sk.rank();
    let s = sk.omega.len();
    let mut acc = vec![0.0; n];
    for i in 0..s {
        let (p, _) = sk.leave_one_out(i);
        // M = Q Π (n × r), row-major per entry.
        let mut qp = vec![0.0; n * r];
        for (a, qa) in sk.q.iter().enumerate() {
            for b in 0..r {
                let pab = p[(a, b)];
                if pab != 0.0 {
                    for j in 0..n {
                        qp[j * r + b] += qa[j] * pab;
                    }
                }
            }
        }
        let pc = &p * sk.c.column(i);
        for j in 0..n {
            let row = &qp[j * r..(j + 1) * r];
            // diag(Q Π Zᵀ)_j with Z = Aᵀ Q.
            let exact: f64 = (0..r).map(|b| row[b] * sk.z[b][j]).sum();
            let proj: f64 = (0..r).map(|a| sk.q[a][j] * pc[a]).sum();
            acc[j] += exact + sk.omega[i][j] * (sk.y[i][j] - proj);
        }
    }
    Ok(DiagonalEstimate {
        value: acc.into_iter().map(|x| x / s as f64).collect(),
        matvecs: sk.matvecs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{DenseOperator, DiagonalOperator, IdentityOperator};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn diagonal_exact_with_one_rademacher_probe() {
        let d = vec![1.5, -2.0, 0.25, 7.0];
        let e = hutchinson_diag(
            &DiagonalOperator::new(d.clone()),
            &ProbeSpec::rademacher(1, 3),
        )
        .unwrap();
        assert_eq!(e.value, d);
        let e = hutchinson_diag(&IdentityOperator(6), &ProbeSpec::rademacher(2, 1)).unwrap();
        assert_eq!(e.value, vec![1.0; 6]);
    }

    #[test]
    fn xdiag_low_rank_exact() {
        let n = 40;
        let a = DVector::from_fn(n, |i, _| (i as f64 * 0.5).sin());
        let b = DVector::from_fn(n, |i, _| (i as f64 * 0.2).cos());
        let c = DVector::from_fn(n, |i, _| ((i * i) as f64 * 0.01).sin());
        let m = &a * a.transpose() + &b * b.transpose() * 2.0 - &c * c.transpose() * 0.5;
        let d = m.diagonal();
        let est = xdiag(&DenseOperator::new(m), 10, 5).unwrap();
        for (x, y) in est.value.iter().zip(d.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn xdiag_order_invariant() {
        let n = 25;
        let m = DMatrix::from_fn(n, n, |i, j| {
            ((i + 2 * j) as f64).sin() + ((2 * i + j) as f64).sin()
        });
        let op = DenseOperator::new(m);
        let probes = sphere_probes(n, 5, 1);
        let mut p2 = probes.clone();
        p2.rotate_left(2);
        assert_eq!(
            xdiag_with_probes(&op, probes).unwrap().value,
            xdiag_with_probes(&op, p2).unwrap().value
        );
    }
}
