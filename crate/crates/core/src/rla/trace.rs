use serde::Serialize;

use crate::error::{Error, Result};
use crate::linop::{square_dim, LinearOperator};
use crate::solvers::dot;

use super::exchange::{orth_basis, Sketch};
use super::probes::{probe, sphere_probes, ProbeDistribution, ProbeSpec};

/// A scalar estimate with its cost.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub matvecs: usize,
    /// Standard error of the mean over the averaged terms, when meaningful.
    pub std_error: Option<f64>,
}

fn mean_and_stderr(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Girard-Hutchinson: the mean of `vᵀ A v`.
pub fn hutchinson_trace(op: &dyn LinearOperator, probes: &ProbeSpec) -> Result<Estimate> {
    let n = square_dim(op)?;
    if probes.count == 0 {
        return Err(Error::contract("need at least one probe"));
    }
    let terms: Vec<f64> = (0..probes.count)
        .map(|i| {
            let v = probes.probe(n, i);
            op.apply(&v).map(|av| dot(&v, &av))
        })
        .collect::<Result<_>>()?;
    let (value, std_error) = mean_and_stderr(&terms);
    Ok(Estimate {
        value,
        matvecs: probes.count,
        std_error,
    })
}

/// Hutch++ with `budget` matvecs: a third sketches the range, a third
/// computes the trace on it exactly, a third probes the deflated remainder.
///
/// Deflated probes are normalized on the complement of the sketch, so each
/// term is `(n − r) gᵀAg / ‖g‖²` with `g` uniform on that subspace.
pub fn hutchpp_trace(op: &dyn LinearOperator, budget: usize, seed: u64) -> Result<Estimate> {
    let n = square_dim(op)?;
    if budget < 3 || !budget.is_multiple_of(3) {
        return Err(Error::contract(format!(
            "Hutch++ budget must be a positive multiple of 3, got {budget}"
        )));
    }
    let k = budget / 3;
    let sketch: Vec<Vec<f64>> = (0..k)
        .map(|i| op.apply(&probe(ProbeDistribution::Normal, n, seed, i as u64)))
        .collect::<Result<_>>()?;
    let q = orth_basis(&sketch, 1e-10);
    let mut exact = 0.0;
    for qi in &q {
        exact += dot(qi, &op.apply(qi)?);
    }
    let mut terms = Vec::with_capacity(k);
    for i in 0..k {
        let mut g = probe(ProbeDistribution::Normal, n, seed, (k + i) as u64);
        crate::solvers::orthogonalize(&mut g, &q);
        let gg = dot(&g, &g);
        if q.len() >= n || gg == 0.0 {
            terms.push(0.0);
            continue;
        }
        terms.push((n - q.len()) as f64 * dot(&g, &op.apply(&g)?) / gg);
    }
    let (rest, std_error) = mean_and_stderr(&terms);
    Ok(Estimate {
        value: exact + rest,
        matvecs: k + q.len() + k,
        std_error,
    })
}

/// XTrace with `budget` matvecs (`budget / 2` test vectors).
pub fn xtrace(op: &dyn LinearOperator, budget: usize, seed: u64) -> Result<Estimate> {
    let n = square_dim(op)?;
    if budget < 4 {
        return Err(Error::contract(format!(
            "XTrace needs a budget of at least 4, got {budget}"
        )));
    }
    xtrace_with_probes(op, sphere_probes(n, budget / 2, seed))
}

/// XTrace on given test vectors. The estimate is invariant to their order.
///
/// For each `i` the range is deflated with the basis built from the other
/// vectors, and the remainder is probed with `ω_i` normalized on the
/// complement, giving an unbiased estimate; the `s` estimates are averaged.
pub fn xtrace_with_probes(op: &dyn LinearOperator, omega: Vec<Vec<f64>>) -> Result<Estimate> {
    let n = square_dim(op)?;
    if omega.len() < 2 {
        return Err(Error::contract("XTrace needs at least two test vectors"));
    }
    if let Some(o) = omega.iter().find(|o| o.len() != n) {
        return Err(Error::dim("test vector", n, o.len()));
    }
    let sk = Sketch::new(op, omega, false)?;
    // Zᵀω_j in basis coordinates.
    let zt: Vec<Vec<f64>> = sk
        .omega
        .iter()
        .map(|o| sk.z.iter().map(|zi| dot(zi, o)).collect())
        .collect();
    let mut ests = Vec::with_capacity(sk.omega.len());
    for (i, zti) in zt.iter().enumerate() {
        let (p, ri) = sk.leave_one_out(i);
        let ph = &p * &sk.h;
        let mut value = ph.trace();
        if ri < n {
            let w = sk.w.column(i).clone_owned();
            let pw = &p * &w;
            let c = sk.c.column(i);
            let zti = nalgebra::DVector::from_column_slice(zti);
            let quad =
                dot(&sk.omega[i], &sk.y[i]) - zti.dot(&pw) - pw.dot(&c) + pw.dot(&(&sk.h * &pw));
            let resid = dot(&sk.omega[i], &sk.omega[i]) - w.dot(&pw);
            if resid > 0.0 {
                value += (n - ri) as f64 * quad / resid;
            }
        }
        ests.push(value);
    }
    let (value, std_error) = mean_and_stderr(&ests);
    Ok(Estimate {
        value,
        matvecs: sk.matvecs,
        std_error,
    })
}
