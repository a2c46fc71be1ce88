//! Randomized estimators of operator properties.

mod density;
mod diag;
mod exchange;
mod probes;
mod trace;

pub use density::{
    density_grid, gaussian_mixture, log_spectral_density, spectral_density, trapezoid,
    DensityOptions, RitzRun, SpectralDensity,
};
pub use diag::{hutchinson_diag, xdiag, xdiag_with_probes, DiagonalEstimate};
pub use probes::{probe, sphere_probes, ProbeDistribution, ProbeSpec};
pub use trace::{hutchinson_trace, hutchpp_trace, xtrace, xtrace_with_probes, Estimate};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linop::LinearOperator;
use crate::solvers::dot;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrobeniusVariant {
    /// Hutchinson on `A Aᵀ`: `vᵀ A (Aᵀ v)`, two matvecs per probe.
    TwoPass,
    /// `‖A v‖²`, one matvec per probe.
    OnePass,
}

/// Estimates `‖A‖_F² = Tr(A Aᵀ)`.
pub fn frobenius_sq(
    op: &dyn LinearOperator,
    probes: &ProbeSpec,
    variant: FrobeniusVariant,
) -> Result<Estimate> {
    let (rows, cols) = op.shape();
    if probes.count == 0 {
        return Err(Error::contract("need at least one probe"));
    }
    let mut terms = Vec::with_capacity(probes.count);
    for i in 0..probes.count {
        let t = match variant {
            FrobeniusVariant::TwoPass => {
                let v = probes.probe(rows, i);
                let w = op.apply_transpose(&v)?;
                dot(&v, &op.apply(&w)?)
            }
            FrobeniusVariant::OnePass => {
                let v = probes.probe(cols, i);
                let av = op.apply(&v)?;
                dot(&av, &av)
            }
        };
        terms.push(t);
    }
    let n = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / n;
    let std_error = (terms.len() > 1)
        .then(|| (terms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt());
    let per = match variant {
        FrobeniusVariant::TwoPass => 2,
        FrobeniusVariant::OnePass => 1,
    };
    Ok(Estimate {
        value: mean,
        matvecs: per * probes.count,
        std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::DiagonalOperator;

    #[test]
    fn diagonal_frobenius_is_exact_with_rademacher() {
        let a = vec![1.0, -2.0, 3.0];
        let op = DiagonalOperator::new(a);
        for variant in [FrobeniusVariant::OnePass, FrobeniusVariant::TwoPass] {
            let e = frobenius_sq(&op, &ProbeSpec::rademacher(3, 2), variant).unwrap();
            assert_eq!(e.value, 14.0);
        }
        let zero = DiagonalOperator::new(vec![0.0; 4]);
        let e = frobenius_sq(&zero, &ProbeSpec::normal(3, 2), FrobeniusVariant::OnePass).unwrap();
        assert_eq!(e.value, 0.0);
    }
}
