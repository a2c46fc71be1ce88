mod common;

use common::*;
use curvop::linop::DenseOperator;
use curvop::rla::{
    hutchinson_diag, hutchinson_trace, hutchpp_trace, log_spectral_density, spectral_density,
    sphere_probes, xdiag, xdiag_with_probes, xtrace, xtrace_with_probes, DensityOptions, ProbeSpec,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// `Q diag(λ) Qᵀ` with a decaying, partly negative spectrum.
fn test_matrix(seed: u64, n: usize) -> DMatrix<f64> {
    let mut r = rng(seed);
    let q = orthogonal(&mut r, n);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| {
        10.0 * 0.8f64.powi(i as i32) - 0.3
    }));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) / 2.0
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt(),
    )
}

fn within_4se(xs: &[f64], truth: f64) -> Result<(), String> {
    let (m, sd) = mean_sd(xs);
    let se = sd / (xs.len() as f64).sqrt();
    if (m - truth).abs() <= 4.0 * se + 1e-12 * truth.abs() {
        Ok(())
    } else {
        Err(format!("mean {m} vs {truth}, se {se}"))
    }
}

const RUNS: u64 = 10_000;

#[test]
fn trace_estimators_are_unbiased() {
    let a = test_matrix(1, 50);
    let tr = a.trace();
    let op = DenseOperator::new(a);
    let hutch: Vec<f64> = (0..RUNS)
        .map(|s| {
            hutchinson_trace(&op, &ProbeSpec::rademacher(4, s))
                .unwrap()
                .value
        })
        .collect();
    let pp: Vec<f64> = (0..RUNS)
        .map(|s| hutchpp_trace(&op, 6, s).unwrap().value)
        .collect();
    let xt: Vec<f64> = (0..RUNS)
        .map(|s| xtrace(&op, 6, s).unwrap().value)
        .collect();
    within_4se(&hutch, tr).unwrap();
    within_4se(&pp, tr).unwrap();
    within_4se(&xt, tr).unwrap();
}

#[test]
fn diagonal_estimators_are_unbiased() {
    let a = test_matrix(2, 50);
    let op = DenseOperator::new(a.clone());
    let hutch: Vec<Vec<f64>> = (0..RUNS)
        .map(|s| {
            hutchinson_diag(&op, &ProbeSpec::rademacher(2, s))
                .unwrap()
                .value
        })
        .collect();
    let xd: Vec<Vec<f64>> = (0..RUNS).map(|s| xdiag(&op, 6, s).unwrap().value).collect();
    for i in 0..50 {
        let col = |runs: &[Vec<f64>]| runs.iter().map(|d| d[i]).collect::<Vec<_>>();
        within_4se(&col(&hutch), a[(i, i)]).unwrap_or_else(|e| panic!("hutchinson entry {i}: {e}"));
        within_4se(&col(&xd), a[(i, i)]).unwrap_or_else(|e| panic!("xdiag entry {i}: {e}"));
    }
}

#[test]
fn densities_are_nonnegative_and_normalized() {
    let mut r = rng(4);
    let z = gaussian_matrix(&mut r, 40, 60);
    let op = DenseOperator::new(&z * z.transpose() / 60.0);
    for d in [
        spectral_density(&op, &DensityOptions::new(5, 15, 3)).unwrap(),
        log_spectral_density(&op, &DensityOptions::new(5, 15, 3), 1e-5).unwrap(),
    ] {
        assert!(d.density.iter().all(|&p| p >= 0.0));
        assert!((d.mass() - 1.0).abs() <= 1e-3, "mass {}", d.mass());
        for run in &d.runs {
            assert!((run.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn estimators_are_seed_deterministic(seed in 0u64..10_000, n in 4usize..30) {
        let op = DenseOperator::new(test_matrix(seed, n));
        let bits = |v: f64| v.to_bits();
        prop_assert_eq!(bits(hutchinson_trace(&op, &ProbeSpec::normal(5, seed)).unwrap().value),
                        bits(hutchinson_trace(&op, &ProbeSpec::normal(5, seed)).unwrap().value));
        prop_assert_eq!(bits(hutchpp_trace(&op, 6, seed).unwrap().value), bits(hutchpp_trace(&op, 6, seed).unwrap().value));
        prop_assert_eq!(bits(xtrace(&op, 6, seed).unwrap().value), bits(xtrace(&op, 6, seed).unwrap().value));
        prop_assert_eq!(xdiag(&op, 6, seed).unwrap(), xdiag(&op, 6, seed).unwrap());
        let opts = DensityOptions::new(3, n.min(8), seed);
        prop_assert_eq!(spectral_density(&op, &opts).unwrap(), spectral_density(&op, &opts).unwrap());
    }

    #[test]
    fn exchangeable_estimators_ignore_probe_order(seed in 0u64..10_000, perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let op = DenseOperator::new(test_matrix(seed, 20));
        let probes = sphere_probes(20, 5, seed);
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| probes[i].clone()).collect();
        prop_assert_eq!(
            xtrace_with_probes(&op, probes.clone()).unwrap().value.to_bits(),
            xtrace_with_probes(&op, shuffled.clone()).unwrap().value.to_bits()
        );
        prop_assert_eq!(xdiag_with_probes(&op, probes).unwrap().value, xdiag_with_probes(&op, shuffled).unwrap().value);
    }

    #[test]
    fn low_rank_traces_are_exact_for_xtrace(seed in 0u64..10_000, rank in 1usize..4) {
        // Once the sketch spans the range, the leave-one-out bases are exact.
        let mut r = rng(seed);
        let u = gaussian_matrix(&mut r, 25, rank);
        let a = &u * u.transpose();
        let tr = a.trace();
        let op = DenseOperator::new(a);
        let est = xtrace(&op, 2 * (rank + 2), seed).unwrap().value;
        prop_assert!((est - tr).abs() <= 1e-9 * tr);
    }
}
