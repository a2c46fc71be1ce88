//! Wall-time cost of curvature matvecs relative to a gradient evaluation.

use std::time::Instant;

use serde::Serialize;

use crate::curvature::{curvature_operator, CurvatureSpec};
use crate::error::{Error, Result};
use crate::risk::EmpiricalRisk;
use crate::rla::{probe, ProbeDistribution};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub name: String,
    pub median_seconds: f64,
    /// Median time in multiples of the median gradient time.
    pub relative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchTable {
    pub repeats: usize,
    /// The gradient row first, then one row per curvature.
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn get(&self, name: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    // One untimed warm-up call.
    std::hint::black_box(f()?);
    let mut ts = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(f()?);
        ts.push(t.elapsed().as_secs_f64());
    }
    Ok(median(ts))
}

/// Label used for a curvature in the table.
pub fn spec_name(spec: &CurvatureSpec) -> String {
    match spec {
        CurvatureSpec::Exact(kind) => kind.name().to_string(),
        CurvatureSpec::Kfac(_) => "kfac".to_string(),
    }
}

/// Median time of one gradient and of one matvec per curvature.
///
/// KFAC factors are computed once before timing, so its row measures the
/// Kronecker-factored apply only.
pub fn bench(
    risk: &EmpiricalRisk,
    params: &[Tensor],
    specs: &[CurvatureSpec],
    repeats: usize,
) -> Result<BenchTable> {
    if repeats < 3 {
        return Err(Error::contract(format!(
            "need at least 3 repeats, got {repeats}"
        )));
    }
    let grad = time(repeats, || risk.gradient(params))?;
    let mut rows = vec![BenchRow {
        name: "gradient".into(),
        median_seconds: grad,
        relative: 1.0,
    }];
    let v = probe(ProbeDistribution::Normal, risk.num_params(), 0, 0);
    for spec in specs {
        let op = curvature_operator(risk, params, *spec)?;
        let t = time(repeats, || op.apply(&v))?;
        rows.push(BenchRow {
            name: spec_name(spec),
            median_seconds: t,
            relative: t / grad,
        });
    }
    Ok(BenchTable { repeats, rows })
}
