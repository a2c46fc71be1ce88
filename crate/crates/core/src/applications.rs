//! Newton steps, influence functions, Fisher merging, pruning scores and
//! gradient/eigenspace overlap, built from curvature operators and solvers.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::curvature::{
    curvature_operator, CurvatureKind, CurvatureSpec, Damping, DampingScheme, KfacOperator,
};
use crate::error::{Error, Result};
use crate::linop::{shift, square_dim, FnOperator, LinearOperator, OperatorRef};
use crate::risk::EmpiricalRisk;
use crate::rla::{hutchinson_diag, xdiag, ProbeSpec};
use crate::solvers::{cg_solve, dot, eigsh_topk, CgOptions, EigshOptions, SolveReport};
use crate::tensor::Tensor;

/// How a diagonal of an operator is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DiagSource {
    /// One matvec per unit vector.
    Exact,
    Hutchinson {
        probes: usize,
        seed: u64,
    },
    Xdiag {
        budget: usize,
        seed: u64,
    },
}

/// Diagonal of a square operator.
pub fn operator_diagonal(op: &dyn LinearOperator, source: DiagSource) -> Result<Vec<f64>> {
    let n = square_dim(op)?;
    match source {
        DiagSource::Exact => {
            let mut e = vec![0.0; n];
            let mut d = Vec::with_capacity(n);
            for i in 0..n {
                e[i] = 1.0;
                d.push(op.apply(&e)?[i]);
                e[i] = 0.0;
            }
            Ok(d)
        }
        DiagSource::Hutchinson { probes, seed } => {
            Ok(hutchinson_diag(op, &ProbeSpec::rademacher(probes, seed))?.value)
        }
        DiagSource::Xdiag { budget, seed } => Ok(xdiag(op, budget, seed)?.value),
    }
}

fn damped(op: OperatorRef, lambda: f64) -> Result<OperatorRef> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Damping(format!(
            "damping must be a finite nonnegative number, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(op);
    }
    Ok(Arc::new(shift(op, lambda)?))
}

fn solve(op: &dyn LinearOperator, b: &[f64], cg: &CgOptions) -> Result<(Vec<f64>, SolveReport)> {
    let (x, report) = cg_solve(op, b, cg)?;
    report.require_converged("cg")?;
    Ok((x, report))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NewtonStepResult {
    /// `δ = (C + λI)⁻¹ g`; the caller applies the step size.
    pub direction: Vec<f64>,
    /// `None` when the inverse was applied in closed form (KFAC).
    pub report: Option<SolveReport>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonConfig {
    pub curvature: CurvatureSpec,
    pub damping: f64,
    /// Used only for KFAC curvature.
    pub kfac_scheme: DampingScheme,
    pub cg: CgOptions,
}

impl NewtonConfig {
    pub fn new(curvature: CurvatureSpec, damping: f64) -> Self {
        Self {
            curvature,
            damping,
            kfac_scheme: DampingScheme::Exact,
            cg: CgOptions::default(),
        }
    }
}

/// Solves `(C + λI) δ = g` by conjugate gradients.
pub fn precondition(
    op: OperatorRef,
    g: &[f64],
    lambda: f64,
    cg: &CgOptions,
) -> Result<NewtonStepResult> {
    let a = damped(op, lambda)?;
    let (direction, report) = solve(a.as_ref(), g, cg)?;
    Ok(NewtonStepResult {
        direction,
        report: Some(report),
    })
}

/// Preconditioned gradient `(C + λI)⁻¹ ∇L` at `params`.
pub fn newton_step(
    risk: &EmpiricalRisk,
    params: &[Tensor],
    cfg: &NewtonConfig,
) -> Result<NewtonStepResult> {
    let g = risk.layout().flatten(&risk.gradient(params)?)?;
    match cfg.curvature {
        CurvatureSpec::Kfac(flavor) => {
            let inv = KfacOperator::compute(risk, params, flavor)?.inverse(Damping {
                lambda: cfg.damping,
                scheme: cfg.kfac_scheme,
            })?;
            Ok(NewtonStepResult {
                direction: inv.apply(&g)?,
                report: None,
            })
        }
        CurvatureSpec::Exact(kind) => {
            if kind == CurvatureKind::Hessian && !(cfg.damping > 0.0) {
                return Err(Error::Damping(
                    "the Hessian path needs positive damping".into(),
                ));
            }
            precondition(
                curvature_operator(risk, params, cfg.curvature)?,
                &g,
                cfg.damping,
                &cfg.cg,
            )
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InfluenceConfig {
    /// Hessian by default; the GGN is the usual positive semi-definite substitute.
    pub curvature: CurvatureKind,
    pub damping: f64,
    pub cg: CgOptions,
}

impl InfluenceConfig {
    pub fn new(damping: f64) -> Self {
        Self {
            curvature: CurvatureKind::Hessian,
            damping,
            cg: CgOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InfluenceResult {
    pub datum: usize,
    /// `(H + λI)⁻¹ ∇P` with `P = R ℓ(f(x_n), y_n)`.
    pub ihvp: Vec<f64>,
    /// `dθ̂/dε` for the minimizer of `L + (λ/2)‖θ‖² + εP`, which is `−ihvp`.
    pub influence: Vec<f64>,
    pub report: SolveReport,
}

/// Influence of up-weighting one datum on the parameters.
///
/// Assumes `params` minimize the damped risk; this is not checked.
pub fn influence_upweight(
    risk: &EmpiricalRisk,
    params: &[Tensor],
    datum: usize,
    cfg: &InfluenceConfig,
) -> Result<InfluenceResult> {
    if !(cfg.damping > 0.0) && cfg.curvature == CurvatureKind::Hessian {
        return Err(Error::Damping(
            "the Hessian path needs positive damping".into(),
        ));
    }
    let r = risk.factor();
    let grad_p: Vec<f64> = risk
        .datum_gradient(params, datum)?
        .into_iter()
        .map(|g| r * g)
        .collect();
    let op = curvature_operator(risk, params, CurvatureSpec::Exact(cfg.curvature))?;
    let a = damped(op, cfg.damping)?;
    let (ihvp, report) = solve(a.as_ref(), &grad_p, &cfg.cg)?;
    Ok(InfluenceResult {
        datum,
        influence: ihvp.iter().map(|x| -x).collect(),
        ihvp,
        report,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MergeMode {
    /// `(Σ F_t + λI) θ⋆ = Σ F_t θ_t` by conjugate gradients.
    Full(CgOptions),
    /// The same system with every `F_t` replaced by its diagonal.
    Diagonal(DiagSource),
}

fn task_order(thetas: &[Vec<f64>], images: &[Vec<f64>]) -> Vec<usize> {
    let key = |t: usize| -> Vec<u64> {
        thetas[t]
            .iter()
            .chain(&images[t])
            .map(|x| x.to_bits())
            .collect()
    };
    let mut order: Vec<usize> = (0..thetas.len()).collect();
    order.sort_by_key(|&t| key(t));
    order
}

/// Fisher-weighted average of task parameters.
///
/// Tasks are accumulated in a canonical order, so the result does not
/// depend on how they are listed.
pub fn fisher_merge(
    thetas: &[Vec<f64>],
    fishers: &[OperatorRef],
    lambda: f64,
    mode: MergeMode,
) -> Result<Vec<f64>> {
    if thetas.is_empty() {
        return Err(Error::contract("need at least one task"));
    }
    if thetas.len() != fishers.len() {
        return Err(Error::dim("Fisher operators", thetas.len(), fishers.len()));
    }
    let d = thetas[0].len();
    for (t, f) in thetas.iter().zip(fishers) {
        if t.len() != d {
            return Err(Error::dim("task parameters", d, t.len()));
        }
        if square_dim(f.as_ref())? != d {
            return Err(Error::dim("Fisher operator", d, f.shape().0));
        }
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Damping(format!(
            "merging needs positive damping, got {lambda}"
        )));
    }
    let images: Vec<Vec<f64>> = thetas
        .iter()
        .zip(fishers)
        .map(|(t, f)| f.apply(t))
        .collect::<Result<_>>()?;
    let order = task_order(thetas, &images);
    let mut rhs = vec![0.0; d];
    match mode {
        MergeMode::Full(cg) => {
            for &t in &order {
                for (r, x) in rhs.iter_mut().zip(&images[t]) {
                    *r += x;
                }
            }
            let ops: Vec<OperatorRef> = order.iter().map(|&t| fishers[t].clone()).collect();
            let sum = FnOperator::new(d, true, "fisher-sum", move |v| {
                let mut out: Vec<f64> = v.iter().map(|x| lambda * x).collect();
                for op in &ops {
                    for (o, x) in out.iter_mut().zip(op.apply(v)?) {
                        *o += x;
                    }
                }
                Ok(out)
            });
            Ok(solve(&sum, &rhs, &cg)?.0)
        }
        MergeMode::Diagonal(source) => {
            let mut den = vec![lambda; d];
            for &t in &order {
                let f = operator_diagonal(fishers[t].as_ref(), source)?;
                for i in 0..d {
                    rhs[i] += f[i] * thetas[t][i];
                    den[i] += f[i];
                }
            }
            Ok(rhs.iter().zip(&den).map(|(r, q)| r / q).collect())
        }
    }
}

/// How `[(H + λI)⁻¹]_ii` is computed in full-mode pruning.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InverseDiagonal {
    /// One CG solve per selected index; also yields the updates `δ(i)`.
    PerIndex,
    /// XDiag of the inverse operator, each matvec a CG solve.
    Xdiag { budget: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum PruneMode {
    /// `ρ_i = θ_i² h_ii / 2`, treating the Hessian as diagonal.
    Diagonal(DiagSource),
    Full {
        damping: f64,
        /// Indices to score; all when `None`.
        indices: Option<Vec<usize>>,
        method: InverseDiagonal,
        cg: CgOptions,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PruneScore {
    pub indices: Vec<usize>,
    /// `None` where the inverse diagonal entry was not positive.
    pub scores: Vec<Option<f64>>,
    /// `δ(i)` per scored index, when computed.
    pub updates: Option<Vec<Vec<f64>>>,
    /// Indices whose inverse diagonal entry was not positive.
    pub flagged: Vec<usize>,
}

/// Pruning saliencies for parameters `theta` under the curvature `op`.
pub fn prune_with(op: OperatorRef, theta: &[f64], mode: &PruneMode) -> Result<PruneScore> {
    let n = square_dim(op.as_ref())?;
    if theta.len() != n {
        return Err(Error::dim("parameters", n, theta.len()));
    }
    match mode {
        PruneMode::Diagonal(source) => {
            let h = operator_diagonal(op.as_ref(), *source)?;
            Ok(PruneScore {
                indices: (0..n).collect(),
                scores: theta
                    .iter()
                    .zip(&h)
                    .map(|(t, h)| Some(t * t * h / 2.0))
                    .collect(),
                updates: None,
                flagged: Vec::new(),
            })
        }
        PruneMode::Full {
            damping,
            indices,
            method,
            cg,
        } => {
            if !(*damping > 0.0) {
                return Err(Error::Damping(format!(
                    "full-mode pruning needs positive damping, got {damping}"
                )));
            }
            let indices = indices.clone().unwrap_or_else(|| (0..n).collect());
            if let Some(&i) = indices.iter().find(|&&i| i >= n) {
                return Err(Error::dim("prune index", format!("< {n}"), i));
            }
            let a = damped(op, *damping)?;
            let (inv_diag, updates) = match *method {
                InverseDiagonal::PerIndex => {
                    let mut diag = Vec::with_capacity(indices.len());
                    let mut ups = Vec::with_capacity(indices.len());
                    let mut e = vec![0.0; n];
                    for &i in &indices {
                        e[i] = 1.0;
                        let (col, _) = solve(a.as_ref(), &e, cg)?;
                        e[i] = 0.0;
                        let dii = col[i];
                        ups.push(if dii > 0.0 && theta[i] != 0.0 {
                            col.iter().map(|c| -theta[i] * c / dii).collect()
                        } else {
                            vec![0.0; n]
                        });
                        diag.push(dii);
                    }
                    (diag, Some(ups))
                }
                InverseDiagonal::Xdiag { budget, seed } => {
                    let cg = *cg;
                    let inner = a.clone();
                    let inv = FnOperator::new(n, true, "damped-inverse", move |v| {
                        Ok(solve(inner.as_ref(), v, &cg)?.0)
                    });
                    let full = xdiag(&inv, budget, seed)?.value;
                    (indices.iter().map(|&i| full[i]).collect(), None)
                }
            };
            let mut flagged = Vec::new();
            let scores = indices
                .iter()
                .zip(&inv_diag)
                .map(|(&i, &d)| {
                    if d > 0.0 {
                        Some(theta[i] * theta[i] / (2.0 * d))
                    } else {
                        flagged.push(i);
                        None
                    }
                })
                .collect();
            Ok(PruneScore {
                indices,
                scores,
                updates,
                flagged,
            })
        }
    }
}

/// Pruning saliencies of the risk's parameters under a curvature (usually the Hessian).
pub fn prune_scores(
    risk: &EmpiricalRisk,
    params: &[Tensor],
    kind: CurvatureKind,
    mode: &PruneMode,
) -> Result<PruneScore> {
    let theta = risk.layout().flatten(params)?;
    prune_with(
        curvature_operator(risk, params, CurvatureSpec::Exact(kind))?,
        &theta,
        mode,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Overlap {
    /// `‖Q_kᵀ g‖² / ‖g‖²`, in `[0, 1]`.
    pub value: f64,
    /// Set when `g = 0`; the overlap is then reported as 0.
    pub zero_gradient: bool,
    pub eigenvalues: Vec<f64>,
}

/// Fraction of `g` lying in the span of the top-`k` eigenvectors of `op`.
pub fn overlap_with(
    op: &dyn LinearOperator,
    g: &[f64],
    k: usize,
    opts: &EigshOptions,
) -> Result<Overlap> {
    let n = square_dim(op)?;
    if g.len() != n {
        return Err(Error::dim("gradient", n, g.len()));
    }
    if k == 0 || k >= n {
        return Err(Error::contract(format!("need 0 < k < {n}, got {k}")));
    }
    let eig = eigsh_topk(op, k, opts)?;
    let gg = dot(g, g);
    if gg == 0.0 {
        return Ok(Overlap {
            value: 0.0,
            zero_gradient: true,
            eigenvalues: eig.values,
        });
    }
    let proj: f64 = eig.vectors.iter().map(|q| dot(q, g).powi(2)).sum();
    Ok(Overlap {
        value: (proj / gg).clamp(0.0, 1.0),
        zero_gradient: false,
        eigenvalues: eig.values,
    })
}

/// Overlap of the risk gradient with the top-`k` eigenspace of a curvature.
pub fn eigenspace_overlap(
    risk: &EmpiricalRisk,
    params: &[Tensor],
    kind: CurvatureKind,
    k: usize,
    opts: &EigshOptions,
) -> Result<Overlap> {
    let g = risk.layout().flatten(&risk.gradient(params)?)?;
    let op = curvature_operator(risk, params, CurvatureSpec::Exact(kind))?;
    overlap_with(op.as_ref(), &g, k, opts)
}
