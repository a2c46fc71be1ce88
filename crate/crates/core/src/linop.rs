//! The linear-operator abstraction, its algebra and the determinism check.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::ParamLayout;
use crate::risk::EmpiricalRisk;
use crate::rng;
use crate::tensor::{ParamList, Tensor};

/// Largest number of entries [`to_dense`] will materialize.
pub const DENSE_LIMIT: usize = 10_000_000;

/// A black-box linear map `v ↦ A v`.
///
/// Implementors provide [`matvec`](Self::matvec) on vectors of the right
/// length; the provided `apply*` methods check dimensions and handle the
/// parameter-list format.
pub trait LinearOperator: Send + Sync {
    /// `(rows, cols)`.
    fn shape(&self) -> (usize, usize);

    fn is_symmetric(&self) -> bool;

    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>>;

    /// `Aᵀ v`. Symmetric operators get this for free.
    fn rmatvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.is_symmetric() {
            self.matvec(v)
        } else {
            Err(Error::unsupported(format!("transpose of {}", self.name())))
        }
    }

    /// Shapes of the parameter tensors this operator acts on, if any.
    fn param_layout(&self) -> Option<&ParamLayout> {
        None
    }

    fn name(&self) -> String {
        "operator".to_string()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let (_, cols) = self.shape();
        if v.len() != cols {
            return Err(Error::dim(format!("{} input", self.name()), cols, v.len()));
        }
        self.matvec(v)
    }

    fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        let (rows, _) = self.shape();
        if v.len() != rows {
            return Err(Error::dim(
                format!("{} transpose input", self.name()),
                rows,
                v.len(),
            ));
        }
        self.rmatvec(v)
    }

    /// Applies to a parameter list and returns a list of the same shapes.
    fn apply_params(&self, v: &[Tensor]) -> Result<ParamList> {
        let layout = self.param_layout().ok_or_else(|| {
            Error::unsupported(format!("{} has no parameter layout", self.name()))
        })?;
        let flat = layout.flatten(v)?;
        layout.unflatten(&self.apply(&flat)?)
    }
}

impl fmt::Debug for dyn LinearOperator + '_ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:?}", self.name(), self.shape())
    }
}

pub type OperatorRef = Arc<dyn LinearOperator>;

fn square(op: &dyn LinearOperator) -> Result<usize> {
    let (r, c) = op.shape();
    if r != c {
        return Err(Error::dim(
            format!("{} must be square", op.name()),
            format!("{c}x{c}"),
            format!("{r}x{c}"),
        ));
    }
    Ok(r)
}

/// Checks `op` is square and returns its dimension.
pub fn square_dim(op: &dyn LinearOperator) -> Result<usize> {
    square(op)
}

/// Column `j` is `A e_j`.
pub fn to_dense(op: &dyn LinearOperator) -> Result<DMatrix<f64>> {
    let (rows, cols) = op.shape();
    if rows.saturating_mul(cols) > DENSE_LIMIT {
        return Err(Error::SizeGuard {
            rows,
            cols,
            limit: DENSE_LIMIT,
        });
    }
    let mut m = DMatrix::zeros(rows, cols);
    let mut e = vec![0.0; cols];
    for j in 0..cols {
        e[j] = 1.0;
        let col = op.apply(&e)?;
        m.set_column(j, &DVector::from_vec(col));
        e[j] = 0.0;
    }
    Ok(m)
}

#[derive(Clone, Debug)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
    symmetric: bool,
}

impl DenseOperator {
    /// Symmetry is detected exactly.
    pub fn new(matrix: DMatrix<f64>) -> Self {
        let symmetric = matrix.is_square() && matrix == matrix.transpose();
        Self { matrix, symmetric }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn shape(&self) -> (usize, usize) {
        self.matrix.shape()
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok((&self.matrix * DVector::from_column_slice(v)).data.into())
    }

    fn rmatvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok((self.matrix.tr_mul(&DVector::from_column_slice(v)))
            .data
            .into())
    }

    fn name(&self) -> String {
        "dense".into()
    }
}

#[derive(Clone, Debug)]
pub struct DiagonalOperator {
    diag: Vec<f64>,
}

impl DiagonalOperator {
    pub fn new(diag: Vec<f64>) -> Self {
        Self { diag }
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }
}

impl LinearOperator for DiagonalOperator {
    fn shape(&self) -> (usize, usize) {
        (self.diag.len(), self.diag.len())
    }

    fn is_symmetric(&self) -> bool {
        true
    }

    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.diag.iter().zip(v).map(|(a, b)| a * b).collect())
    }

    fn name(&self) -> String {
        "diagonal".into()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IdentityOperator(pub usize);

impl LinearOperator for IdentityOperator {
    fn shape(&self) -> (usize, usize) {
        (self.0, self.0)
    }

    fn is_symmetric(&self) -> bool {
        true
    }

    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(v.to_vec())
    }

    fn name(&self) -> String {
        "identity".into()
    }
}

type MatvecFn = dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync;

/// Square operator backed by a closure.
pub struct FnOperator {
    dim: usize,
    symmetric: bool,
    name: String,
    f: Box<MatvecFn>,
    layout: Option<ParamLayout>,
}

impl FnOperator {
    pub fn new(
        dim: usize,
        symmetric: bool,
        name: impl Into<String>,
        f: impl Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            symmetric,
            name: name.into(),
            f: Box::new(f),
            layout: None,
        }
    }

    pub fn with_layout(mut self, layout: ParamLayout) -> Self {
        self.layout = Some(layout);
        self
    }
}

impl LinearOperator for FnOperator {
    fn shape(&self) -> (usize, usize) {
        (self.dim, self.dim)
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        (self.f)(v)
    }

    fn param_layout(&self) -> Option<&ParamLayout> {
        self.layout.as_ref()
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// `A + B`, evaluated lazily.
pub struct SumOperator {
    a: OperatorRef,
    b: OperatorRef,
}

/// `αA`.
pub struct ScaledOperator {
    a: OperatorRef,
    alpha: f64,
}

/// `A + λI`.
pub struct ShiftedOperator {
    a: OperatorRef,
    lambda: f64,
}

pub fn add(a: OperatorRef, b: OperatorRef) -> Result<SumOperator> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            "operator sum",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(SumOperator { a, b })
}

pub fn scale(a: OperatorRef, alpha: f64) -> ScaledOperator {
    ScaledOperator { a, alpha }
}

pub fn shift(a: OperatorRef, lambda: f64) -> Result<ShiftedOperator> {
    square(a.as_ref())?;
    Ok(ShiftedOperator { a, lambda })
}

impl LinearOperator for SumOperator {
    fn shape(&self) -> (usize, usize) {
        self.a.shape()
    }

    fn is_symmetric(&self) -> bool {
        self.a.is_symmetric() && self.b.is_symmetric()
    }

    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.a.matvec(v)?;
        for (xi, yi) in x.iter_mut().zip(self.b.matvec(v)?) {
            *xi += yi;
        }
        Ok(x)
    }

    fn rmatvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.a.rmatvec(v)?;
        for (xi, yi) in x.iter_mut().zip(self.b.rmatvec(v)?) {
            *xi += yi;
        }
        Ok(x)
    }

    fn param_layout(&self) -> Option<&ParamLayout> {
        self.a.param_layout().or(self.b.param_layout())
    }

    fn name(&self) -> String {
        format!("({} + {})", self.a.name(), self.b.name())
    }
}

impl LinearOperator for ScaledOperator {
    fn shape(&self) -> (usize, usize) {
        self.a.shape()
    }

    fn is_symmetric(&self) -> bool {
        self.a.is_symmetric()
    }

    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .a
            .matvec(v)?
            .into_iter()
            .map(|x| self.alpha * x)
            .collect())
    }

    fn rmatvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .a
            .rmatvec(v)?
            .into_iter()
            .map(|x| self.alpha * x)
            .collect())
    }

    fn param_layout(&self) -> Option<&ParamLayout> {
        self.a.param_layout()
    }

    fn name(&self) -> String {
        format!("{} * {}", self.alpha, self.a.name())
    }
}

impl LinearOperator for ShiftedOperator {
    fn shape(&self) -> (usize, usize) {
        self.a.shape()
    }

    fn is_symmetric(&self) -> bool {
        self.a.is_symmetric()
    }

    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.a.matvec(v)?;
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi += self.lambda * vi;
        }
        Ok(x)
    }

    fn rmatvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.a.rmatvec(v)?;
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi += self.lambda * vi;
        }
        Ok(x)
    }

    fn param_layout(&self) -> Option<&ParamLayout> {
        self.a.param_layout()
    }

    fn name(&self) -> String {
        format!("({} + {}I)", self.a.name(), self.lambda)
    }
}

/// Outcome of [`check_deterministic`].
#[derive(Clone, Debug, PartialEq)]
pub struct DeterminismReport {
    pub passed: bool,
    /// `"risk value"`, `"risk gradient"` or `"matvec"`.
    pub first_mismatch: Option<String>,
    /// Largest absolute difference seen per quantity, in check order.
    pub deviations: Vec<(String, f64)>,
    /// Set when an evaluation itself failed.
    pub error: Option<String>,
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.to_bits() == y.to_bits() {
                0.0
            } else {
                (x - y).abs()
            }
        })
        .fold(0.0, |m, d| if d.is_nan() || d > m { d } else { m })
}

/// Evaluates the risk value, its gradient and one matvec of `op` twice each
/// and compares the pairs. `tolerance = 0` demands bit equality.
pub fn check_deterministic(
    op: &dyn LinearOperator,
    risk: &EmpiricalRisk,
    params: &[Tensor],
    seed: u64,
    tolerance: f64,
) -> DeterminismReport {
    let mut report = DeterminismReport {
        passed: true,
        first_mismatch: None,
        deviations: Vec::new(),
        error: None,
    };
    let mut r = rng::stream(seed, 0, 0);
    let probe: Vec<f64> = (0..op.shape().1)
        .map(|_| StandardNormal.sample(&mut r))
        .collect();
    type Eval<'a> = Box<dyn Fn() -> Result<Vec<f64>> + 'a>;
    let checks: [(&str, Eval); 3] = [
        (
            "risk value",
            Box::new(|| risk.value(params).map(|v| vec![v])),
        ),
        (
            "risk gradient",
            Box::new(|| {
                risk.gradient(params)
                    .and_then(|g| risk.layout().flatten(&g))
            }),
        ),
        ("matvec", Box::new(|| op.apply(&probe))),
    ];
    for (name, eval) in checks {
        let pair = eval().and_then(|a| eval().map(|b| (a, b)));
        match pair {
            Ok((a, b)) => {
                let d = max_diff(&a, &b);
                report.deviations.push((name.to_string(), d));
                if !(d <= tolerance) && report.passed {
                    report.passed = false;
                    report.first_mismatch = Some(name.to_string());
                }
            }
            Err(e) => {
                report.passed = false;
                report
                    .first_mismatch
                    .get_or_insert_with(|| name.to_string());
                report.error = Some(e.to_string());
                break;
            }
        }
    }
    report
}
