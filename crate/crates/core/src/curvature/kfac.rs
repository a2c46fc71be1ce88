//! Kronecker-factored curvature for linear layers.
//!
//! For a layer with combined weight `V = [W | b]` of shape `out × (in+1)`
//! the block is approximated by `A ⊗ B` with
//! `A = (1/N) Σ_n a_n a_nᵀ` over bias-augmented inputs and
//! `B = R Σ_n Σ_k g_nk g_nkᵀ` over backpropagated output gradients
//! (`R/S` instead of `R` for sampled labels). The matvec is `V ↦ B V Aᵀ`.
//! For a deep linear network with square loss this equals the GGN block.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linop::LinearOperator;
use crate::model::{Layer, ParamLayout};
use crate::risk::{EmpiricalRisk, GradientSource};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KfacFlavor {
    /// Exact loss-Hessian square roots (the GGN / type-II Fisher).
    Type2,
    MonteCarlo {
        samples: usize,
        seed: u64,
    },
    Empirical,
}

/// Factor pair of one linear layer.
#[derive(Clone, Debug)]
pub struct KroneckerBlock {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Index of the weight tensor in the parameter list.
    pub weight: usize,
    /// Index of the bias tensor, if the layer has one.
    pub bias: Option<usize>,
}

impl KroneckerBlock {
    fn out_dim(&self) -> usize {
        self.b.nrows()
    }

    fn in_dim(&self) -> usize {
        self.a.nrows() - usize::from(self.bias.is_some())
    }

    /// The layer's slice of a flat vector as `[W | b]`.
    fn gather(&self, layout: &ParamLayout, v: &[f64]) -> DMatrix<f64> {
        let (o, i) = (self.out_dim(), self.in_dim());
        let w = &v[layout.range(self.weight)];
        let bias = self.bias.map(|k| &v[layout.range(k)]);
        DMatrix::from_fn(o, self.a.nrows(), |r, c| {
            if c < i {
                w[r * i + c]
            } else {
                bias.unwrap()[r]
            }
        })
    }

    fn scatter(&self, layout: &ParamLayout, m: &DMatrix<f64>, out: &mut [f64]) {
        let (o, i) = (self.out_dim(), self.in_dim());
        let wr = layout.range(self.weight);
        for r in 0..o {
            for c in 0..i {
                out[wr.start + r * i + c] = m[(r, c)];
            }
        }
        if let Some(k) = self.bias {
            let br = layout.range(k);
            for r in 0..o {
                out[br.start + r] = m[(r, i)];
            }
        }
    }
}

/// KFAC approximation as a block-diagonal linear operator.
#[derive(Clone, Debug)]
pub struct KfacOperator {
    blocks: Vec<KroneckerBlock>,
    layout: ParamLayout,
}

impl KfacOperator {
    pub fn compute(risk: &EmpiricalRisk, params: &[Tensor], flavor: KfacFlavor) -> Result<Self> {
        let model = risk.model();
        model.check_params(params)?;
        for layer in model.layers() {
            match layer {
                Layer::BatchCenter => {
                    return Err(Error::unsupported(
                        "KFAC does not cover batch-coupled layers",
                    ));
                }
                Layer::Noise { .. } => {
                    return Err(Error::unsupported("KFAC needs a deterministic model"));
                }
                _ => {}
            }
        }
        let (source, weight) = match flavor {
            KfacFlavor::Type2 => (GradientSource::LossHessianSqrt, 1.0),
            KfacFlavor::Empirical => (GradientSource::Labels, 1.0),
            KfacFlavor::MonteCarlo { samples, seed } => {
                if samples == 0 {
                    return Err(Error::contract(
                        "Monte-Carlo KFAC needs at least one sample",
                    ));
                }
                (
                    GradientSource::Sampled { samples, seed },
                    1.0 / samples as f64,
                )
            }
        };
        let n = risk.dataset().len() as f64;
        let r = risk.factor();
        let mut blocks: Vec<KroneckerBlock> = Vec::new();
        let mut first = true;
        for idx in risk.batches() {
            let cap = risk.capture_layer_io(params, &idx, source)?;
            if first {
                let mut next = 0;
                for layer in &cap.layers {
                    let ad = layer.inputs.cols();
                    let od = layer.output_grads[0].cols();
                    let weight_idx = next;
                    let bias = layer.bias.then_some(weight_idx + 1);
                    next += 1 + usize::from(layer.bias);
                    blocks.push(KroneckerBlock {
                        a: DMatrix::zeros(ad, ad),
                        b: DMatrix::zeros(od, od),
                        weight: weight_idx,
                        bias,
                    });
                }
                if blocks.is_empty() {
                    return Err(Error::contract("KFAC needs at least one linear layer"));
                }
                first = false;
            }
            for (block, layer) in blocks.iter_mut().zip(&cap.layers) {
                let a = to_matrix(&layer.inputs);
                block.a += a.tr_mul(&a) / n;
                for g in &layer.output_grads {
                    let g = to_matrix(g);
                    block.b += g.tr_mul(&g) * (r * weight);
                }
            }
        }
        for b in &mut blocks {
            symmetrize(&mut b.a);
            symmetrize(&mut b.b);
        }
        Ok(Self {
            blocks,
            layout: model.layout().clone(),
        })
    }

    /// Builds the operator from given factors, e.g. for testing.
    pub fn from_blocks(blocks: Vec<KroneckerBlock>, layout: ParamLayout) -> Result<Self> {
        for b in &blocks {
            let wshape = layout
                .shapes()
                .get(b.weight)
                .ok_or_else(|| Error::dim("weight index", layout.len(), b.weight))?;
            let expect_a = wshape[1] + usize::from(b.bias.is_some());
            if b.a.shape() != (expect_a, expect_a) || b.b.shape() != (wshape[0], wshape[0]) {
                return Err(Error::dim(
                    "Kronecker factors",
                    format!("A {expect_a}x{expect_a}, B {0}x{0}", wshape[0]),
                    format!("A {:?}, B {:?}", b.a.shape(), b.b.shape()),
                ));
            }
        }
        Ok(Self { blocks, layout })
    }

    pub fn blocks(&self) -> &[KroneckerBlock] {
        &self.blocks
    }

    pub fn inverse(&self, damping: Damping) -> Result<KfacInverse> {
        KfacInverse::new(self, damping)
    }
}

fn to_matrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m = (&*m + t) * 0.5;
}

impl LinearOperator for KfacOperator {
    fn shape(&self) -> (usize, usize) {
        let d = self.layout.numel();
        (d, d)
    }

    fn is_symmetric(&self) -> bool {
        true
    }

    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; v.len()];
        for block in &self.blocks {
            let m = block.gather(&self.layout, v);
            let r = &block.b * m * block.a.transpose();
            block.scatter(&self.layout, &r, &mut out);
        }
        Ok(out)
    }

    fn param_layout(&self) -> Option<&ParamLayout> {
        Some(&self.layout)
    }

    fn name(&self) -> String {
        "kfac".into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingScheme {
    /// `(A + π√λ I)⁻¹ ⊗ (B + √λ/π I)⁻¹` with the trace-ratio `π`.
    Heuristic,
    /// `(A ⊗ B + λ I)⁻¹` through both eigendecompositions.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Damping {
    pub lambda: f64,
    pub scheme: DampingScheme,
}

impl Damping {
    pub fn exact(lambda: f64) -> Self {
        Self {
            lambda,
            scheme: DampingScheme::Exact,
        }
    }

    pub fn heuristic(lambda: f64) -> Self {
        Self {
            lambda,
            scheme: DampingScheme::Heuristic,
        }
    }
}

/// Slack allowed below zero in a factor's spectrum, relative to its largest eigenvalue.
const PSD_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
enum InverseBlock {
    Heuristic {
        a_inv: DMatrix<f64>,
        b_inv: DMatrix<f64>,
    },
    Exact {
        qa: DMatrix<f64>,
        qb: DMatrix<f64>,
        /// `1 / (λ_B,i λ_A,j + λ)`.
        scale: DMatrix<f64>,
    },
}

/// Damped inverse of a [`KfacOperator`].
#[derive(Clone, Debug)]
pub struct KfacInverse {
    blocks: Vec<(KroneckerBlock, InverseBlock)>,
    layout: ParamLayout,
}

fn eigen_checked(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let e = SymmetricEigen::new(m.clone());
    let max = e.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = e.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL * max.max(1.0) {
        return Err(Error::Damping(format!(
            "{what} factor is not PSD (eigenvalue {min:e})"
        )));
    }
    Ok(e)
}

fn spd_inverse(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Damping(format!("damped {what} factor is not positive definite")))
}

impl KfacInverse {
    pub fn new(op: &KfacOperator, damping: Damping) -> Result<Self> {
        let lambda = damping.lambda;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Damping(format!("λ must be positive, got {lambda}")));
        }
        let mut blocks = Vec::with_capacity(op.blocks.len());
        for block in &op.blocks {
            let ea = eigen_checked(&block.a, "input")?;
            let eb = eigen_checked(&block.b, "gradient")?;
            let inv = match damping.scheme {
                DampingScheme::Heuristic => {
                    let (da, db) = (block.a.nrows() as f64, block.b.nrows() as f64);
                    let (ta, tb) = (block.a.trace(), block.b.trace());
                    if !(ta > 0.0 && tb > 0.0) {
                        return Err(Error::Damping(format!(
                            "trace-ratio heuristic needs positive factor traces, got {ta:e} and {tb:e}"
                        )));
                    }
                    let pi = ((ta / da) / (tb / db)).sqrt();
                    let s = lambda.sqrt();
                    let a =
                        &block.a + DMatrix::identity(block.a.nrows(), block.a.nrows()) * (pi * s);
                    let b =
                        &block.b + DMatrix::identity(block.b.nrows(), block.b.nrows()) * (s / pi);
                    InverseBlock::Heuristic {
                        a_inv: spd_inverse(a, "input")?,
                        b_inv: spd_inverse(b, "gradient")?,
                    }
                }
                DampingScheme::Exact => {
                    let scale = DMatrix::from_fn(block.b.nrows(), block.a.nrows(), |i, j| {
                        1.0 / (eb.eigenvalues[i].max(0.0) * ea.eigenvalues[j].max(0.0) + lambda)
                    });
                    InverseBlock::Exact {
                        qa: ea.eigenvectors,
                        qb: eb.eigenvectors,
                        scale,
                    }
                }
            };
            blocks.push((block.clone(), inv));
        }
        Ok(Self {
            blocks,
            layout: op.layout.clone(),
        })
    }
}

impl LinearOperator for KfacInverse {
    fn shape(&self) -> (usize, usize) {
        let d = self.layout.numel();
        (d, d)
    }

    fn is_symmetric(&self) -> bool {
        true
    }

    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; v.len()];
        for (block, inv) in &self.blocks {
            let m = block.gather(&self.layout, v);
            let r = match inv {
                InverseBlock::Heuristic { a_inv, b_inv } => b_inv * m * a_inv,
                InverseBlock::Exact { qa, qb, scale } => {
                    let rot = qb.tr_mul(&m) * qa;
                    qb * rot.component_mul(scale) * qa.transpose()
                }
            };
            block.scatter(&self.layout, &r, &mut out);
        }
        Ok(out)
    }

    fn param_layout(&self) -> Option<&ParamLayout> {
        Some(&self.layout)
    }

    fn name(&self) -> String {
        "kfac-inverse".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::to_dense;

    fn single_layer(a: DMatrix<f64>, b: DMatrix<f64>, bias: bool) -> KfacOperator {
        let out = b.nrows();
        let inp = a.nrows() - usize::from(bias);
        let mut shapes = vec![vec![out, inp]];
        if bias {
            shapes.push(vec![out]);
        }
        let block = KroneckerBlock {
            a,
            b,
            weight: 0,
            bias: bias.then_some(1),
        };
        KfacOperator::from_blocks(vec![block], ParamLayout::new(shapes)).unwrap()
    }

    #[test]
    fn identity_factors_give_identity() {
        let op = single_layer(DMatrix::identity(4, 4), DMatrix::identity(3, 3), true);
        let v: Vec<f64> = (0..12).map(|i| i as f64 - 7.0).collect();
        assert_eq!(op.apply(&v).unwrap(), v);
    }

    #[test]
    fn scalar_factors_heuristic_closed_form() {
        let (alpha, beta, lambda) = (2.0, 0.5, 0.09);
        let op = single_layer(
            DMatrix::identity(3, 3) * alpha,
            DMatrix::identity(2, 2) * beta,
            false,
        );
        let inv = op.inverse(Damping::heuristic(lambda)).unwrap();
        let pi = (alpha / beta).sqrt();
        let s = lambda.sqrt();
        let expect = 1.0 / ((alpha + pi * s) * (beta + s / pi));
        let v = vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0];
        for (x, y) in inv.apply(&v).unwrap().iter().zip(&v) {
            assert!((x - expect * y).abs() < 1e-14);
        }
    }

    #[test]
    fn damping_must_be_positive() {
        let op = single_layer(DMatrix::identity(2, 2), DMatrix::identity(2, 2), false);
        assert!(matches!(
            op.inverse(Damping::exact(0.0)),
            Err(Error::Damping(_))
        ));
    }

    #[test]
    fn indefinite_factor_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let op = single_layer(a, DMatrix::identity(2, 2), false);
        assert!(matches!(
            op.inverse(Damping::exact(0.1)),
            Err(Error::Damping(_))
        ));
    }

    #[test]
    fn matvec_matches_explicit_kronecker_with_bias() {
        // Row-major [W | b] flattening makes the dense block B ⊗ A up to the
        // bias permutation; compare against that explicit product.
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                2.0, 0.3, 0.1, 0.2, 0.3, 1.5, -0.2, 0.0, 0.1, -0.2, 1.0, 0.4, 0.2, 0.0, 0.4, 0.8,
            ],
        );
        let b = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.7, 0.1, 0.0, 0.1, 0.5]);
        let op = single_layer(a.clone(), b.clone(), true);
        let dense = to_dense(&op).unwrap();
        let kron = b.kronecker(&a);
        // map combined row-major index (r, c) of [W | b] to flat parameter index
        let flat = |r: usize, c: usize| if c < 3 { r * 3 + c } else { 9 + r };
        for r1 in 0..3 {
            for c1 in 0..4 {
                for r2 in 0..3 {
                    for c2 in 0..4 {
                        let k = kron[(r1 * 4 + c1, r2 * 4 + c2)];
                        assert!((dense[(flat(r1, c1), flat(r2, c2))] - k).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
