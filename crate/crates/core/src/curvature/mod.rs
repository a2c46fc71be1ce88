//! Curvature matrices of the empirical risk as matrix-free operators.
//!
//! Every matvec re-runs the forward pass per batch and accumulates the
//! batch contributions in batch order; nothing is cached between calls.

mod kfac;

pub use kfac::{Damping, DampingScheme, KfacFlavor, KfacInverse, KfacOperator, KroneckerBlock};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linop::{LinearOperator, OperatorRef};
use crate::model::ParamLayout;
use crate::risk::{EmpiricalRisk, GradientSource};
use crate::tensor::{ParamList, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureKind {
    Hessian,
    Ggn,
    /// Monte-Carlo Fisher with `samples` labels per datum.
    MonteCarloFisher {
        samples: usize,
        seed: u64,
    },
    EmpiricalFisher,
    /// Expected loss Hessian under the model's likelihood. Both supported
    /// losses have label-independent Hessians, so this is the GGN exactly.
    TypeTwoFisher,
}

impl CurvatureKind {
    pub fn name(&self) -> &'static str {
        match self {
            CurvatureKind::Hessian => "hessian",
            CurvatureKind::Ggn => "ggn",
            CurvatureKind::MonteCarloFisher { .. } => "mc-fisher",
            CurvatureKind::EmpiricalFisher => "emp-fisher",
            CurvatureKind::TypeTwoFisher => "type2-fisher",
        }
    }
}

/// How Hessian-vector products are differentiated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HvpMode {
    /// Tangents pushed through the recorded gradient graph.
    #[default]
    ForwardOverReverse,
    /// Gradient of `∇L · v`.
    ReverseOverReverse,
}

/// A curvature matrix of an [`EmpiricalRisk`] at fixed parameters.
#[derive(Clone, Debug)]
pub struct CurvatureOperator {
    risk: EmpiricalRisk,
    params: ParamList,
    kind: CurvatureKind,
    hvp: HvpMode,
}

impl CurvatureOperator {
    pub fn new(risk: &EmpiricalRisk, params: &[Tensor], kind: CurvatureKind) -> Result<Self> {
        risk.model().check_params(params)?;
        if let CurvatureKind::MonteCarloFisher { samples: 0, .. } = kind {
            return Err(Error::contract(
                "Monte-Carlo Fisher needs at least one sample",
            ));
        }
        Ok(Self {
            risk: risk.clone(),
            params: params.to_vec(),
            kind,
            hvp: HvpMode::default(),
        })
    }

    pub fn with_hvp_mode(mut self, mode: HvpMode) -> Self {
        self.hvp = mode;
        self
    }

    pub fn kind(&self) -> CurvatureKind {
        self.kind
    }

    pub fn risk(&self) -> &EmpiricalRisk {
        &self.risk
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn hessian_batch(&self, idx: &[usize], v: &[Tensor], acc: &mut [Tensor]) -> Result<()> {
        let mut g = self.risk.record_batch(&self.params, idx)?;
        let l = g.record_loss(self.risk.loss(), self.risk.factor())?;
        let pv = g.params.clone();
        let grads = g.tape.grad(l, &pv)?;
        match self.hvp {
            HvpMode::ForwardOverReverse => {
                let seeds: Vec<_> = pv.iter().copied().zip(v.iter()).collect();
                let tans = g.tape.push_tangents(&seeds)?;
                for (a, gv) in acc.iter_mut().zip(&grads) {
                    if let Some(t) = &tans[gv.index()] {
                        a.add_assign(t);
                    }
                }
            }
            HvpMode::ReverseOverReverse => {
                let mut inner = None;
                for (gv, vi) in grads.iter().zip(v) {
                    let c = g.tape.constant(vi.clone());
                    let d = g.tape.dot(*gv, c);
                    inner = Some(match inner {
                        Some(s) => g.tape.add(s, d),
                        None => d,
                    });
                }
                let inner = inner.ok_or_else(|| Error::contract("model has no parameters"))?;
                let hv = g.tape.grad(inner, &pv)?;
                for (a, h) in acc.iter_mut().zip(hv) {
                    a.add_assign(g.tape.value(h));
                }
            }
        }
        Ok(())
    }

    /// `Jᵀ M J v` where `M` acts row-wise on the batch's output space.
    fn gauss_newton_batch(&self, idx: &[usize], v: &[Tensor], acc: &mut [Tensor]) -> Result<()> {
        let mut g = self.risk.record_batch(&self.params, idx)?;
        let pv = g.params.clone();
        let seeds: Vec<_> = pv.iter().copied().zip(v.iter()).collect();
        let tans = g.tape.push_tangents(&seeds)?;
        let f = g.output_value().clone();
        let (n, c) = (f.rows(), f.cols());
        let jv = match &tans[g.output.index()] {
            Some(t) => t.clone(),
            None => return Ok(()),
        };
        let r = self.risk.factor();
        let loss = self.risk.loss();
        let mut u = vec![0.0; n * c];
        match self.kind {
            CurvatureKind::Ggn | CurvatureKind::TypeTwoFisher => {
                for row in 0..n {
                    let h = loss.hessian_output_apply(f.row(row), jv.row(row));
                    for (o, hk) in u[row * c..(row + 1) * c].iter_mut().zip(h) {
                        *o = r * hk;
                    }
                }
            }
            CurvatureKind::EmpiricalFisher | CurvatureKind::MonteCarloFisher { .. } => {
                let (source, weight) = match self.kind {
                    CurvatureKind::MonteCarloFisher { samples, seed } => (
                        GradientSource::Sampled { samples, seed },
                        r / samples as f64,
                    ),
                    _ => (GradientSource::Labels, r),
                };
                let vecs = self.risk.output_seeds(&f, &g.targets, idx, source)?;
                for s in &vecs {
                    for row in 0..n {
                        let sr = s.row(row);
                        let dot: f64 = sr.iter().zip(jv.row(row)).map(|(a, b)| a * b).sum();
                        for (o, sk) in u[row * c..(row + 1) * c].iter_mut().zip(sr) {
                            *o += weight * dot * sk;
                        }
                    }
                }
            }
            CurvatureKind::Hessian => unreachable!(),
        }
        let seed = g.tape.constant(Tensor::from_parts(vec![n, c], u));
        let out = g.tape.vjp(g.output, seed, &pv)?;
        for (a, o) in acc.iter_mut().zip(out) {
            a.add_assign(g.tape.value(o));
        }
        Ok(())
    }

    /// Applies the operator to a parameter list.
    pub fn apply_list(&self, v: &[Tensor]) -> Result<ParamList> {
        self.risk.model().check_params(v)?;
        let mut acc: ParamList = self
            .params
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        for idx in self.risk.batches() {
            match self.kind {
                CurvatureKind::Hessian => self.hessian_batch(&idx, v, &mut acc)?,
                _ => self.gauss_newton_batch(&idx, v, &mut acc)?,
            }
        }
        Ok(acc)
    }
}

impl LinearOperator for CurvatureOperator {
    fn shape(&self) -> (usize, usize) {
        let d = self.risk.num_params();
        (d, d)
    }

    fn is_symmetric(&self) -> bool {
        true
    }

    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let layout = self.risk.layout();
        let out = self.apply_list(&layout.unflatten(v)?)?;
        layout.flatten(&out)
    }

    fn param_layout(&self) -> Option<&ParamLayout> {
        Some(self.risk.layout())
    }

    fn name(&self) -> String {
        self.kind.name().to_string()
    }
}

/// Any supported curvature, including KFAC, behind a shared operator handle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CurvatureSpec {
    Exact(CurvatureKind),
    Kfac(KfacFlavor),
}

pub fn curvature_operator(
    risk: &EmpiricalRisk,
    params: &[Tensor],
    spec: CurvatureSpec,
) -> Result<OperatorRef> {
    Ok(match spec {
        CurvatureSpec::Exact(kind) => Arc::new(CurvatureOperator::new(risk, params, kind)?),
        CurvatureSpec::Kfac(flavor) => Arc::new(KfacOperator::compute(risk, params, flavor)?),
    })
}

pub fn hessian(risk: &EmpiricalRisk, params: &[Tensor]) -> Result<CurvatureOperator> {
    CurvatureOperator::new(risk, params, CurvatureKind::Hessian)
}

pub fn ggn(risk: &EmpiricalRisk, params: &[Tensor]) -> Result<CurvatureOperator> {
    CurvatureOperator::new(risk, params, CurvatureKind::Ggn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Batching, Dataset, Targets};
    use crate::linop::to_dense;
    use crate::loss::{LossKind, Reduction};
    use crate::model::{Layer, Model};

    fn tiny(loss: LossKind) -> (EmpiricalRisk, ParamList) {
        let m = Model::mlp(&[2, 3, 2], Layer::Sigmoid, true).unwrap();
        let x = Tensor::matrix(3, 2, vec![0.5, -1.0, 1.5, 0.2, -0.3, 0.8]).unwrap();
        let t = match loss {
            LossKind::Mse => Targets::Regression(
                Tensor::matrix(3, 2, vec![0.1, 0.2, -0.5, 1.0, 0.3, 0.0]).unwrap(),
            ),
            LossKind::SoftmaxCrossEntropy => Targets::Classes(vec![0, 1, 1]),
        };
        let r = EmpiricalRisk::new(
            m.clone(),
            loss,
            Reduction::Mean,
            Dataset::new(x, t).unwrap(),
        )
        .unwrap();
        (r, m.init_params(9, 1.0))
    }

    #[test]
    fn hvp_modes_agree() {
        let (r, p) = tiny(LossKind::SoftmaxCrossEntropy);
        let a = to_dense(&hessian(&r, &p).unwrap()).unwrap();
        let b = to_dense(
            &hessian(&r, &p)
                .unwrap()
                .with_hvp_mode(HvpMode::ReverseOverReverse),
        )
        .unwrap();
        assert!((a - b).abs().max() <= 1e-12);
    }

    #[test]
    fn type_two_delegates_to_ggn() {
        let (r, p) = tiny(LossKind::Mse);
        let v: Vec<f64> = (0..r.num_params()).map(|i| (i as f64).sin()).collect();
        let g = ggn(&r, &p).unwrap().apply(&v).unwrap();
        let t = CurvatureOperator::new(&r, &p, CurvatureKind::TypeTwoFisher)
            .unwrap()
            .apply(&v)
            .unwrap();
        assert_eq!(g, t);
    }

    #[test]
    fn batching_does_not_change_ggn() {
        let (r, p) = tiny(LossKind::SoftmaxCrossEntropy);
        let v: Vec<f64> = (0..r.num_params()).map(|i| (i as f64).cos()).collect();
        let full = ggn(&r, &p).unwrap().apply(&v).unwrap();
        let single = ggn(&r.clone().with_batching(Batching::Size(1)).unwrap(), &p)
            .unwrap()
            .apply(&v)
            .unwrap();
        for (a, b) in full.iter().zip(single) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_samples_rejected() {
        let (r, p) = tiny(LossKind::Mse);
        let k = CurvatureKind::MonteCarloFisher {
            samples: 0,
            seed: 1,
        };
        assert!(CurvatureOperator::new(&r, &p, k).is_err());
    }
}
