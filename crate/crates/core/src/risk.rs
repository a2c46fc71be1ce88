//! Empirical risk `L_D(θ) = R_D Σ_n ℓ(f_θ(x_n), y_n)`, accumulated over batches.

use std::sync::Arc;

use crate::ad::{Tape, Var};
use crate::data::{Batching, Dataset, Targets};
use crate::error::{Error, Result};
use crate::loss::{Label, LossKind, Reduction};
use crate::model::{LinearRecord, Model, ParamLayout};
use crate::rng;
use crate::tensor::{ParamList, Tensor};

/// Model, criterion, reduction and data: everything that defines `L_D`.
/// Data is shared by reference count, so clones are cheap snapshots.
#[derive(Clone, Debug)]
pub struct EmpiricalRisk {
    model: Model,
    loss: LossKind,
    reduction: Reduction,
    data: Arc<Dataset>,
    batching: Batching,
}

/// One batch recorded on a fresh tape with the parameters as leaves.
pub(crate) struct BatchGraph {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub output: Var,
    pub linear: Vec<LinearRecord>,
    pub targets: Targets,
}

impl BatchGraph {
    /// Records `scale · Σ_n ℓ_n` for this batch.
    pub fn record_loss(&mut self, loss: LossKind, scale: f64) -> Result<Var> {
        let s = loss.record_sum(&mut self.tape, self.output, &self.targets)?;
        Ok(self.tape.scale(s, scale))
    }

    pub fn output_value(&self) -> &Tensor {
        self.tape.value(self.output)
    }
}

/// Which vectors are backpropagated from the network output when capturing
/// layer quantities. Each datum contributes `per_datum` vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientSource {
    /// `∇_f ℓ(f_n, y_n)` with the true labels.
    Labels,
    /// `∇_f ℓ(f_n, ŷ)` for `samples` labels drawn from the model's likelihood.
    Sampled { samples: usize, seed: u64 },
    /// Columns of a square root of `∇²_f ℓ(f_n, ·)`.
    LossHessianSqrt,
}

/// Per linear layer: inputs (with a trailing 1 when the layer has a bias)
/// and gradients w.r.t. the layer output.
#[derive(Clone, Debug)]
pub struct CapturedLayer {
    pub inputs: Tensor,
    /// One `[n, out]` matrix per backpropagated vector index.
    pub output_grads: Vec<Tensor>,
    pub bias: bool,
}

#[derive(Clone, Debug)]
pub struct LayerCapture {
    pub layers: Vec<CapturedLayer>,
    pub batch: Vec<usize>,
}

impl EmpiricalRisk {
    pub fn new(model: Model, loss: LossKind, reduction: Reduction, data: Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::contract("data set must not be empty"));
        }
        if data.input_dim() != model.input_dim() {
            return Err(Error::dim(
                "data input width",
                model.input_dim(),
                data.input_dim(),
            ));
        }
        let c = model.output_dim();
        match (loss, data.targets()) {
            (LossKind::Mse, Targets::Regression(y)) => {
                if y.cols() != c {
                    return Err(Error::dim("regression target width", c, y.cols()));
                }
            }
            (LossKind::SoftmaxCrossEntropy, Targets::Classes(cls)) => {
                if let Some(&k) = cls.iter().find(|&&k| k >= c) {
                    return Err(Error::dim("class index", format!("< {c}"), k));
                }
            }
            (l, _) => return Err(Error::unsupported(format!("{l:?} loss with these targets"))),
        }
        Ok(Self {
            model,
            loss,
            reduction,
            data: Arc::new(data),
            batching: Batching::Full,
        })
    }

    pub fn with_batching(mut self, batching: Batching) -> Result<Self> {
        batching.validate(self.data.len())?;
        self.batching = batching;
        Ok(self)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn batching(&self) -> &Batching {
        &self.batching
    }

    pub fn layout(&self) -> &ParamLayout {
        self.model.layout()
    }

    pub fn num_params(&self) -> usize {
        self.model.num_params()
    }

    /// `R_D`, always from the full data set size.
    pub fn factor(&self) -> f64 {
        self.reduction
            .factor(self.data.len(), self.model.output_dim())
    }

    pub(crate) fn batches(&self) -> Vec<Vec<usize>> {
        self.batching.batches(self.data.len())
    }

    pub(crate) fn record_batch(&self, params: &[Tensor], idx: &[usize]) -> Result<BatchGraph> {
        self.model.check_params(params)?;
        if idx.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let (x, targets) = self.data.gather(idx);
        let mut tape = Tape::new();
        let pv: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let xv = tape.constant(x);
        let rec = self.model.record_forward(&mut tape, &pv, xv)?;
        Ok(BatchGraph {
            tape,
            params: pv,
            output: rec.output,
            linear: rec.linear,
            targets,
        })
    }

    pub fn value(&self, params: &[Tensor]) -> Result<f64> {
        let r = self.factor();
        let mut total = 0.0;
        for idx in self.batches() {
            let mut g = self.record_batch(params, &idx)?;
            let l = g.record_loss(self.loss, r)?;
            total += g.tape.value(l).data()[0];
        }
        Ok(total)
    }

    pub fn gradient(&self, params: &[Tensor]) -> Result<ParamList> {
        let r = self.factor();
        let mut acc: ParamList = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        for idx in self.batches() {
            let mut g = self.record_batch(params, &idx)?;
            let l = g.record_loss(self.loss, r)?;
            let grads = g.tape.grad(l, &g.params.clone())?;
            for (a, v) in acc.iter_mut().zip(grads) {
                a.add_assign(g.tape.value(v));
            }
        }
        Ok(acc)
    }

    pub fn value_flat(&self, theta: &[f64]) -> Result<f64> {
        self.value(&self.layout().unflatten(theta)?)
    }

    pub fn gradient_flat(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let g = self.gradient(&self.layout().unflatten(theta)?)?;
        self.layout().flatten(&g)
    }

    /// `∇_θ ℓ(f_θ(x_i), y_i)` for a single datum, without the factor `R_D`.
    pub fn datum_gradient(&self, params: &[Tensor], i: usize) -> Result<Vec<f64>> {
        if i >= self.data.len() {
            return Err(Error::dim(
                "datum index",
                format!("< {}", self.data.len()),
                i,
            ));
        }
        let mut g = self.record_batch(params, &[i])?;
        let l = g.record_loss(self.loss, 1.0)?;
        let grads = g.tape.grad(l, &g.params.clone())?;
        let list: ParamList = grads.into_iter().map(|v| g.tape.value(v).clone()).collect();
        self.layout().flatten(&list)
    }

    /// Output-space vectors to backpropagate for each datum of a batch, as
    /// `per_datum` matrices of shape `[n, C]`.
    pub(crate) fn output_seeds(
        &self,
        f: &Tensor,
        targets: &Targets,
        idx: &[usize],
        source: GradientSource,
    ) -> Result<Vec<Tensor>> {
        let (n, c) = (f.rows(), f.cols());
        let per = match source {
            GradientSource::Labels => 1,
            GradientSource::Sampled { samples, .. } => {
                if samples == 0 {
                    return Err(Error::contract("sample count must be >= 1"));
                }
                samples
            }
            GradientSource::LossHessianSqrt => c,
        };
        let mut seeds = vec![vec![0.0; n * c]; per];
        for row in 0..n {
            let fr = f.row(row);
            let vectors: Vec<Vec<f64>> = match source {
                GradientSource::Labels => vec![self.loss.grad_output(fr, &targets.label(row))],
                GradientSource::Sampled { samples, seed } => {
                    // One stream per (seed, datum) so draws do not depend on batching.
                    let mut r = rng::stream(seed, idx[row] as u64, 0);
                    self.loss
                        .sample(fr, samples, &mut r)
                        .iter()
                        .map(|y| self.loss.grad_output(fr, y))
                        .collect()
                }
                GradientSource::LossHessianSqrt => self.loss.hessian_output_sqrt(fr),
            };
            for (k, v) in vectors.into_iter().enumerate() {
                seeds[k][row * c..(row + 1) * c].copy_from_slice(&v);
            }
        }
        Ok(seeds
            .into_iter()
            .map(|d| Tensor::from_parts(vec![n, c], d))
            .collect())
    }

    /// Linear-layer inputs and output gradients for the data in `idx`.
    pub fn capture_layer_io(
        &self,
        params: &[Tensor],
        idx: &[usize],
        source: GradientSource,
    ) -> Result<LayerCapture> {
        if !self.model.is_per_datum() {
            return Err(Error::unsupported("layer capture needs per-datum layers"));
        }
        if self
            .model
            .layers()
            .iter()
            .any(|l| matches!(l, crate::model::Layer::Noise { .. }))
        {
            return Err(Error::unsupported(
                "layer capture needs a deterministic model",
            ));
        }
        let mut g = self.record_batch(params, idx)?;
        let seeds = self.output_seeds(g.output_value(), &g.targets, idx, source)?;
        let outputs: Vec<Var> = g.linear.iter().map(|l| l.output).collect();
        let mut grads: Vec<Vec<Tensor>> = vec![Vec::with_capacity(seeds.len()); outputs.len()];
        for s in seeds {
            let mark = g.tape.mark();
            let sv = g.tape.constant(s);
            let adj = g.tape.vjp(g.output, sv, &outputs)?;
            for (l, v) in adj.into_iter().enumerate() {
                grads[l].push(g.tape.value(v).clone());
            }
            g.tape.rewind(mark);
        }
        let layers = g
            .linear
            .iter()
            .zip(grads)
            .map(|(rec, output_grads)| {
                let a = g.tape.value(rec.input);
                let inputs = if rec.bias { augment(a) } else { a.clone() };
                CapturedLayer {
                    inputs,
                    output_grads,
                    bias: rec.bias,
                }
            })
            .collect();
        Ok(LayerCapture {
            layers,
            batch: idx.to_vec(),
        })
    }

    /// The label of datum `i`.
    pub fn label(&self, i: usize) -> Label {
        self.data.targets().label(i)
    }
}

fn augment(a: &Tensor) -> Tensor {
    let (n, d) = (a.rows(), a.cols());
    let mut data = Vec::with_capacity(n * (d + 1));
    for i in 0..n {
        data.extend_from_slice(a.row(i));
        data.push(1.0);
    }
    Tensor::from_parts(vec![n, d + 1], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;

    fn regression(n: usize, seed: u64) -> (Model, Dataset) {
        let m = Model::mlp(&[3, 4, 2], Layer::Tanh, true).unwrap();
        let p = Model::mlp(&[3, 2], Layer::Tanh, true)
            .unwrap()
            .init_params(seed, 1.0);
        let x = Tensor::new(
            vec![n, 3],
            (0..3 * n)
                .map(|i| ((i * 7 % 11) as f64) / 5.0 - 1.0)
                .collect(),
        )
        .unwrap();
        let y = crate::ad::forward_eval(&Model::mlp(&[3, 2], Layer::Tanh, true).unwrap(), &p, &x)
            .unwrap();
        (m, Dataset::new(x, Targets::Regression(y)).unwrap())
    }

    #[test]
    fn perfect_fit_has_zero_risk() {
        let m = Model::new(vec![Layer::linear(2, 1, false)]).unwrap();
        let p = vec![Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap()];
        let x = Tensor::matrix(1, 2, vec![3.0, 1.0]).unwrap();
        let d = Dataset::new(
            x,
            Targets::Regression(Tensor::matrix(1, 1, vec![2.0]).unwrap()),
        )
        .unwrap();
        let r = EmpiricalRisk::new(m, LossKind::Mse, Reduction::Sum, d).unwrap();
        assert_eq!(r.value(&p).unwrap(), 0.0);
        assert!(r.gradient(&p).unwrap()[0].data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn uneven_partitions_agree() {
        let (m, d) = regression(4, 3);
        let p = m.init_params(1, 1.0);
        let base = EmpiricalRisk::new(m, LossKind::Mse, Reduction::Mean, d).unwrap();
        let a = base
            .clone()
            .with_batching(Batching::Partition(vec![vec![0], vec![1, 2, 3]]))
            .unwrap();
        let b = base.clone().with_batching(Batching::Size(2)).unwrap();
        let (va, vb) = (a.value(&p).unwrap(), b.value(&p).unwrap());
        assert!((va - vb).abs() <= 1e-14);
        assert!((va - base.value(&p).unwrap()).abs() <= 1e-14);
    }

    #[test]
    fn reductions_are_consistent() {
        let (m, d) = regression(5, 2);
        let p = m.init_params(4, 1.0);
        let sum = EmpiricalRisk::new(m.clone(), LossKind::Mse, Reduction::Sum, d.clone()).unwrap();
        let mean =
            EmpiricalRisk::new(m.clone(), LossKind::Mse, Reduction::Mean, d.clone()).unwrap();
        let elem = EmpiricalRisk::new(m, LossKind::Mse, Reduction::MeanPerElement, d).unwrap();
        let (s, mu, e) = (
            sum.value(&p).unwrap(),
            mean.value(&p).unwrap(),
            elem.value(&p).unwrap(),
        );
        assert!((s - 5.0 * mu).abs() <= 1e-14 * s.abs().max(1.0));
        assert!((e - mu / 2.0).abs() <= 1e-14);
    }

    #[test]
    fn captured_single_layer_input_is_augmented() {
        let m = Model::new(vec![Layer::linear(2, 1, true)]).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.5, -2.0]).unwrap();
        let d = Dataset::new(
            x,
            Targets::Regression(Tensor::matrix(1, 1, vec![0.0]).unwrap()),
        )
        .unwrap();
        let r = EmpiricalRisk::new(m.clone(), LossKind::Mse, Reduction::Sum, d).unwrap();
        let cap = r
            .capture_layer_io(&m.init_params(0, 1.0), &[0], GradientSource::Labels)
            .unwrap();
        assert_eq!(cap.layers[0].inputs.data(), &[0.5, -2.0, 1.0]);
    }

    #[test]
    fn mismatched_targets_are_rejected() {
        let m = Model::mlp(&[2, 3], Layer::Relu, true).unwrap();
        let x = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        let d = Dataset::new(x.clone(), Targets::Classes(vec![0, 3])).unwrap();
        assert!(
            EmpiricalRisk::new(m.clone(), LossKind::SoftmaxCrossEntropy, Reduction::Sum, d)
                .is_err()
        );
        let d = Dataset::new(x, Targets::Classes(vec![0, 2])).unwrap();
        assert!(EmpiricalRisk::new(m, LossKind::Mse, Reduction::Sum, d).is_err());
    }
}
