//! Criterion functions, reduction factors and their likelihoods.
//!
//! Conventions:
//! - mean-squared error is `ℓ(f, y) = ‖f − y‖²` (no ½). Its likelihood is
//!   `N(y; f, ½ I)`, so `−log q = ℓ + const` and `∇²_f ℓ = 2 I`.
//! - softmax cross-entropy is `ℓ(f, y) = logsumexp(f) − f_y`, likelihood
//!   `Categorical(softmax f)`, `∇²_f ℓ = diag(p) − p pᵀ`.
//!
//! Both loss Hessians are label-independent, which is what lets the
//! type-II Fisher coincide with the GGN.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ad::{Tape, Var};
use crate::data::Targets;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    #[serde(alias = "cross_entropy", alias = "softmax-cross-entropy")]
    SoftmaxCrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    Mean,
    #[serde(alias = "mean-per-element")]
    MeanPerElement,
}

impl Reduction {
    /// `R` for a data set of `n` points with `out_dim` outputs each.
    pub fn factor(self, n: usize, out_dim: usize) -> f64 {
        match self {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / n as f64,
            Reduction::MeanPerElement => 1.0 / (n * out_dim) as f64,
        }
    }
}

/// A label drawn from the model's predictive distribution.
#[derive(Clone, Debug, PartialEq)]
pub enum Label {
    Real(Vec<f64>),
    Class(usize),
}

impl LossKind {
    /// `ℓ(f, y)` for one datum.
    pub fn value(self, f: &[f64], y: &Label) -> f64 {
        match (self, y) {
            (LossKind::Mse, Label::Real(y)) => {
                f.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
            }
            (LossKind::SoftmaxCrossEntropy, Label::Class(c)) => {
                let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                max + f.iter().map(|x| (x - max).exp()).sum::<f64>().ln() - f[*c]
            }
            _ => panic!("label kind does not match loss"),
        }
    }

    /// `∇_f ℓ(f, y)`.
    pub fn grad_output(self, f: &[f64], y: &Label) -> Vec<f64> {
        match (self, y) {
            (LossKind::Mse, Label::Real(y)) => {
                f.iter().zip(y).map(|(a, b)| 2.0 * (a - b)).collect()
            }
            (LossKind::SoftmaxCrossEntropy, Label::Class(c)) => {
                let mut p = softmax(f);
                p[*c] -= 1.0;
                p
            }
            _ => panic!("label kind does not match loss"),
        }
    }

    /// `(∇²_f ℓ) u` without forming the matrix.
    pub fn hessian_output_apply(self, f: &[f64], u: &[f64]) -> Vec<f64> {
        match self {
            LossKind::Mse => u.iter().map(|x| 2.0 * x).collect(),
            LossKind::SoftmaxCrossEntropy => {
                let p = softmax(f);
                let pu: f64 = p.iter().zip(u).map(|(a, b)| a * b).sum();
                p.iter().zip(u).map(|(pi, ui)| pi * (ui - pu)).collect()
            }
        }
    }

    /// Columns `s_c` with `Σ_c s_c s_cᵀ = ∇²_f ℓ`.
    pub fn hessian_output_sqrt(self, f: &[f64]) -> Vec<Vec<f64>> {
        let c = f.len();
        match self {
            LossKind::Mse => (0..c)
                .map(|i| {
                    let mut s = vec![0.0; c];
                    s[i] = std::f64::consts::SQRT_2;
                    s
                })
                .collect(),
            LossKind::SoftmaxCrossEntropy => {
                // diag(p) − p pᵀ = L Lᵀ with L e_k = √p_k (e_k − p)
                let p = softmax(f);
                (0..c)
                    .map(|k| {
                        let r = p[k].sqrt();
                        let mut s: Vec<f64> = p.iter().map(|pi| -r * pi).collect();
                        s[k] += r;
                        s
                    })
                    .collect()
            }
        }
    }

    /// Draws `count` labels from `q(y | f)`.
    pub fn sample<R: Rng + ?Sized>(self, f: &[f64], count: usize, rng: &mut R) -> Vec<Label> {
        match self {
            LossKind::Mse => (0..count)
                .map(|_| {
                    Label::Real(
                        f.iter()
                            .map(|m| {
                                let z: f64 = StandardNormal.sample(rng);
                                m + z * std::f64::consts::FRAC_1_SQRT_2
                            })
                            .collect(),
                    )
                })
                .collect(),
            LossKind::SoftmaxCrossEntropy => {
                let p = softmax(f);
                (0..count)
                    .map(|_| {
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        let mut class = p.len() - 1;
                        for (k, pk) in p.iter().enumerate() {
                            acc += pk;
                            if u < acc {
                                class = k;
                                break;
                            }
                        }
                        Label::Class(class)
                    })
                    .collect()
            }
        }
    }

    /// Records `Σ_n ℓ(f_n, y_n)` for a batch prediction `f: [n, C]`.
    pub fn record_sum(self, tape: &mut Tape, f: Var, targets: &Targets) -> Result<Var> {
        let (n, c) = (tape.value(f).rows(), tape.value(f).cols());
        if targets.len() != n {
            return Err(Error::dim("targets", n, targets.len()));
        }
        match (self, targets) {
            (LossKind::Mse, Targets::Regression(y)) => {
                if y.cols() != c {
                    return Err(Error::dim("regression target width", c, y.cols()));
                }
                let yv = tape.constant(y.clone());
                let d = tape.sub(f, yv);
                Ok(tape.dot(d, d))
            }
            (LossKind::SoftmaxCrossEntropy, Targets::Classes(cls)) => {
                let mut onehot = vec![0.0; n * c];
                for (i, &k) in cls.iter().enumerate() {
                    if k >= c {
                        return Err(Error::dim("class index", format!("< {c}"), k));
                    }
                    onehot[i * c + k] = 1.0;
                }
                let oh = tape.constant(Tensor::from_parts(vec![n, c], onehot));
                let lse = tape.logsumexp(f);
                let a = tape.sum_all(lse);
                let b = tape.dot(f, oh);
                Ok(tape.sub(a, b))
            }
            _ => Err(Error::unsupported(format!(
                "{self:?} loss with these targets"
            ))),
        }
    }
}

pub fn softmax(f: &[f64]) -> Vec<f64> {
    let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = f.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// `∇²_f ℓ(f, ·)` as a dense matrix.
pub fn loss_output_hessian(loss: LossKind, f: &[f64]) -> DMatrix<f64> {
    let c = f.len();
    match loss {
        LossKind::Mse => DMatrix::identity(c, c) * 2.0,
        LossKind::SoftmaxCrossEntropy => {
            let p = softmax(f);
            DMatrix::from_fn(c, c, |i, j| {
                if i == j {
                    p[i] - p[i] * p[j]
                } else {
                    -p[i] * p[j]
                }
            })
        }
    }
}

/// `count` i.i.d. labels from `q(y | f)`, reproducible under `seed`.
pub fn sample_labels(loss: LossKind, f: &[f64], count: usize, seed: u64) -> Result<Vec<Label>> {
    if count == 0 {
        return Err(Error::contract("sample count must be >= 1"));
    }
    let mut r = rng::stream(seed, 0, 0);
    Ok(loss.sample(f, count, &mut r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_hessian_uniform_two_classes() {
        let h = loss_output_hessian(LossKind::SoftmaxCrossEntropy, &[0.3, 0.3]);
        assert_eq!(
            h,
            DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25])
        );
    }

    #[test]
    fn mse_hessian_is_scaled_identity() {
        assert_eq!(
            loss_output_hessian(LossKind::Mse, &[1., 2., 3.]),
            DMatrix::identity(3, 3) * 2.0
        );
    }

    #[test]
    fn hessian_sqrt_reconstructs_hessian() {
        let f = [0.4, -1.2, 2.0, 0.1];
        for loss in [LossKind::Mse, LossKind::SoftmaxCrossEntropy] {
            let s = loss.hessian_output_sqrt(&f);
            let mut h = DMatrix::zeros(4, 4);
            for col in &s {
                let v = nalgebra::DVector::from_column_slice(col);
                h += &v * v.transpose();
            }
            let diff = (h - loss_output_hessian(loss, &f)).abs().max();
            assert!(diff < 1e-15, "{loss:?}: {diff}");
        }
    }

    #[test]
    fn cross_entropy_uniform_logits_cost_log_c() {
        let v = LossKind::SoftmaxCrossEntropy.value(&[0.0; 5], &Label::Class(3));
        assert!((v - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_categorical_always_picks_dominant_class() {
        let s = sample_labels(LossKind::SoftmaxCrossEntropy, &[50.0, 0.0], 1000, 3).unwrap();
        assert!(s.iter().all(|l| *l == Label::Class(0)));
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let a = sample_labels(LossKind::Mse, &[0.1, 0.2], 20, 11).unwrap();
        let b = sample_labels(LossKind::Mse, &[0.1, 0.2], 20, 11).unwrap();
        assert_eq!(a, b);
        assert!(sample_labels(LossKind::Mse, &[0.1], 0, 1).is_err());
    }

    #[test]
    fn categorical_frequencies_match_softmax() {
        // 3σ binomial band per class at S = 10000.
        let f = [0.5, -0.3, 1.1];
        let p = softmax(&f);
        let s = 10_000;
        let draws = sample_labels(LossKind::SoftmaxCrossEntropy, &f, s, 99).unwrap();
        for (k, pk) in p.iter().enumerate() {
            let count = draws.iter().filter(|l| **l == Label::Class(k)).count() as f64;
            let sigma = (s as f64 * pk * (1.0 - pk)).sqrt();
            assert!((count - s as f64 * pk).abs() <= 3.0 * sigma, "class {k}");
        }
    }

    #[test]
    fn gaussian_samples_have_half_variance() {
        let s = sample_labels(LossKind::Mse, &[1.0], 20_000, 5).unwrap();
        let xs: Vec<f64> = s
            .iter()
            .map(|l| match l {
                Label::Real(v) => v[0],
                _ => unreachable!(),
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((mean - 1.0).abs() < 0.02);
        assert!((var - 0.5).abs() < 0.02);
    }
}
