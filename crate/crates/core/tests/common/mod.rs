#![allow(dead_code)]

use curvop::curvature::KroneckerBlock;
use curvop::{
    Dataset, EmpiricalRisk, Layer, LossKind, Model, ParamLayout, Reduction, Targets, Tensor,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

pub fn gaussian_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_vec(rows, cols, gaussian(r, rows * cols))
}

/// Haar-distributed orthogonal matrix.
pub fn orthogonal(r: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(r, n, n).qr();
    let (q, rr) = (qr.q(), qr.r());
    let signs = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| rr[(i, i)].signum()));
    q * signs
}

/// Random inputs and matching targets for `model`.
pub fn dataset(model: &Model, loss: LossKind, n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let x = Tensor::matrix(
        n,
        model.input_dim(),
        gaussian(&mut r, n * model.input_dim()),
    )
    .unwrap();
    let c = model.output_dim();
    let targets = match loss {
        LossKind::Mse => {
            Targets::Regression(Tensor::matrix(n, c, gaussian(&mut r, n * c)).unwrap())
        }
        LossKind::SoftmaxCrossEntropy => {
            Targets::Classes((0..n).map(|_| r.random_range(0..c)).collect())
        }
    };
    Dataset::new(x, targets).unwrap()
}

pub fn risk(
    layers: Vec<Layer>,
    loss: LossKind,
    reduction: Reduction,
    n: usize,
    seed: u64,
) -> (EmpiricalRisk, Vec<Tensor>) {
    let model = Model::new(layers).unwrap();
    let data = dataset(&model, loss, n, seed);
    let params = model.init_params(seed.wrapping_add(1000), 1.0);
    (
        EmpiricalRisk::new(model, loss, reduction, data).unwrap(),
        params,
    )
}

pub fn mlp(
    dims: &[usize],
    act: Layer,
    loss: LossKind,
    reduction: Reduction,
    n: usize,
    seed: u64,
) -> (EmpiricalRisk, Vec<Tensor>) {
    let model = Model::mlp(dims, act, true).unwrap();
    risk(model.layers().to_vec(), loss, reduction, n, seed)
}

pub fn flat(risk: &EmpiricalRisk, params: &[Tensor]) -> Vec<f64> {
    risk.layout().flatten(params).unwrap()
}

/// Central differences of the risk value.
pub fn fd_gradient(risk: &EmpiricalRisk, theta: &[f64], h: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            t[i] = theta[i] + h;
            let up = risk.value_flat(&t).unwrap();
            t[i] = theta[i] - h;
            let down = risk.value_flat(&t).unwrap();
            t[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central differences of the risk gradient, one column per parameter.
pub fn fd_hessian(risk: &EmpiricalRisk, theta: &[f64], h: f64) -> DMatrix<f64> {
    let d = theta.len();
    let mut t = theta.to_vec();
    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        t[j] = theta[j] + h;
        let up = risk.gradient_flat(&t).unwrap();
        t[j] = theta[j] - h;
        let down = risk.gradient_flat(&t).unwrap();
        t[j] = theta[j];
        for i in 0..d {
            m[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    m
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs(&(a - b)) / max_abs(b).max(f64::MIN_POSITIVE)
}

pub fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    d / b
        .iter()
        .fold(0.0f64, |m, y| m.max(y.abs()))
        .max(f64::MIN_POSITIVE)
}

/// Flat indices of a layer's `[W | b]` entries: `(row, augmented column) -> index`.
pub fn block_index(layout: &ParamLayout, block: &KroneckerBlock, r: usize, c: usize) -> usize {
    let w = layout.range(block.weight);
    let out = block.b.nrows();
    let inp = w.len() / out;
    if c < inp {
        w.start + r * inp + c
    } else {
        layout.range(block.bias.unwrap()).start + r
    }
}

/// Dense `A ⊗ B` of each block embedded in flat parameter coordinates.
pub fn kron_dense(
    layout: &ParamLayout,
    blocks: &[(KroneckerBlock, DMatrix<f64>, DMatrix<f64>)],
) -> DMatrix<f64> {
    let d = layout.numel();
    let mut m = DMatrix::zeros(d, d);
    for (blk, a, b) in blocks {
        for r1 in 0..b.nrows() {
            for c1 in 0..a.nrows() {
                for r2 in 0..b.nrows() {
                    for c2 in 0..a.nrows() {
                        m[(
                            block_index(layout, blk, r1, c1),
                            block_index(layout, blk, r2, c2),
                        )] = b[(r1, r2)] * a[(c1, c2)];
                    }
                }
            }
        }
    }
    m
}

/// All flat indices of a block.
pub fn block_indices(layout: &ParamLayout, blk: &KroneckerBlock) -> Vec<usize> {
    let mut idx = Vec::new();
    for r in 0..blk.b.nrows() {
        for c in 0..blk.a.nrows() {
            idx.push(block_index(layout, blk, r, c));
        }
    }
    idx
}

pub fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
