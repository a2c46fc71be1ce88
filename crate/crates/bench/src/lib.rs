//! Fixtures shared by the criterion benches.

use curvop::{Dataset, EmpiricalRisk, Layer, LossKind, Model, Reduction, Targets, Tensor};

/// Classification MLP `dims[0] → … → dims[last]` with ReLU, `n` deterministic inputs.
pub fn mlp_problem(dims: &[usize], n: usize) -> (EmpiricalRisk, Vec<Tensor>) {
    let model = Model::mlp(dims, Layer::Relu, true).expect("valid dims");
    let d = dims[0];
    let c = *dims.last().expect("non-empty dims");
    let x: Vec<f64> = (0..n * d)
        .map(|i| ((i * 7919 % 1000) as f64 / 500.0 - 1.0) * 0.8)
        .collect();
    let y: Vec<usize> = (0..n).map(|i| i % c).collect();
    let data = Dataset::new(Tensor::matrix(n, d, x).expect("shape"), Targets::Classes(y))
        .expect("dataset");
    let params = model.init_params(0, 1.0);
    let risk = EmpiricalRisk::new(model, LossKind::SoftmaxCrossEntropy, Reduction::Mean, data)
        .expect("risk");
    (risk, params)
}

/// The ~50k-parameter fixture used for the relative-cost table.
pub fn standard_mlp() -> (EmpiricalRisk, Vec<Tensor>) {
    mlp_problem(&[100, 250, 100, 10], 32)
}
