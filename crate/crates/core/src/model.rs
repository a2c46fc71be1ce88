//! Feed-forward architectures and their parameter layout.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ad::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{ParamList, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Linear {
        #[serde(rename = "in")]
        in_dim: usize,
        #[serde(rename = "out")]
        out_dim: usize,
        #[serde(default = "default_bias")]
        bias: bool,
    },
    Relu,
    Sigmoid,
    Tanh,
    /// Adds fresh Gaussian noise on every evaluation. Exists to exercise the
    /// determinism check; never use it in a curvature computation.
    Noise {
        std: f64,
    },
    /// Subtracts the batch mean, so outputs depend on which data share a batch.
    BatchCenter,
}

fn default_bias() -> bool {
    true
}

impl Layer {
    pub fn linear(in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Layer::Linear {
            in_dim,
            out_dim,
            bias,
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, Layer::Linear { .. })
    }

    /// Whether the output for one datum depends only on that datum.
    pub fn is_per_datum(&self) -> bool {
        !matches!(self, Layer::BatchCenter)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
    layout: ParamLayout,
}

impl Model {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .iter()
            .find_map(|l| match l {
                Layer::Linear { in_dim, .. } => Some(*in_dim),
                _ => None,
            })
            .ok_or_else(|| Error::contract("model needs at least one linear layer"))?;
        let mut dim = first;
        let mut shapes = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            match *layer {
                Layer::Linear {
                    in_dim,
                    out_dim,
                    bias,
                } => {
                    if in_dim != dim {
                        return Err(Error::dim(format!("layer {i} input"), dim, in_dim));
                    }
                    if in_dim == 0 || out_dim == 0 {
                        return Err(Error::dim(format!("layer {i}"), "positive dims", "0"));
                    }
                    shapes.push(vec![out_dim, in_dim]);
                    if bias {
                        shapes.push(vec![out_dim]);
                    }
                    dim = out_dim;
                }
                Layer::Noise { std } if !(std.is_finite() && std >= 0.0) => {
                    return Err(Error::contract(format!(
                        "noise layer {i} needs finite std >= 0"
                    )));
                }
                _ => {}
            }
        }
        Ok(Self {
            layers,
            input_dim: first,
            output_dim: dim,
            layout: ParamLayout::new(shapes),
        })
    }

    /// Dense layers `dims[0] -> dims[1] -> ...` with `activation` between them.
    pub fn mlp(dims: &[usize], activation: Layer, bias: bool) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::contract("mlp needs at least input and output dims"));
        }
        let mut layers = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            if i > 0 {
                layers.push(activation.clone());
            }
            layers.push(Layer::linear(w[0], w[1], bias));
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.numel()
    }

    pub fn is_per_datum(&self) -> bool {
        self.layers.iter().all(Layer::is_per_datum)
    }

    /// Parameters drawn i.i.d. from N(0, scale² / fan_in), biases from N(0, scale²/4).
    pub fn init_params(&self, seed: u64, scale: f64) -> ParamList {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.layout
            .shapes()
            .iter()
            .map(|shape| {
                let std = if shape.len() == 2 {
                    scale / (shape[1] as f64).sqrt()
                } else {
                    scale / 2.0
                };
                let numel = shape.iter().product();
                let data = (0..numel)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        std * z
                    })
                    .collect::<Vec<f64>>();
                Tensor::from_parts(shape.clone(), data)
            })
            .collect()
    }

    pub fn check_params(&self, params: &[Tensor]) -> Result<()> {
        self.layout.check(params)
    }

    /// Records `f_θ(x)` for a batch `x: [n, in]` on `tape`.
    pub fn record_forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<ForwardRecord> {
        if params.len() != self.layout.len() {
            return Err(Error::dim(
                "parameter count",
                self.layout.len(),
                params.len(),
            ));
        }
        let xs = tape.shape(x);
        if xs.len() != 2 || xs[1] != self.input_dim {
            return Err(Error::dim(
                "model input",
                format!("[n, {}]", self.input_dim),
                format!("{xs:?}"),
            ));
        }
        let rows = xs[0];
        let mut h = x;
        let mut next = 0;
        let mut linear = Vec::new();
        for layer in &self.layers {
            h = match *layer {
                Layer::Linear { bias, .. } => {
                    let input = h;
                    let w = params[next];
                    next += 1;
                    let mut z = tape.matmul(h, w, false, true);
                    if bias {
                        z = tape.add_bias(z, params[next]);
                        next += 1;
                    }
                    linear.push(LinearRecord {
                        input,
                        output: z,
                        bias,
                    });
                    z
                }
                Layer::Relu => tape.relu(h),
                Layer::Sigmoid => tape.sigmoid(h),
                Layer::Tanh => tape.tanh(h),
                Layer::Noise { std } => {
                    let noise = draw_noise(tape.shape(h), std);
                    let c = tape.constant(noise);
                    tape.add(h, c)
                }
                Layer::BatchCenter => {
                    let s = tape.sum_rows(h);
                    let mean = tape.scale(s, 1.0 / rows as f64);
                    let mb = tape.broadcast_rows(mean, rows);
                    tape.sub(h, mb)
                }
            };
        }
        Ok(ForwardRecord { output: h, linear })
    }
}

/// Tape positions of a linear layer's input and pre-activation output.
#[derive(Clone, Copy, Debug)]
pub struct LinearRecord {
    pub input: Var,
    pub output: Var,
    pub bias: bool,
}

#[derive(Clone, Debug)]
pub struct ForwardRecord {
    pub output: Var,
    pub linear: Vec<LinearRecord>,
}

static NOISE_DRAWS: AtomicU64 = AtomicU64::new(0);

fn draw_noise(shape: &[usize], std: f64) -> Tensor {
    let draw = NOISE_DRAWS.fetch_add(1, Ordering::Relaxed);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 ^ draw);
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Maps between the list format (one tensor per weight/bias) and the flat
/// vector `Cat(flatten W¹, b¹, …)` in layer order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    shapes: Vec<Vec<usize>>,
    offsets: Vec<usize>,
}

impl ParamLayout {
    pub fn new(shapes: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(shapes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for s in &shapes {
            acc += s.iter().product::<usize>();
            offsets.push(acc);
        }
        Self { shapes, offsets }
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn numel(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Flat index range of the `i`-th tensor.
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn check(&self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.shapes.len() {
            return Err(Error::dim(
                "parameter list length",
                self.shapes.len(),
                params.len(),
            ));
        }
        for (i, (p, s)) in params.iter().zip(&self.shapes).enumerate() {
            if p.shape() != s.as_slice() {
                return Err(Error::dim(
                    format!("parameter {i}"),
                    format!("{s:?}"),
                    format!("{:?}", p.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn flatten(&self, params: &[Tensor]) -> Result<Vec<f64>> {
        self.check(params)?;
        let mut out = Vec::with_capacity(self.numel());
        for p in params {
            out.extend_from_slice(p.data());
        }
        Ok(out)
    }

    pub fn unflatten(&self, v: &[f64]) -> Result<ParamList> {
        if v.len() != self.numel() {
            return Err(Error::dim("parameter vector", self.numel(), v.len()));
        }
        Ok(self
            .shapes
            .iter()
            .enumerate()
            .map(|(i, s)| Tensor::from_parts(s.clone(), v[self.range(i)].to_vec()))
            .collect())
    }
}
