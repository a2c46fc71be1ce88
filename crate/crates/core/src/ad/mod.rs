//! Automatic differentiation for the supported layer set.
//!
//! [`Tape`] records operations on dense tensors. The functions here apply it
//! to a [`Model`]: plain evaluation, Jacobian-transpose products (reverse
//! mode) and Jacobian products (forward-mode tangent propagation).

mod tape;

pub use tape::{Mark, Tape, Var};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{ParamList, Tensor};

/// Accepts a single datum `[in]` or a batch `[n, in]`; returns a matrix and
/// whether the input was a single datum.
fn as_batch(model: &Model, x: &Tensor) -> Result<(Tensor, bool)> {
    match x.shape() {
        [d] if *d == model.input_dim() => Ok((x.clone().reshape(vec![1, *d])?, true)),
        [_, d] if *d == model.input_dim() => Ok((x.clone(), false)),
        s => Err(Error::dim(
            "model input",
            format!("[{0}] or [n, {0}]", model.input_dim()),
            format!("{s:?}"),
        )),
    }
}

fn record(model: &Model, params: &[Tensor], x: Tensor) -> Result<(Tape, Vec<Var>, Var)> {
    model.check_params(params)?;
    let mut tape = Tape::new();
    let p: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let xv = tape.constant(x);
    let out = model.record_forward(&mut tape, &p, xv)?.output;
    Ok((tape, p, out))
}

fn unbatch(t: Tensor, single: bool) -> Result<Tensor> {
    if single {
        let c = t.cols();
        t.reshape(vec![c])
    } else {
        Ok(t)
    }
}

/// `f_θ(x)`.
pub fn forward_eval(model: &Model, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
    let (xb, single) = as_batch(model, x)?;
    let (tape, _, out) = record(model, params, xb)?;
    unbatch(tape.value(out).clone(), single)
}

/// `J_θ f(x)ᵀ u`, returned in parameter-list format.
pub fn vjp(model: &Model, params: &[Tensor], x: &Tensor, cotangent: &Tensor) -> Result<ParamList> {
    let (xb, _) = as_batch(model, x)?;
    let (mut tape, p, out) = record(model, params, xb)?;
    let seed = cotangent
        .clone()
        .reshape(tape.shape(out).to_vec())
        .map_err(|_| {
            Error::dim(
                "cotangent",
                format!("{:?}", tape.shape(out)),
                format!("{:?}", cotangent.shape()),
            )
        })?;
    let seed = tape.constant(seed);
    let grads = tape.vjp(out, seed, &p)?;
    Ok(grads.into_iter().map(|g| tape.value(g).clone()).collect())
}

/// `J_θ f(x) v` by forward-mode tangent propagation.
pub fn jvp(model: &Model, params: &[Tensor], x: &Tensor, tangent: &[Tensor]) -> Result<Tensor> {
    model.check_params(tangent)?;
    let (xb, single) = as_batch(model, x)?;
    let (tape, p, out) = record(model, params, xb)?;
    let seeds: Vec<(Var, &Tensor)> = p.iter().copied().zip(tangent.iter()).collect();
    let tans = tape.push_tangents(&seeds)?;
    let t = tans[out.index()]
        .clone()
        .unwrap_or_else(|| Tensor::zeros(tape.shape(out)));
    unbatch(t, single)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;

    #[test]
    fn identity_linear_layer() {
        let m = Model::new(vec![Layer::linear(2, 2, true)]).unwrap();
        let p = vec![
            Tensor::matrix(2, 2, vec![1., 0., 0., 1.]).unwrap(),
            Tensor::vector(vec![0., 0.]),
        ];
        let y = forward_eval(&m, &p, &Tensor::vector(vec![1., 2.])).unwrap();
        assert_eq!(y.data(), &[1., 2.]);
    }

    #[test]
    fn affine_layer() {
        let m = Model::new(vec![Layer::linear(2, 2, true)]).unwrap();
        let p = vec![
            Tensor::matrix(2, 2, vec![2., 0., 0., 3.]).unwrap(),
            Tensor::vector(vec![1., 1.]),
        ];
        let y = forward_eval(&m, &p, &Tensor::vector(vec![1., 1.])).unwrap();
        assert_eq!(y.data(), &[3., 4.]);
    }

    #[test]
    fn linear_jvp_and_vjp_closed_forms() {
        let m = Model::new(vec![Layer::linear(3, 2, false)]).unwrap();
        let p = vec![Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap()];
        let x = Tensor::vector(vec![1., -1., 2.]);
        let dw = Tensor::matrix(2, 3, vec![0.5, 0., 1., -1., 2., 0.]).unwrap();
        let jv = jvp(&m, &p, &x, std::slice::from_ref(&dw)).unwrap();
        assert_eq!(jv.data(), &[2.5, -3.0]);
        let u = Tensor::vector(vec![2., -1.]);
        let g = vjp(&m, &p, &x, &u).unwrap();
        assert_eq!(g[0].data(), &[2., -2., 4., -1., 1., -2.]);
    }

    #[test]
    fn zero_tangent_and_cotangent_give_zeros() {
        let m = Model::mlp(&[2, 3, 2], Layer::Tanh, true).unwrap();
        let p = m.init_params(1, 1.0);
        let x = Tensor::matrix(2, 2, vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let zeros: ParamList = p.iter().map(|t| Tensor::zeros(t.shape())).collect();
        assert!(jvp(&m, &p, &x, &zeros)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let g = vjp(&m, &p, &x, &Tensor::zeros(&[2, 2])).unwrap();
        assert!(g.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn wrong_input_width_is_dimension_error() {
        let m = Model::mlp(&[2, 1], Layer::Relu, true).unwrap();
        let p = m.init_params(0, 1.0);
        assert!(matches!(
            forward_eval(&m, &p, &Tensor::vector(vec![1., 2., 3.])),
            Err(Error::Dimension { .. })
        ));
    }
}
