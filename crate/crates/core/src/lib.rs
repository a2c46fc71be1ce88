//! Matrix-free curvature operators for small feed-forward networks.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ad;
pub mod applications;
pub mod bench;
pub mod curvature;
pub mod data;
pub mod error;
pub mod io;
pub mod linop;
pub mod loss;
pub mod model;
pub mod risk;
pub mod rla;
pub mod rng;
pub mod solvers;
pub mod tensor;

pub use curvature::{CurvatureKind, CurvatureSpec};
pub use data::{Batching, Dataset, Targets};
pub use error::{Error, Result};
pub use linop::{LinearOperator, OperatorRef};
pub use loss::{LossKind, Reduction};
pub use model::{Layer, Model, ParamLayout};
pub use risk::{EmpiricalRisk, GradientSource};
pub use tensor::{ParamList, Tensor};
