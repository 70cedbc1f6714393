//! Dense row-major tensors and a define-by-run reverse-mode tape.

mod error;
mod float;
pub mod gradcheck;
mod graph;
pub mod ops;
mod rng;
mod tensor;

pub use error::{Result, TensorError};
pub use float::{Float, Precision};
pub use gradcheck::{finite_diff_gradcheck, finite_diff_gradcheck_many, relative_error};
pub use graph::{Gradients, Graph, Var};
pub use ops::conv::Conv2dCfg;
pub use ops::elementwise::{Activation, UnaryKind};
pub use ops::pool::PoolKind;
pub use rng::{RngStream, RNG_ALGORITHM};
pub use tensor::{inverse_permutation, Tensor};
