//! Architectural building blocks.

pub mod convnext;
pub mod mamba;
pub mod pvm;
pub mod scab;
pub mod ssm;

pub use convnext::ConvNextBlock;
pub use mamba::{Mamba, MambaCfg};
pub use pvm::Pvm;
pub use scab::Scab;

use xlm_tensor::{Float, Graph, Tensor, Var};

use crate::error::Result;

/// Layer norm over the channel axis of a (B,C,H,W) tensor.
pub(crate) fn layer_norm_nchw<T: Float>(g: &mut Graph<T>, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let t = g.permute(x, &[0, 2, 3, 1])?;
    let t = g.layer_norm(t, gamma, beta, T::c(LN_EPS))?;
    Ok(g.permute(t, &[0, 3, 1, 2])?)
}

pub const LN_EPS: f64 = 1e-6;

/// Per-sample stochastic depth: each sample's branch is kept with
/// probability `1 - p` and rescaled by `1 / (1 - p)`.
pub(crate) fn drop_path<T: Float>(g: &mut Graph<T>, x: Var, p: f64, rng: &mut xlm_tensor::RngStream) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let mut mshape = vec![1; shape.len()];
    mshape[0] = shape[0];
    let keep = 1.0 - p;
    let mask = Tensor::from_fn(&mshape, |_| if rng.bernoulli(keep) { T::c(1.0 / keep) } else { T::zero() });
    let m = g.constant(mask);
    Ok(g.mul(x, m)?)
}
