//! Lightweight hybrid ConvNeXt / state-space image classifier with a fixed
//! orthogonal head, its training recipe and diagnostic tooling.

pub mod blocks;
pub mod codec;
pub mod error;
pub mod harness;
pub mod head;
pub mod model;
pub mod params;
pub mod train;

pub use error::{CoreError, Result};
pub use params::{Bound, Builder, Param, ParamId, ParamStore, Session};
