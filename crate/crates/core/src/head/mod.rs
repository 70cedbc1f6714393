//! Classifier heads and neural-collapse diagnostics.

pub mod fixed;
pub mod nc;
pub mod stack;

pub use fixed::{fno_init, gram_identity_error, hadamard_layer_init, hadamard_matrix, FixedOrthogonalMatrix};
pub use nc::{classmean_objective, margin_score, nc_metrics, NcReport};
pub use stack::{Head, HeadConfig, HeadLayer, HeadOut, HeadPreset, LayerKind, LayerSpec, DEFAULT_HEAD_WIDTHS};
