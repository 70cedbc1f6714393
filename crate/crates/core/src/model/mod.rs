//! Network assembly, parameter audit and checkpoints.

pub mod audit;
pub mod checkpoint;
pub mod config;
pub mod network;

pub use audit::{count_parameters, AuditRow, ParamAudit, PARAM_BAND, PARAM_TARGET};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, model_from_checkpoint, read_checkpoint, save_checkpoint,
    CheckpointData, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, StageKind};
pub use network::{Forward, Mode, Model, StageBlock};
