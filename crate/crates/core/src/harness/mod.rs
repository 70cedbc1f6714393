pub mod gradcam;
pub mod gradcheck;
pub mod kv;
pub mod manifest;
pub mod sweep;
pub mod synth;
pub mod tile;

pub use gradcam::{grad_cam, HeatMap, DEFAULT_CAM_LAYER};
pub use gradcheck::{run_gradcheck, GradcheckReport, GradcheckRow, GRADCHECK_TOLERANCE};
pub use kv::KvMap;
pub use manifest::{largest_remainder, split_dataset, DatasetManifest, Entry, Split};
pub use sweep::{sweep, SweepAxis, SweepData, SweepResult, SweepRow, SWEEP_HEADER};
pub use synth::{dominant_period, generate_synthetic_dataset, SyntheticSpec, MANIFEST_NAME, SYNTH_KEYS};
pub use tile::TileFile;
