//! Desk-scale adversarial training on synthetic videos, baseline cropping
//! strategies, and the per-step disparity metrics.

pub mod baseline;
pub mod config;
pub mod cube;
pub mod metrics;
pub mod synthetic;
pub mod train;

pub use baseline::{baseline_params, ManualSchedule, Strategy};
pub use config::TrainConfig;
pub use cube::{center_manhattan, crop_cube_from_params, st_iou, CropCube};
pub use metrics::{fmt_f64, MetricsLog, StepRecord, CSV_HEADER};
pub use synthetic::{make_synthetic_batch, render_blob, BlobSpec};
pub use train::{
    contrastive_pass, run_training, run_training_with_probe, CropSource, PassOutput, StepGrads, Trainer, ViewInput,
};
