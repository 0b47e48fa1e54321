//! Staged optimization of the distance, appearance and semantic networks
//! and the camera corrections against multi-view observations.
//!
//! Each optimizer step takes one ray batch of one view. Rays are traced
//! without the tape; the losses are then recorded at the found ray
//! parameters, with surface points corrected by `x_diff` so that gradients
//! reach the distance network and the cameras.

mod batch;
mod config;
mod gradcheck;
mod loss;
mod model;
mod render;
mod train;

pub use batch::{mix_seed, sample_rays, RayBatch, RaySample, Scene};
pub use config::{
    LossWeights, ModelConfig, RayCounts, Stage, StageSchedule, TermSwitches, TermWeights,
    TrainConfig,
};
pub use gradcheck::{
    check_terms, gradcheck_model, gradcheck_scene, tiny_model_config, GradcheckSettings, TermCheck,
};
pub use loss::{
    batch_loss, loss_eikonal, loss_mask, loss_proxy, loss_rgb, loss_semantic, total_loss,
    trace_batch, LossOutput, LossPoints, TracePlan, TERM_NAMES,
};
pub use model::{
    ModelSpec, ReconModel, CAMERA_SEGMENT, RENDER_SEGMENT, SDF_SEGMENT, SEMANTIC_SEGMENT,
};
pub use render::{psnr, render_view, RenderedView};
pub use train::{
    train, EpochRecord, LossHistory, TrainOutput, Trainer, FINAL_CHECKPOINT, HISTORY_FILE,
};
