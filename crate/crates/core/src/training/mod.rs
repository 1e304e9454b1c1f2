//! Losses, masked vertex modeling, Adam with a step schedule, aligned pose
//! metrics, checkpoints and the training loop.

mod checkpoint;
mod losses;
mod masking;
mod metrics;
mod optim;
mod trainer;

pub use checkpoint::{
    load_checkpoint, peek_checkpoint, read_checkpoint, read_checkpoint_header, save_checkpoint, write_checkpoint,
    TrainRngs, TrainState, DROPOUT_STREAM, MASK_STREAM, SHUFFLE_STREAM,
};
pub use losses::{compute_losses, LossBreakdown, LossTerms, LossWeights};
pub use masking::{mask_plan_with_ratio, sample_mask_plan, MaskPlan};
pub use metrics::{
    joint_metrics, mean_metrics, mean_point_error, metrics, procrustes_align, Alignment, Metrics, METRIC_SCALE,
    METRIC_UNIT,
};
pub use optim::{adam_update, clip_grad_norm, lr_schedule, Adam, AdamHyper};
pub use trainer::{
    evaluate, log_preamble, ordered_map, sample_gradients, train_loop, EpochRecord, TrainData, LOG_HEADER,
};
