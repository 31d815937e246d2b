//! Small transformer encoder with per-head choice between standard
//! averaging attention and its complement (value minus averaged value),
//! trained by a built-in reverse-mode tape.

pub mod attention;
pub mod block;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod head;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;
pub mod train;

pub use attention::{attention_weights, head_forward, mixed_multi_head, AttentionParams, HeadParams, QK_NORM_EPS};
pub use block::{
    drop_path_mask, encoder_block, encoder_block_with_capture, gelu, gelu_grad, BlockParams,
    LayerNormParams, MlpParams, LAYER_NORM_EPS,
};
pub use checkpoint::{config_digest, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{InputSpec, ModelConfig};
pub use error::{ModelError, ModelResult};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use head::{AssignmentSpec, HeadAssignment, HeadKind};
pub use model::{
    accuracy, build_loss_tape, cross_entropy, model_eval, model_forward, patchify,
    ActivationCapture, CaptureOptions, DropMasks, ImageBatch, InputBatch, ModelOutput, TapedLoss,
};
pub use optim::{adamw_step, clip_global_norm, lr_at, AdamHyper, LrSchedule, OptimizerState};
pub use params::{Param, ParamSet, INIT_STD};
pub use tape::{Gradients, Tape, ValueId};
pub use train::{evaluate, train, EpochMetrics, TrainConfig, TrainResult};
