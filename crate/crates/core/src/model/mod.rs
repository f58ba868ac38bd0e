//! Toy 3-D encoder-decoder with a 26-channel connectivity head: layers with
//! hand-written gradients, the averaged Dice loss, Adam, checkpoints,
//! training and tiled inference.

pub mod adam;
pub mod checkpoint;
pub mod infer;
pub mod loss;
pub mod net;
pub mod ops;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest};
pub use infer::predict_volume;
pub use loss::{dice_connectivity_loss, dice_loss, dice_loss_with_grad, LossValue, DEFAULT_LOSS_EPS};
pub use net::{backward, forward, BnUpdates, Mode, ModelConfig, ModelParams, ParamTensor, Tape};
pub use tensor::{Scalar, Tensor};
pub use train::{make_batch, Batch, EpochStats, TrainConfig, Trainer};
