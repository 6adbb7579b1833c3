//! Abundance super-resolution network: primitives, model, training and
//! inference.

mod infer;
mod net;
pub mod ops;
mod train;

pub use infer::{forward, infer, tensor_to_feature, TileOptions};
pub use net::{
    backward, forward_batch, forward_logits, forward_train, param_count, param_slots, ConvSpec, ForwardCache,
    NetArch, NetworkParams, ParamSlot, INIT_LAW,
};
pub use train::{
    adam_step, checkpoint_dir, latest_checkpoint, load_checkpoint, read_log, save_checkpoint, train, AdamState,
    Checkpoint, LogRow, TrainConfig, TrainOutcome, INDEX_FILE, LOG_FILE,
};
