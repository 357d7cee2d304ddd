//! Desk-scale substrate: a frozen teacher network whose layers get
//! quantized, low-rank adapters with an optional configuration
//! hypernetwork, and the training loops for the adaptive model and the
//! baselines.

mod data;
mod net;
mod train;

pub use crate::linalg::truncated_svd;
pub use data::{
    gen_teacher_student, gen_teacher_student_with, read_data, write_data, Dataset, BATCH_SIZE,
    MIN_SAMPLES, TRAIN_FRACTION,
};
pub use net::{
    forward_loss, loss_and_grads, Activation, AdapterStack, HyperNet, NetSpec, QuantCache,
    TargetNet, DEFAULT_RANK, HYPER_HIDDEN, HYPER_OUT_SCALE,
};
pub use train::{
    grad_check, init_stack, stream_rng, train_lora_per_config, train_shared, train_theta, Adam,
    Checkpoint, GradCheck, Stream, TrainOptions, Trained, Trainer, ADAM_BETA1, ADAM_BETA2,
    ADAM_EPS, CHECKPOINT_VERSION, DEFAULT_LR, GRAD_CHECK_FLOOR, GRAD_CHECK_STEP,
};
