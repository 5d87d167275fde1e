//! Reverse-mode gradients, Adam, distillation, weight-sharing supermodel
//! training and candidate fine-tuning.

mod adam;
mod backward;
pub mod data;
mod finetune;
mod gradcheck;
mod grads;
mod loss;
mod supermodel;

pub use adam::{AdamConfig, AdamState, LinearWarmup};
pub use backward::{backward, forward_logits};
pub use data::{teacher_logits, Example};
pub use finetune::{
    accuracy_f32, accuracy_int8, argmax, finetune, finetune_candidate, FinetuneConfig,
};
pub use gradcheck::{gradient_check, GradCheck};
pub use grads::Gradients;
pub use loss::{cross_entropy, kd_loss, soft_cross_entropy, Objective};
pub use supermodel::{
    train_distill, train_supermodel, DistillData, StepRecord, SupermodelState, SupermodelTrainer,
    TrainConfig,
};
