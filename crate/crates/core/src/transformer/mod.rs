//! The `(e, h, f)` transformer family: weights, submodel extraction, fp32 and
//! int8 forward passes, and the checkpoint container.

mod arch;
pub mod checkpoint;
mod forward;
mod quantized;
mod weights;

pub use arch::{Architecture, ModelDims, HEAD_COUNT, MAX_SEQ_LEN, VOCAB_SIZE};
pub use checkpoint::{Container, ContainerKind, Header};
pub(crate) use forward::{attention, embed, first_tokens};
pub use forward::{forward, validate_batch};
pub use quantized::{
    forward_quantized, quantize_model, QuantizedBlock, QuantizedLinear, QuantizedModel,
};
pub use weights::{EncoderBlock, LayerNormParams, Linear, ModelWeights, INIT_STD};

/// Front-sliced copy of `supermodel` with architecture `arch`.
pub fn extract_submodel(
    supermodel: &ModelWeights<f32>,
    arch: Architecture,
) -> crate::Result<ModelWeights<f32>> {
    supermodel.extract_submodel(arch)
}

/// Fresh fp32 model for `arch`, deterministic in `seed`.
pub fn instantiate(
    arch: Architecture,
    dims: ModelDims,
    seed: u64,
) -> crate::Result<ModelWeights<f32>> {
    ModelWeights::instantiate(arch, dims, seed)
}
