//! Dense fp32 tensors, int8 quantization and the int8 linear kernel.

mod ops;
mod quant;
mod tensor;

pub use ops::{
    exp_f32_slice, gelu, gelu_grad_scalar, gelu_scalar, layer_norm, layer_norm_cached, linear,
    log_softmax_rows, matmul, matmul_f32, matmul_nt, matmul_tn, normal_cdf, softmax_in_place,
    softmax_rows, LayerNormCache, LAYER_NORM_EPS,
};
pub use quant::{
    int8_accelerated, quantize_activations_dynamic, quantize_weights_symmetric, quantized_linear,
    PackedInt8Weights, QuantizedTensor, MAX_INNER_DIM,
};
pub use tensor::{Matrix, Real, Tensor2D};
