use crate::error::Result;
use crate::numerics::{quantize_weights_symmetric, PackedInt8Weights, QuantizedTensor, Tensor2D};

use super::arch::{Architecture, ModelDims};
use super::forward::{classify, embed, encoder_block, validate_batch, BlockRef, LinearLayer};
use super::weights::{LayerNormParams, Linear, ModelWeights};

/// Linear layer with int8 weights and an fp32 bias.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLinear {
    pub weight: QuantizedTensor,
    packed: PackedInt8Weights,
    pub bias: Tensor2D,
}

impl QuantizedLinear {
    pub fn from_linear(lin: &Linear<f32>) -> Self {
        let weight = quantize_weights_symmetric(&lin.weight);
        let packed = PackedInt8Weights::pack(&weight).expect("symmetric weights always pack");
        Self {
            weight,
            packed,
            bias: lin.bias.clone(),
        }
    }
}

impl LinearLayer<f32> for QuantizedLinear {
    fn apply(&self, x: &Tensor2D) -> Result<Tensor2D> {
        self.packed.forward(x, &self.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBlock {
    pub query: QuantizedLinear,
    pub key: QuantizedLinear,
    pub value: QuantizedLinear,
    pub attn_out: QuantizedLinear,
    pub attn_norm: LayerNormParams<f32>,
    pub ffn_in: QuantizedLinear,
    pub ffn_out: QuantizedLinear,
    pub ffn_norm: LayerNormParams<f32>,
}

/// A model whose attention, FFN, pooler and head weights are int8. Embeddings,
/// layer norms and biases stay fp32; activations are quantized per call.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    arch: Architecture,
    dims: ModelDims,
    pub token_embedding: Tensor2D,
    pub position_embedding: Tensor2D,
    pub blocks: Vec<QuantizedBlock>,
    pub pooler: QuantizedLinear,
    pub head: QuantizedLinear,
}

/// Quantizes every linear-layer weight of `model` with the symmetric scheme.
pub fn quantize_model(model: &ModelWeights<f32>) -> QuantizedModel {
    let q = QuantizedLinear::from_linear;
    QuantizedModel {
        arch: model.arch(),
        dims: model.dims(),
        token_embedding: model.token_embedding.clone(),
        position_embedding: model.position_embedding.clone(),
        blocks: model
            .blocks
            .iter()
            .map(|b| QuantizedBlock {
                query: q(&b.query),
                key: q(&b.key),
                value: q(&b.value),
                attn_out: q(&b.attn_out),
                attn_norm: b.attn_norm.clone(),
                ffn_in: q(&b.ffn_in),
                ffn_out: q(&b.ffn_out),
                ffn_norm: b.ffn_norm.clone(),
            })
            .collect(),
        pooler: q(&model.pooler),
        head: q(&model.head),
    }
}

impl QuantizedModel {
    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn quantized_tensors(&self) -> Vec<&QuantizedTensor> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([
                &b.query.weight,
                &b.key.weight,
                &b.value.weight,
                &b.attn_out.weight,
                &b.ffn_in.weight,
                &b.ffn_out.weight,
            ]);
        }
        out.extend([&self.pooler.weight, &self.head.weight]);
        out
    }

    pub fn forward_batch(&self, batch: &[Vec<u32>]) -> Result<Tensor2D> {
        let len = validate_batch(&self.dims, batch)?;
        let mut x = embed(&self.token_embedding, &self.position_embedding, batch, len);
        for b in &self.blocks {
            let view = BlockRef {
                query: &b.query,
                key: &b.key,
                value: &b.value,
                attn_out: &b.attn_out,
                attn_norm: &b.attn_norm,
                ffn_in: &b.ffn_in,
                ffn_out: &b.ffn_out,
                ffn_norm: &b.ffn_norm,
            };
            x = encoder_block(&view, &x, batch.len(), len)?;
        }
        classify(&x, &self.pooler, &self.head, batch.len(), len)
    }

    pub fn forward(&self, tokens: &[u32]) -> Result<Vec<f32>> {
        Ok(self.forward_batch(&[tokens.to_vec()])?.into_data())
    }
}

/// int8 forward pass for one sequence.
pub fn forward_quantized(model: &QuantizedModel, tokens: &[u32]) -> Result<Vec<f32>> {
    model.forward(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims::default()
    }

    #[test]
    fn quantize_is_deterministic_and_preserves_topology() {
        let m = ModelWeights::<f32>::instantiate(Architecture::new(2, 24, 32), dims(), 3).unwrap();
        let a = quantize_model(&m);
        let b = quantize_model(&m);
        assert_eq!(a, b);
        assert_eq!(a.blocks.len(), 2);
        assert_eq!(a.quantized_tensors().len(), 2 * 6 + 2);
        for q in a.quantized_tensors() {
            assert_eq!(q.zero_point(), 0);
            assert!(q.values().iter().all(|&v| (-127..=127).contains(&v)));
        }
        assert_eq!(a.blocks[0].ffn_in.weight.rows(), 24);
        assert_eq!(a.blocks[0].ffn_in.weight.cols(), 32);
    }

    #[test]
    fn zero_weight_matrix_quantizes_to_unit_scale() {
        let mut m =
            ModelWeights::<f32>::instantiate(Architecture::new(1, 24, 32), dims(), 3).unwrap();
        m.head = Linear::zeros(24, 2);
        let q = quantize_model(&m);
        assert_eq!(q.head.weight.scale(), 1.0);
        assert!(q.head.weight.values().iter().all(|&v| v == 0));
        assert_eq!(q.forward(&[1, 2, 3]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn quantized_logits_track_fp32() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let m = ModelWeights::<f32>::instantiate(Architecture::new(2, 48, 64), dims(), 5).unwrap();
        // larger head so logits are not vanishingly small
        let mut m = m;
        m.head.weight = m.head.weight.map(|v| v * 50.0);
        m.pooler.weight = m.pooler.weight.map(|v| v * 20.0);
        let q = quantize_model(&m);
        for _ in 0..10 {
            let tokens: Vec<u32> = (0..16).map(|_| rng.random_range(0..64)).collect();
            let a = m.forward(&tokens).unwrap();
            let b = q.forward(&tokens).unwrap();
            let scale = a.iter().map(|v| v.abs()).fold(0.0f32, f32::max).max(1e-3);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 0.1 * scale, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn quantized_forward_is_bitwise_repeatable() {
        let m = ModelWeights::<f32>::instantiate(Architecture::new(1, 36, 40), dims(), 8).unwrap();
        let q = quantize_model(&m);
        let tokens: Vec<u32> = (0..20).map(|i| (i * 3 % 64) as u32).collect();
        let a: Vec<u32> = q
            .forward(&tokens)
            .unwrap()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let b: Vec<u32> = q
            .forward(&tokens)
            .unwrap()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(a, b);
    }
}
