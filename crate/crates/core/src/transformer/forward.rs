//! Inference forward pass shared by the fp32 and int8 models.
//!
//! embeddings -> e x [self-attention, residual, layer norm, GELU FFN,
//! residual, layer norm] -> tanh pooler on the first token -> task head.

use crate::error::{Error, Result};
use crate::numerics::{gelu, layer_norm, linear, matmul, softmax_in_place, Matrix, Real};

use super::arch::{ModelDims, HEAD_COUNT};
use super::weights::{LayerNormParams, Linear, ModelWeights};

/// Anything that maps `[n x in]` activations to `[n x out]`.
pub(crate) trait LinearLayer<T> {
    fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>>;
}

impl<T: Real> LinearLayer<T> for Linear<T> {
    fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        linear(x, &self.weight, &self.bias)
    }
}

/// Borrowed view of one encoder block, independent of how linears execute.
pub(crate) struct BlockRef<'a, T, L> {
    pub query: &'a L,
    pub key: &'a L,
    pub value: &'a L,
    pub attn_out: &'a L,
    pub attn_norm: &'a LayerNormParams<T>,
    pub ffn_in: &'a L,
    pub ffn_out: &'a L,
    pub ffn_norm: &'a LayerNormParams<T>,
}

/// Checks token ids and lengths; returns the common sequence length.
pub fn validate_batch(dims: &ModelDims, batch: &[Vec<u32>]) -> Result<usize> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Input("empty batch".into()))?;
    let len = first.len();
    if len == 0 {
        return Err(Error::Input("empty token sequence".into()));
    }
    if len > dims.max_len {
        return Err(Error::Input(format!(
            "sequence length {len} exceeds maximum {}",
            dims.max_len
        )));
    }
    for seq in batch {
        if seq.len() != len {
            return Err(Error::Input(format!(
                "ragged batch: lengths {len} and {}",
                seq.len()
            )));
        }
        if let Some(&bad) = seq.iter().find(|&&t| t as usize >= dims.vocab) {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocabulary of {}",
                dims.vocab
            )));
        }
    }
    Ok(len)
}

/// Token plus position embeddings, `[batch * len x h]`.
pub(crate) fn embed<T: Real>(
    token_embedding: &Matrix<T>,
    position_embedding: &Matrix<T>,
    batch: &[Vec<u32>],
    len: usize,
) -> Matrix<T> {
    let h = token_embedding.cols();
    let mut x = Matrix::zeros(batch.len() * len, h);
    for (b, seq) in batch.iter().enumerate() {
        for (t, &tok) in seq.iter().enumerate() {
            let row = x.row_mut(b * len + t);
            let te = token_embedding.row(tok as usize);
            let pe = position_embedding.row(t);
            for ((o, &a), &p) in row.iter_mut().zip(te).zip(pe) {
                *o = a + p;
            }
        }
    }
    x
}

/// Multi-head scaled dot-product attention over each sequence of the batch.
///
/// When `probs` is given, the attention matrix of every (sequence, head) pair
/// is pushed in sequence-major order.
pub(crate) fn attention<T: Real>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    batch: usize,
    len: usize,
    mut probs: Option<&mut Vec<Matrix<T>>>,
) -> Matrix<T> {
    let h = q.cols();
    let dh = h / HEAD_COUNT;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut ctx = Matrix::zeros(batch * len, h);
    let mut qh = Matrix::zeros(len, dh);
    let mut kt = Matrix::zeros(dh, len);
    let mut vt = Matrix::zeros(dh, len);
    for b in 0..batch {
        let base = b * len;
        for head in 0..HEAD_COUNT {
            let c0 = head * dh;
            for i in 0..len {
                qh.row_mut(i).copy_from_slice(&q.row(base + i)[c0..c0 + dh]);
                for d in 0..dh {
                    kt.set(d, i, k.get(base + i, c0 + d));
                    vt.set(d, i, v.get(base + i, c0 + d));
                }
            }
            let mut scores = matmul(&qh, &kt).expect("head shapes agree");
            for i in 0..len {
                let row = scores.row_mut(i);
                row.iter_mut().for_each(|s| *s *= scale);
                softmax_in_place(row);
            }
            // ctx^T = V^T P^T keeps the long axis innermost.
            let out = matmul(&vt, &scores.transpose()).expect("head shapes agree");
            for d in 0..dh {
                for (i, &o) in out.row(d).iter().enumerate() {
                    ctx.set(base + i, c0 + d, o);
                }
            }
            if let Some(store) = probs.as_deref_mut() {
                store.push(scores);
            }
        }
    }
    ctx
}

pub(crate) fn encoder_block<T: Real, L: LinearLayer<T>>(
    block: &BlockRef<'_, T, L>,
    x: &Matrix<T>,
    batch: usize,
    len: usize,
) -> Result<Matrix<T>> {
    let q = block.query.apply(x)?;
    let k = block.key.apply(x)?;
    let v = block.value.apply(x)?;
    let ctx = attention(&q, &k, &v, batch, len, None);
    let mut r1 = block.attn_out.apply(&ctx)?;
    r1.add_assign(x)?;
    let x1 = layer_norm(&r1, &block.attn_norm.gamma, &block.attn_norm.beta)?;
    let g = gelu(&block.ffn_in.apply(&x1)?);
    let mut r2 = block.ffn_out.apply(&g)?;
    r2.add_assign(&x1)?;
    layer_norm(&r2, &block.ffn_norm.gamma, &block.ffn_norm.beta)
}

/// First-token rows of every sequence, `[batch x h]`.
pub(crate) fn first_tokens<T: Real>(x: &Matrix<T>, batch: usize, len: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(batch, x.cols());
    for b in 0..batch {
        out.row_mut(b).copy_from_slice(x.row(b * len));
    }
    out
}

pub(crate) fn classify<T: Real, L: LinearLayer<T>>(
    hidden: &Matrix<T>,
    pooler: &L,
    head: &L,
    batch: usize,
    len: usize,
) -> Result<Matrix<T>> {
    let cls = first_tokens(hidden, batch, len);
    let pooled = pooler.apply(&cls)?.map(|v| v.tanh());
    head.apply(&pooled)
}

impl<T: Real> ModelWeights<T> {
    pub(crate) fn block_refs(&self) -> impl Iterator<Item = BlockRef<'_, T, Linear<T>>> {
        self.blocks.iter().map(|b| BlockRef {
            query: &b.query,
            key: &b.key,
            value: &b.value,
            attn_out: &b.attn_out,
            attn_norm: &b.attn_norm,
            ffn_in: &b.ffn_in,
            ffn_out: &b.ffn_out,
            ffn_norm: &b.ffn_norm,
        })
    }

    /// Logits `[batch x classes]` for equal-length token sequences.
    pub fn forward_batch(&self, batch: &[Vec<u32>]) -> Result<Matrix<T>> {
        let len = validate_batch(&self.dims(), batch)?;
        let mut x = embed(&self.token_embedding, &self.position_embedding, batch, len);
        for block in self.block_refs() {
            x = encoder_block(&block, &x, batch.len(), len)?;
        }
        classify(&x, &self.pooler, &self.head, batch.len(), len)
    }

    /// Logits for a single sequence.
    pub fn forward(&self, tokens: &[u32]) -> Result<Vec<T>> {
        Ok(self.forward_batch(&[tokens.to_vec()])?.into_data())
    }
}

/// fp32 forward pass for one sequence.
pub fn forward(model: &ModelWeights<f32>, tokens: &[u32]) -> Result<Vec<f32>> {
    model.forward(tokens)
}
