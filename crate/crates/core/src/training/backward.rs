//! Reverse-mode gradients for the fp32/f64 encoder classifier.

use crate::error::{Error, Result};
use crate::numerics::{
    gelu_grad_scalar, gelu_scalar, layer_norm_cached, linear, matmul_nt, matmul_tn, LayerNormCache,
    Matrix, Real,
};
use crate::transformer::{
    attention, embed, first_tokens, validate_batch, EncoderBlock, LayerNormParams, Linear,
    ModelWeights, HEAD_COUNT,
};

use super::grads::Gradients;
use super::loss::Objective;

struct BlockCache<T> {
    input: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    probs: Vec<Matrix<T>>,
    ctx: Matrix<T>,
    ln1: LayerNormCache<T>,
    x1: Matrix<T>,
    pre_act: Matrix<T>,
    act: Matrix<T>,
    ln2: LayerNormCache<T>,
}

struct ForwardCache<T> {
    batch: usize,
    len: usize,
    blocks: Vec<BlockCache<T>>,
    cls: Matrix<T>,
    pooled: Matrix<T>,
    logits: Matrix<T>,
}

fn block_forward<T: Real>(
    b: &EncoderBlock<T>,
    x: Matrix<T>,
    batch: usize,
    len: usize,
) -> Result<(Matrix<T>, BlockCache<T>)> {
    let q = linear(&x, &b.query.weight, &b.query.bias)?;
    let k = linear(&x, &b.key.weight, &b.key.bias)?;
    let v = linear(&x, &b.value.weight, &b.value.bias)?;
    let mut probs = Vec::with_capacity(batch * HEAD_COUNT);
    let ctx = attention(&q, &k, &v, batch, len, Some(&mut probs));
    let mut r1 = linear(&ctx, &b.attn_out.weight, &b.attn_out.bias)?;
    r1.add_assign(&x)?;
    let (x1, ln1) = layer_norm_cached(&r1, &b.attn_norm.gamma, &b.attn_norm.beta)?;
    let pre_act = linear(&x1, &b.ffn_in.weight, &b.ffn_in.bias)?;
    let act = pre_act.map(gelu_scalar);
    let mut r2 = linear(&act, &b.ffn_out.weight, &b.ffn_out.bias)?;
    r2.add_assign(&x1)?;
    let (out, ln2) = layer_norm_cached(&r2, &b.ffn_norm.gamma, &b.ffn_norm.beta)?;
    let cache = BlockCache {
        input: x,
        q,
        k,
        v,
        probs,
        ctx,
        ln1,
        x1,
        pre_act,
        act,
        ln2,
    };
    Ok((out, cache))
}

fn forward_cached<T: Real>(model: &ModelWeights<T>, batch: &[Vec<u32>]) -> Result<ForwardCache<T>> {
    let len = validate_batch(&model.dims(), batch)?;
    let n = batch.len();
    let mut x = embed(
        &model.token_embedding,
        &model.position_embedding,
        batch,
        len,
    );
    let mut blocks = Vec::with_capacity(model.blocks.len());
    for b in &model.blocks {
        let (y, cache) = block_forward(b, x, n, len)?;
        blocks.push(cache);
        x = y;
    }
    let cls = first_tokens(&x, n, len);
    let pooled = linear(&cls, &model.pooler.weight, &model.pooler.bias)?.map(|v| v.tanh());
    let logits = linear(&pooled, &model.head.weight, &model.head.bias)?;
    Ok(ForwardCache {
        batch: n,
        len,
        blocks,
        cls,
        pooled,
        logits,
    })
}

/// Accumulates weight and bias gradients of `y = x W + b`; returns `dy W^T`.
fn linear_backward<T: Real>(
    x: &Matrix<T>,
    layer: &Linear<T>,
    dy: &Matrix<T>,
    grad: &mut Linear<T>,
) -> Result<Matrix<T>> {
    grad.weight.add_assign(&matmul_tn(x, dy)?)?;
    grad.bias.add_assign(&dy.sum_rows())?;
    matmul_nt(dy, &layer.weight)
}

fn layer_norm_backward<T: Real>(
    dy: &Matrix<T>,
    cache: &LayerNormCache<T>,
    params: &LayerNormParams<T>,
    grad: &mut LayerNormParams<T>,
) -> Matrix<T> {
    let cols = dy.cols();
    let n = T::of(cols as f64);
    let gamma = params.gamma.data();
    let mut dx = Matrix::zeros(dy.rows(), cols);
    let mut dxhat = vec![T::zero(); cols];
    for r in 0..dy.rows() {
        let xhat = cache.normalized.row(r);
        let dyr = dy.row(r);
        let (mut mean1, mut mean2) = (T::zero(), T::zero());
        for c in 0..cols {
            grad.gamma.data_mut()[c] += dyr[c] * xhat[c];
            grad.beta.data_mut()[c] += dyr[c];
            dxhat[c] = dyr[c] * gamma[c];
            mean1 += dxhat[c];
            mean2 += dxhat[c] * xhat[c];
        }
        mean1 /= n;
        mean2 /= n;
        let istd = cache.inv_std[r];
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = istd * (dxhat[c] - mean1 - xhat[c] * mean2);
        }
    }
    dx
}

/// Gradients of multi-head attention with respect to Q, K and V.
fn attention_backward<T: Real>(
    dctx: &Matrix<T>,
    cache: &BlockCache<T>,
    batch: usize,
    len: usize,
) -> (Matrix<T>, Matrix<T>, Matrix<T>) {
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let h = q.cols();
    let dh = h / HEAD_COUNT;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut dq = Matrix::zeros(q.rows(), h);
    let mut dk = Matrix::zeros(k.rows(), h);
    let mut dv = Matrix::zeros(v.rows(), h);
    let mut dscores = vec![T::zero(); len];
    for b in 0..batch {
        let base = b * len;
        for head in 0..HEAD_COUNT {
            let p = &cache.probs[b * HEAD_COUNT + head];
            let c0 = head * dh;
            for i in 0..len {
                let dci = &dctx.row(base + i)[c0..c0 + dh];
                let prow = p.row(i);
                // dP_ij = dctx_i . v_j, then softmax backward
                let mut dot = T::zero();
                for j in 0..len {
                    let vj = &v.row(base + j)[c0..c0 + dh];
                    let mut acc = T::zero();
                    for (&a, &bv) in dci.iter().zip(vj) {
                        acc += a * bv;
                    }
                    dscores[j] = acc;
                    dot += acc * prow[j];
                }
                for j in 0..len {
                    let pij = prow[j];
                    let ds = pij * (dscores[j] - dot) * scale;
                    let dvj = &mut dv.row_mut(base + j)[c0..c0 + dh];
                    for (o, &g) in dvj.iter_mut().zip(dci) {
                        *o += pij * g;
                    }
                    let kj = &k.row(base + j)[c0..c0 + dh];
                    let dqi = &mut dq.row_mut(base + i)[c0..c0 + dh];
                    for (o, &kv) in dqi.iter_mut().zip(kj) {
                        *o += ds * kv;
                    }
                    let qi = &q.row(base + i)[c0..c0 + dh];
                    let dkj = &mut dk.row_mut(base + j)[c0..c0 + dh];
                    for (o, &qv) in dkj.iter_mut().zip(qi) {
                        *o += ds * qv;
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

fn block_backward<T: Real>(
    b: &EncoderBlock<T>,
    cache: &BlockCache<T>,
    dy: &Matrix<T>,
    g: &mut EncoderBlock<T>,
    batch: usize,
    len: usize,
) -> Result<Matrix<T>> {
    let dr2 = layer_norm_backward(dy, &cache.ln2, &b.ffn_norm, &mut g.ffn_norm);
    let dact = linear_backward(&cache.act, &b.ffn_out, &dr2, &mut g.ffn_out)?;
    let mut dpre = dact;
    for (d, &a) in dpre.data_mut().iter_mut().zip(cache.pre_act.data()) {
        *d *= gelu_grad_scalar(a);
    }
    let mut dx1 = linear_backward(&cache.x1, &b.ffn_in, &dpre, &mut g.ffn_in)?;
    dx1.add_assign(&dr2)?;
    let dr1 = layer_norm_backward(&dx1, &cache.ln1, &b.attn_norm, &mut g.attn_norm);
    let dctx = linear_backward(&cache.ctx, &b.attn_out, &dr1, &mut g.attn_out)?;
    let (dq, dk, dv) = attention_backward(&dctx, cache, batch, len);
    let mut dx = dr1;
    dx.add_assign(&linear_backward(&cache.input, &b.query, &dq, &mut g.query)?)?;
    dx.add_assign(&linear_backward(&cache.input, &b.key, &dk, &mut g.key)?)?;
    dx.add_assign(&linear_backward(&cache.input, &b.value, &dv, &mut g.value)?)?;
    Ok(dx)
}

/// Loss of `model` on `batch` and the exact gradient of that loss with
/// respect to every parameter.
pub fn backward<T: Real>(
    model: &ModelWeights<T>,
    batch: &[Vec<u32>],
    objective: &Objective<'_, T>,
) -> Result<(T, Gradients<T>)> {
    if objective.batch_len() != batch.len() {
        return Err(Error::Input(format!(
            "{} targets for a batch of {}",
            objective.batch_len(),
            batch.len()
        )));
    }
    let cache = forward_cached(model, batch)?;
    let (loss, dlogits) = objective.loss_and_grad(&cache.logits)?;
    let (n, len) = (cache.batch, cache.len);
    let mut grads = Gradients::zeros_like(model);
    let g = grads.as_weights_mut();

    let dpooled = linear_backward(&cache.pooled, &model.head, &dlogits, &mut g.head)?;
    let mut dz = dpooled;
    for (d, &p) in dz.data_mut().iter_mut().zip(cache.pooled.data()) {
        *d *= T::one() - p * p;
    }
    let dcls = linear_backward(&cache.cls, &model.pooler, &dz, &mut g.pooler)?;
    let mut dx = Matrix::zeros(n * len, model.arch().h);
    for b in 0..n {
        dx.row_mut(b * len).copy_from_slice(dcls.row(b));
    }
    for (i, block) in model.blocks.iter().enumerate().rev() {
        dx = block_backward(block, &cache.blocks[i], &dx, &mut g.blocks[i], n, len)?;
    }
    for (b, seq) in batch.iter().enumerate() {
        for (t, &tok) in seq.iter().enumerate() {
            let d = dx.row(b * len + t);
            for (o, &v) in g.token_embedding.row_mut(tok as usize).iter_mut().zip(d) {
                *o += v;
            }
            for (o, &v) in g.position_embedding.row_mut(t).iter_mut().zip(d) {
                *o += v;
            }
        }
    }
    Ok((loss, grads))
}

/// Logits from the caching forward pass; equal to
/// [`ModelWeights::forward_batch`] bit for bit.
pub fn forward_logits<T: Real>(model: &ModelWeights<T>, batch: &[Vec<u32>]) -> Result<Matrix<T>> {
    forward_cached(model, batch).map(|c| c.logits)
}
