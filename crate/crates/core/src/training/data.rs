use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2D;
use crate::seed;
use crate::transformer::ModelWeights;

/// One labelled token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub label: u32,
}

/// Token sequences and labels of a slice of examples.
pub fn unzip(examples: &[Example]) -> (Vec<Vec<u32>>, Vec<u32>) {
    examples.iter().map(|e| (e.tokens.clone(), e.label)).unzip()
}

/// Gathers `indices` from `examples`.
pub fn gather(examples: &[Example], indices: &[usize]) -> (Vec<Vec<u32>>, Vec<u32>) {
    indices
        .iter()
        .map(|&i| (examples[i].tokens.clone(), examples[i].label))
        .unzip()
}

/// Shuffled example order for one epoch, deterministic in `(seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut seed::indexed_rng(seed, "epoch-order", &[epoch]));
    order
}

/// Full batches per epoch; the trailing partial batch is dropped.
pub fn batches_per_epoch(len: usize, batch_size: usize) -> Result<usize> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if len < batch_size {
        return Err(Error::Input(format!(
            "{len} training examples cannot fill one batch of {batch_size}"
        )));
    }
    Ok(len / batch_size)
}

/// Teacher logits for every example, `[examples x classes]`.
pub fn teacher_logits(teacher: &ModelWeights<f32>, examples: &[Example]) -> Result<Tensor2D> {
    if examples.is_empty() {
        return Err(Error::Input("no examples to label".into()));
    }
    let classes = teacher.dims().classes;
    let mut data = Vec::with_capacity(examples.len() * classes);
    for chunk in examples.chunks(64) {
        let (tokens, _) = unzip(chunk);
        data.extend_from_slice(teacher.forward_batch(&tokens)?.data());
    }
    Tensor2D::new(examples.len(), classes, data)
}

/// Rows `indices` of `m`.
pub(crate) fn select_rows(m: &Tensor2D, indices: &[usize]) -> Tensor2D {
    let mut out = Tensor2D::zeros(indices.len(), m.cols());
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_order_is_a_permutation() {
        let mut o = epoch_order(50, 3, 1);
        assert_ne!(o, epoch_order(50, 3, 2));
        assert_eq!(o, epoch_order(50, 3, 1));
        o.sort_unstable();
        assert_eq!(o, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn batch_count() {
        assert_eq!(batches_per_epoch(100, 32).unwrap(), 3);
        assert!(batches_per_epoch(10, 32).is_err());
        assert!(batches_per_epoch(10, 0).is_err());
    }
}
