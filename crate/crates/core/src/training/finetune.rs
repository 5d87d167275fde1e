use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transformer::{quantize_model, ModelWeights, QuantizedModel};

use super::adam::{AdamConfig, AdamState, LinearWarmup};
use super::backward::backward;
use super::data::{epoch_order, gather, unzip, Example};
use super::loss::Objective;
use super::supermodel::StepRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f32,
    pub warmup_fraction: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch_size: 32,
            peak_lr: 1e-3,
            warmup_fraction: 0.1,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Supervised cross-entropy training of every parameter.
pub fn finetune(
    model: ModelWeights<f32>,
    train: &[Example],
    cfg: &FinetuneConfig,
) -> Result<(ModelWeights<f32>, Vec<StepRecord>)> {
    if train.is_empty() {
        return Err(Error::Input("no fine-tuning examples".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config(
            "fine-tuning needs at least one epoch and a positive batch size".into(),
        ));
    }
    let batch = cfg.batch_size.min(train.len());
    let per_epoch = (train.len() / batch) as u64;
    let total = per_epoch * cfg.epochs as u64;
    let schedule = LinearWarmup::new(cfg.peak_lr, cfg.warmup_fraction, total)?;
    let mut model = model;
    let mut adam = AdamState::new(cfg.adam, model.params());
    let mut log = Vec::with_capacity(total as usize);
    for step in 0..total {
        let epoch = step / per_epoch;
        let b = (step % per_epoch) as usize;
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let (tokens, labels) = gather(train, &order[b * batch..(b + 1) * batch]);
        let (loss, grads) = backward(
            &model,
            &tokens,
            &Objective::CrossEntropy { labels: &labels },
        )?;
        let lr = schedule.lr(step);
        adam.update(model.params_mut(), grads.tensors(), lr)?;
        log.push(StepRecord {
            step,
            lr,
            loss,
            wall_ms: 0.0,
        });
    }
    Ok((model, log))
}

fn accuracy_with(
    examples: &[Example],
    mut logits: impl FnMut(&[Vec<u32>]) -> Result<Vec<f32>>,
    classes: usize,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Input("no evaluation examples".into()));
    }
    let mut correct = 0usize;
    for chunk in examples.chunks(64) {
        let (tokens, labels) = unzip(chunk);
        let out = logits(&tokens)?;
        for (row, &label) in out.chunks(classes).zip(&labels) {
            if argmax(row) == label as usize {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy_f32(model: &ModelWeights<f32>, examples: &[Example]) -> Result<f64> {
    accuracy_with(
        examples,
        |t| Ok(model.forward_batch(t)?.into_data()),
        model.dims().classes,
    )
}

pub fn accuracy_int8(model: &QuantizedModel, examples: &[Example]) -> Result<f64> {
    accuracy_with(
        examples,
        |t| Ok(model.forward_batch(t)?.into_data()),
        model.dims().classes,
    )
}

/// Fine-tunes, quantizes to int8 and returns the model with its held-out
/// int8 accuracy.
pub fn finetune_candidate(
    model: ModelWeights<f32>,
    train: &[Example],
    heldout: &[Example],
    cfg: &FinetuneConfig,
) -> Result<(ModelWeights<f32>, f64)> {
    if heldout.is_empty() {
        return Err(Error::Input("no held-out examples".into()));
    }
    let (tuned, _) = finetune(model, train, cfg)?;
    let acc = accuracy_int8(&quantize_model(&tuned), heldout)?;
    Ok((tuned, acc))
}
