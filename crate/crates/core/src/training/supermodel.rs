//! Weight-sharing supermodel training by distillation.
//!
//! Each optimizer update covers `m` consecutive batches. Every batch is split
//! into `n` equal sub-batches; sub-batch `i` trains a uniformly sampled
//! architecture extracted from the supermodel. Worker `i` accumulates its `m`
//! submodel gradients in the supermodel frame, the `n` worker sums are added in
//! worker order, scaled by `1 / (n m)`, and applied in one Adam step.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2D;
use crate::search::SearchSpace;
use crate::seed;
use crate::transformer::{Architecture, Container, ContainerKind, Header, ModelWeights};

use super::adam::{AdamConfig, AdamState, LinearWarmup};
use super::backward::backward;
use super::data::{batches_per_epoch, epoch_order, gather, select_rows, teacher_logits, Example};
use super::grads::Gradients;
use super::loss::Objective;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Sub-batches (and sampled submodels) per batch, `n`.
    pub submodels_per_step: usize,
    /// Batches accumulated per optimizer update, `m`.
    pub steps_per_update: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub peak_lr: f32,
    pub warmup_fraction: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Worker threads for the per-submodel gradients. Results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            submodels_per_step: 4,
            steps_per_update: 3,
            batch_size: 32,
            epochs: 4,
            peak_lr: 1e-3,
            warmup_fraction: 0.1,
            adam: AdamConfig::default(),
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.submodels_per_step == 0 || self.steps_per_update == 0 {
            return Err(Error::Config(
                "submodels_per_step and steps_per_update must be at least 1".into(),
            ));
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(self.submodels_per_step) {
            return Err(Error::Config(format!(
                "batch size {} must be a positive multiple of submodels_per_step {}",
                self.batch_size, self.submodels_per_step
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warm-up fraction {} outside [0, 1]",
                self.warmup_fraction
            )));
        }
        Ok(())
    }

    /// Optimizer updates per epoch for a training set of `len` examples.
    pub fn updates_per_epoch(&self, len: usize) -> Result<u64> {
        let batches = batches_per_epoch(len, self.batch_size)?;
        let updates = batches / self.steps_per_update;
        if updates == 0 {
            return Err(Error::Input(format!(
                "{len} examples give {batches} batches, fewer than the {} needed for one update",
                self.steps_per_update
            )));
        }
        Ok(updates as u64)
    }
}

/// Line-delimited training log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f32,
    pub loss: f32,
    pub wall_ms: f64,
}

/// Examples paired with fixed teacher logits.
#[derive(Debug, Clone, Copy)]
pub struct DistillData<'a> {
    pub examples: &'a [Example],
    pub teacher_logits: &'a Tensor2D,
}

impl<'a> DistillData<'a> {
    pub fn new(examples: &'a [Example], teacher_logits: &'a Tensor2D) -> Result<Self> {
        if examples.len() != teacher_logits.rows() {
            return Err(Error::Shape(format!(
                "{} examples but {} rows of teacher logits",
                examples.len(),
                teacher_logits.rows()
            )));
        }
        Ok(Self {
            examples,
            teacher_logits,
        })
    }

    fn batch_indices(&self, cfg: &TrainConfig, upe: u64, update: u64, step: usize) -> Vec<usize> {
        let epoch = update / upe;
        let order = epoch_order(self.examples.len(), cfg.seed, epoch);
        let batch = (update % upe) as usize * cfg.steps_per_update + step;
        order[batch * cfg.batch_size..(batch + 1) * cfg.batch_size].to_vec()
    }
}

/// Resumable training state: weights, optimizer moments and update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct SupermodelState {
    pub model: ModelWeights<f32>,
    pub adam: AdamState,
}

impl SupermodelState {
    pub fn new(model: ModelWeights<f32>, adam: AdamConfig) -> Self {
        let adam = AdamState::new(adam, model.params());
        Self { model, adam }
    }

    /// Optimizer updates applied so far.
    pub fn update(&self) -> u64 {
        self.adam.step()
    }

    pub fn save(&self, model_path: &Path, optimizer_path: &Path, seed: u64) -> Result<()> {
        let mut model = self.model.to_container(seed);
        model.header.extra = self.update();
        let optimizer = Container {
            header: Header {
                kind: ContainerKind::OptimizerState,
                extra: self.update(),
                ..model.header
            },
            tensors: self.adam.to_tensors(),
        };
        // optimizer first: a model file never refers to a missing optimizer step
        optimizer.save(optimizer_path)?;
        model.save(model_path)
    }

    pub fn load(model_path: &Path, optimizer_path: &Path, adam: AdamConfig) -> Result<Self> {
        let mc = Container::load(model_path)?;
        let oc = Container::load(optimizer_path)?;
        oc.expect_kind(ContainerKind::OptimizerState)?;
        if mc.header.extra != oc.header.extra || mc.header.arch != oc.header.arch {
            return Err(Error::Checkpoint(format!(
                "model checkpoint (update {}, {}) and optimizer state (update {}, {}) disagree",
                mc.header.extra, mc.header.arch, oc.header.extra, oc.header.arch
            )));
        }
        let model = ModelWeights::from_container(&mc)?;
        let adam = AdamState::from_tensors(adam, oc.header.extra, oc.tensors)?;
        Ok(Self { model, adam })
    }
}

/// Drives supermodel updates; can stop and resume at any update boundary.
pub struct SupermodelTrainer<'a> {
    cfg: TrainConfig,
    space: &'a SearchSpace,
    data: DistillData<'a>,
    schedule: LinearWarmup,
    updates_per_epoch: u64,
    pool: rayon::ThreadPool,
    state: SupermodelState,
}

impl<'a> SupermodelTrainer<'a> {
    pub fn new(
        state: SupermodelState,
        cfg: TrainConfig,
        space: &'a SearchSpace,
        data: DistillData<'a>,
    ) -> Result<Self> {
        cfg.validate()?;
        space.validate()?;
        let sup = state.model.arch();
        if !space.max_arch().fits_within(&sup) {
            return Err(Error::Config(format!(
                "search space reaches {} but the supermodel is only {sup}",
                space.max_arch()
            )));
        }
        if data.teacher_logits.cols() != state.model.dims().classes {
            return Err(Error::Config(format!(
                "teacher emits {} classes, supermodel {}",
                data.teacher_logits.cols(),
                state.model.dims().classes
            )));
        }
        let updates_per_epoch = cfg.updates_per_epoch(data.examples.len())?;
        let total = updates_per_epoch * cfg.epochs as u64;
        let schedule = LinearWarmup::new(cfg.peak_lr, cfg.warmup_fraction, total)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads.max(1))
            .build()
            .map_err(|e| Error::Training(format!("cannot start worker threads: {e}")))?;
        Ok(Self {
            cfg,
            space,
            data,
            schedule,
            updates_per_epoch,
            pool,
            state,
        })
    }

    pub fn total_updates(&self) -> u64 {
        self.schedule.total_steps
    }

    pub fn state(&self) -> &SupermodelState {
        &self.state
    }

    pub fn into_state(self) -> SupermodelState {
        self.state
    }

    /// Architecture trained by worker `worker` in batch `step` of `update`.
    pub fn sampled_arch(&self, update: u64, step: usize, worker: usize) -> Architecture {
        let mut rng = seed::indexed_rng(
            self.cfg.seed,
            "supermodel-arch",
            &[update, step as u64, worker as u64],
        );
        self.space.sample(&mut rng)
    }

    fn worker_gradient(
        &self,
        update: u64,
        worker: usize,
        batches: &[Vec<usize>],
    ) -> Result<(f32, Gradients<f32>)> {
        let sb = self.cfg.batch_size / self.cfg.submodels_per_step;
        let mut acc = Gradients::zeros_like(&self.state.model);
        let mut loss = 0.0;
        for (step, idx) in batches.iter().enumerate() {
            let rows = &idx[worker * sb..(worker + 1) * sb];
            let arch = self.sampled_arch(update, step, worker);
            let sub = self.state.model.extract_submodel(arch)?;
            let (tokens, _) = gather(self.data.examples, rows);
            let teacher = select_rows(self.data.teacher_logits, rows);
            let (l, g) = backward(
                &sub,
                &tokens,
                &Objective::Distill {
                    teacher_logits: &teacher,
                },
            )?;
            acc.add_front_slices(&g)?;
            loss += l;
        }
        Ok((loss, acc))
    }

    /// Applies the next optimizer update.
    pub fn step(&mut self) -> Result<StepRecord> {
        let start = Instant::now();
        let update = self.state.update();
        if update >= self.total_updates() {
            return Err(Error::Training(format!(
                "all {} updates already applied",
                self.total_updates()
            )));
        }
        let (n, m) = (self.cfg.submodels_per_step, self.cfg.steps_per_update);
        let batches: Vec<Vec<usize>> = (0..m)
            .map(|s| {
                self.data
                    .batch_indices(&self.cfg, self.updates_per_epoch, update, s)
            })
            .collect();
        let results: Vec<Result<(f32, Gradients<f32>)>> = self.pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|w| self.worker_gradient(update, w, &batches))
                .collect()
        });
        let mut total: Option<Gradients<f32>> = None;
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l;
            match total.as_mut() {
                None => total = Some(g),
                Some(t) => t.add_assign(&g)?,
            }
        }
        let mut grads = total.expect("at least one worker");
        let count = (n * m) as f32;
        grads.scale(1.0 / count);
        if !grads.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient at update {update}"
            )));
        }
        let lr = self.schedule.lr(update);
        let state = &mut self.state;
        state
            .adam
            .update(state.model.params_mut(), grads.tensors(), lr)?;
        Ok(StepRecord {
            step: update,
            lr,
            loss: loss / count,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs updates until `until` (exclusive) or the end of training, calling
    /// `observer` after each one.
    pub fn run(
        &mut self,
        until: Option<u64>,
        mut observer: impl FnMut(&StepRecord, &SupermodelState) -> Result<()>,
    ) -> Result<()> {
        let end = until.unwrap_or(u64::MAX).min(self.total_updates());
        while self.state.update() < end {
            let rec = self.step()?;
            observer(&rec, &self.state)?;
        }
        Ok(())
    }
}

/// Trains `supermodel` by distillation from `teacher` over `space` for the
/// configured number of epochs.
pub fn train_supermodel(
    supermodel: ModelWeights<f32>,
    teacher: &ModelWeights<f32>,
    examples: &[Example],
    cfg: &TrainConfig,
    space: &SearchSpace,
) -> Result<SupermodelState> {
    let logits = teacher_logits(teacher, examples)?;
    let data = DistillData::new(examples, &logits)?;
    let mut trainer = SupermodelTrainer::new(
        SupermodelState::new(supermodel, cfg.adam),
        cfg.clone(),
        space,
        data,
    )?;
    trainer.run(None, |_, _| Ok(()))?;
    Ok(trainer.into_state())
}

/// Ordinary single-model distillation: one batch per update, the whole model,
/// the same data order and schedule as the supermodel trainer.
pub fn train_distill(
    model: ModelWeights<f32>,
    data: DistillData<'_>,
    cfg: &TrainConfig,
) -> Result<(ModelWeights<f32>, Vec<StepRecord>)> {
    let cfg = TrainConfig {
        submodels_per_step: 1,
        steps_per_update: 1,
        ..cfg.clone()
    };
    cfg.validate()?;
    let upe = cfg.updates_per_epoch(data.examples.len())?;
    let total = upe * cfg.epochs as u64;
    let schedule = LinearWarmup::new(cfg.peak_lr, cfg.warmup_fraction, total)?;
    let mut model = model;
    let mut adam = AdamState::new(cfg.adam, model.params());
    let mut log = Vec::with_capacity(total as usize);
    for update in 0..total {
        let start = Instant::now();
        let idx = data.batch_indices(&cfg, upe, update, 0);
        let (tokens, _) = gather(data.examples, &idx);
        let teacher = select_rows(data.teacher_logits, &idx);
        let (loss, grads) = backward(
            &model,
            &tokens,
            &Objective::Distill {
                teacher_logits: &teacher,
            },
        )?;
        let lr = schedule.lr(update);
        adam.update(model.params_mut(), grads.tensors(), lr)?;
        log.push(StepRecord {
            step: update,
            lr,
            loss,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok((model, log))
}
