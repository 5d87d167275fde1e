//! The five pipeline stages over one output directory.

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::latency::{
    benchmark, collect_dataset, evaluate_mape, fit_latency_regression, host_fingerprint,
    read_dataset, train_latency_predictor, CollectOptions, DatasetWriter, LatencyModel,
    LatencyPredictor, LatencySample, RegressionReport,
};
use crate::search::{narrow_space, run_search, Evaluation, NarrowedSpace, SearchLog};
use crate::seed;
use crate::training::{
    accuracy_f32, accuracy_int8, finetune, finetune_candidate, teacher_logits, train_distill,
    DistillData, StepRecord, SupermodelState, SupermodelTrainer, TrainConfig,
};
use crate::transformer::{quantize_model, Architecture, ModelWeights};

use super::config::{content_hash, PipelineConfig};
use super::report::{MethodTag, ReportRow};
use super::task::{generate_task, TaskData};
use super::workspace::{is_fresh, read_json, write_json, write_stamp, Workspace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileOutcome {
    pub samples: usize,
    pub measured_now: usize,
    pub regression: Option<RegressionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorOutcome {
    pub mape_percent: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherOutcome {
    pub arch: Architecture,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermodelOutcome {
    pub arch: Architecture,
    pub updates: u64,
    pub total_updates: u64,
}

impl SupermodelOutcome {
    pub fn is_complete(&self) -> bool {
        self.updates >= self.total_updates
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerInfo {
    pub arch: Architecture,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
    pub predicted_ms: f64,
    pub measured_ms: f64,
    /// Candidates benchmarked before one met the constraint.
    pub tries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineInfo {
    pub arch: Architecture,
    pub f32_ms: f64,
    pub int8_ms: f64,
    pub f32_accuracy: f64,
    pub int8_accuracy: f64,
    /// Whether the fp32 model runs under the target.
    pub within_budget: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub target_ms: f64,
    pub narrowed_members: usize,
    pub predictor_fingerprint: String,
    pub winner: WinnerInfo,
    pub constraint_met: bool,
    pub baseline: BaselineInfo,
    pub rows: Vec<ReportRow>,
}

/// Winner candidates benchmarked before giving up on the constraint.
const MAX_WINNER_TRIES: usize = 5;

pub struct Pipeline {
    cfg: PipelineConfig,
    ws: Workspace,
}

impl Pipeline {
    /// Validates `cfg`, locks its output directory and records the resolved
    /// configuration there.
    pub fn open(mut cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        cfg.predictor.seed = cfg.seed_for("predictor");
        cfg.supermodel.train.seed = cfg.seed_for("supermodel-train");
        cfg.search.seed = cfg.seed_for("search");
        let ws = Workspace::open(&cfg.out_dir)?;
        write_json(&ws.root().join("config.json"), &cfg)?;
        Ok(Self { cfg, ws })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn root(&self) -> &Path {
        self.ws.root()
    }

    fn profile_hash(&self) -> Result<String> {
        let c = &self.cfg;
        content_hash(&(
            "profile",
            &c.space,
            &c.bench,
            &c.profile,
            c.dims(),
            c.seed_for("profile"),
            host_fingerprint(),
        ))
    }

    /// Architectures timed by `profile`, in measurement order.
    pub fn profile_archs(&self) -> Vec<Architecture> {
        let all = self.cfg.space.enumerate();
        let mut rng = seed::rng(self.cfg.seed_for("profile"));
        all.choose_multiple(&mut rng, self.cfg.profile.samples)
            .copied()
            .collect()
    }

    pub fn latency_csv(&self) -> PathBuf {
        self.ws.root().join("profile").join("latency.csv")
    }

    /// Benchmarks the profiling sample and fits the fp32-on-int8 regression.
    /// With `resume`, rows already present for the same configuration are kept.
    pub fn profile(&self, resume: bool) -> Result<ProfileOutcome> {
        let dir = self.ws.dir("profile")?;
        let hash = self.profile_hash()?;
        let csv = self.latency_csv();
        let archs = self.profile_archs();
        let same_config = is_fresh(&dir, &hash, &["latency.csv"]);
        let existing = if same_config {
            read_dataset(&csv)?
        } else {
            Vec::new()
        };
        if !same_config || !resume {
            let done: HashSet<_> = existing.iter().map(|s| s.arch).collect();
            if same_config && archs.iter().all(|a| done.contains(a)) {
                log::info!("profile is up to date ({} samples)", existing.len());
                return self.finish_profile(&dir, existing, 0);
            }
            if csv.exists() {
                log::info!("starting a fresh latency dataset at {}", csv.display());
                fs::remove_file(&csv)?;
            }
        }
        let existing = if csv.exists() {
            read_dataset(&csv)?
        } else {
            Vec::new()
        };
        let done: HashSet<_> = existing.iter().map(|s| s.arch).collect();
        let todo: Vec<_> = archs.into_iter().filter(|a| !done.contains(a)).collect();
        write_stamp(&dir, &hash)?;
        let mut writer = DatasetWriter::append(&csv)?;
        let opts = CollectOptions {
            protocol: self.cfg.bench,
            include_f32: self.cfg.profile.include_f32,
            dims: self.cfg.dims(),
            weight_seed: self.cfg.seed_for("profile-weights"),
            rounds: self.cfg.profile.rounds,
        };
        let measured_now = if todo.is_empty() {
            0
        } else {
            log::info!(
                "profiling {} architectures ({} already present)",
                todo.len(),
                done.len()
            );
            collect_dataset(&todo, &opts, |s| writer.write(s))?.len()
        };
        drop(writer);
        self.finish_profile(&dir, read_dataset(&csv)?, measured_now)
    }

    fn finish_profile(
        &self,
        dir: &Path,
        samples: Vec<LatencySample>,
        measured_now: usize,
    ) -> Result<ProfileOutcome> {
        let regression = if self.cfg.profile.include_f32 {
            let r = fit_latency_regression(&samples)?;
            fs::write(dir.join("regression.txt"), format!("{r}\n"))?;
            write_json(&dir.join("regression.json"), &r)?;
            Some(r)
        } else {
            None
        };
        Ok(ProfileOutcome {
            samples: samples.len(),
            measured_now,
            regression,
        })
    }

    fn predictor_hash(&self) -> Result<String> {
        content_hash(&("predictor", self.profile_hash()?, &self.cfg.predictor))
    }

    pub fn predictor_path(&self) -> PathBuf {
        self.ws.root().join("predictor").join("predictor.bin")
    }

    /// Fits the latency predictor on the profiled data with a deterministic
    /// 80/20 split and reports the held-out MAPE.
    pub fn train_predictor(&self) -> Result<PredictorOutcome> {
        let samples = read_dataset(&self.latency_csv())?;
        let dir = self.ws.dir("predictor")?;
        let hash = self.predictor_hash()?;
        if is_fresh(&dir, &hash, &["predictor.bin", "mape.json"]) {
            log::info!("predictor is up to date");
            return read_json(&dir.join("mape.json"), "predictor report");
        }
        let (test, train): (Vec<_>, Vec<_>) =
            samples.into_iter().partition(|s| is_heldout(&s.arch));
        if train.len() < 2 || test.is_empty() {
            return Err(Error::Input(format!(
                "latency dataset too small to split: {} train, {} test",
                train.len(),
                test.len()
            )));
        }
        let trained = train_latency_predictor(&train, &self.cfg.predictor)?;
        let mape_percent = evaluate_mape(&trained.predictor, &test)?;
        trained.predictor.save(&self.predictor_path())?;
        let outcome = PredictorOutcome {
            mape_percent,
            train_samples: train.len(),
            test_samples: test.len(),
            fingerprint: trained.predictor.fingerprint(),
        };
        write_json(&dir.join("mape.json"), &outcome)?;
        write_stamp(&dir, &hash)?;
        Ok(outcome)
    }

    pub fn task(&self) -> Result<TaskData> {
        generate_task(&self.cfg.task, self.cfg.seed_for("task"))
    }

    fn teacher_hash(&self) -> Result<String> {
        let c = &self.cfg;
        content_hash(&(
            "teacher",
            &c.task,
            &c.teacher,
            c.dims(),
            c.seed_for("teacher"),
        ))
    }

    /// Loads the teacher, training it on the task first if needed.
    pub fn teacher(&self, task: &TaskData) -> Result<(ModelWeights<f32>, TeacherOutcome)> {
        let dir = self.ws.dir("teacher")?;
        let hash = self.teacher_hash()?;
        let path = dir.join("teacher.bin");
        if is_fresh(&dir, &hash, &["teacher.bin", "teacher.json"]) {
            return Ok((
                ModelWeights::load(&path)?,
                read_json(&dir.join("teacher.json"), "teacher report")?,
            ));
        }
        let c = &self.cfg;
        log::info!(
            "training teacher {} for {} epochs",
            c.teacher.arch,
            c.teacher.epochs
        );
        let init = ModelWeights::instantiate(c.teacher.arch, c.dims(), c.seed_for("teacher"))?;
        let ft = c
            .teacher
            .training
            .with(c.teacher.epochs, c.seed_for("teacher-data"));
        let (model, _) = finetune(init, &task.train, &ft)?;
        let outcome = TeacherOutcome {
            arch: c.teacher.arch,
            dev_accuracy: accuracy_f32(&model, &task.dev)?,
            test_accuracy: accuracy_f32(&model, &task.test)?,
        };
        if outcome.dev_accuracy < 0.9 {
            log::warn!(
                "teacher reaches only {:.3} dev accuracy",
                outcome.dev_accuracy
            );
        }
        model.save(&path, c.seed_for("teacher"))?;
        write_json(&dir.join("teacher.json"), &outcome)?;
        write_stamp(&dir, &hash)?;
        Ok((model, outcome))
    }

    fn supermodel_hash(&self) -> Result<String> {
        let c = &self.cfg;
        content_hash(&(
            "supermodel",
            self.teacher_hash()?,
            &c.space,
            &c.supermodel.train,
            c.seed_for("supermodel-init"),
        ))
    }

    fn supermodel_paths(&self) -> Result<(PathBuf, PathBuf, PathBuf)> {
        let dir = self.ws.dir("supermodel")?;
        Ok((
            dir.join("supermodel.bin"),
            dir.join("optimizer.bin"),
            dir.join("train_log.jsonl"),
        ))
    }

    /// Distils the supermodel from the teacher. With `resume`, training
    /// continues from the last checkpoint of the same configuration.
    /// `stop_after` halts at that update count (exclusive) as an interruption would.
    pub fn train_supermodel(
        &self,
        resume: bool,
        stop_after: Option<u64>,
    ) -> Result<SupermodelOutcome> {
        let task = self.task()?;
        let (teacher, _) = self.teacher(&task)?;
        let c = &self.cfg;
        let dir = self.ws.dir("supermodel")?;
        let hash = self.supermodel_hash()?;
        let (model_path, opt_path, log_path) = self.supermodel_paths()?;
        let status_path = dir.join("status.json");
        let same = is_fresh(
            &dir,
            &hash,
            &["supermodel.bin", "optimizer.bin", "status.json"],
        );
        if same {
            let status: SupermodelOutcome = read_json(&status_path, "supermodel status")?;
            if status.is_complete() {
                log::info!("supermodel is up to date ({} updates)", status.updates);
                return Ok(status);
            }
        }
        let state = if same && resume {
            let s = SupermodelState::load(&model_path, &opt_path, c.supermodel.train.adam)?;
            log::info!("resuming supermodel training at update {}", s.update());
            s
        } else {
            let init = ModelWeights::instantiate(
                c.supermodel_arch(),
                c.dims(),
                c.seed_for("supermodel-init"),
            )?;
            SupermodelState::new(init, c.supermodel.train.adam)
        };
        truncate_log(&log_path, state.update())?;
        write_stamp(&dir, &hash)?;

        let logits = teacher_logits(&teacher, &task.train)?;
        let data = DistillData::new(&task.train, &logits)?;
        let mut trainer =
            SupermodelTrainer::new(state, c.supermodel.train.clone(), &c.space, data)?;
        let total = trainer.total_updates();
        let every = c.supermodel.checkpoint_every;
        let seed = c.seed_for("supermodel-init");
        let arch = c.supermodel_arch();
        let save = |state: &SupermodelState| -> Result<()> {
            state.save(&model_path, &opt_path, seed)?;
            write_json(
                &status_path,
                &SupermodelOutcome {
                    arch,
                    updates: state.update(),
                    total_updates: total,
                },
            )
        };
        let mut log_file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?;
        trainer.run(stop_after, |rec, state| {
            writeln!(log_file, "{}", serde_json::to_string(rec)?)?;
            if rec.step % 10 == 0 || rec.step + 1 == total {
                log::info!(
                    "update {}/{total}: loss {:.4} lr {:.2e}",
                    rec.step + 1,
                    rec.loss,
                    rec.lr
                );
            }
            if every > 0 && state.update() % every == 0 {
                save(state)?;
            }
            Ok(())
        })?;
        log_file.flush()?;
        save(trainer.state())?;
        Ok(SupermodelOutcome {
            arch,
            updates: trainer.state().update(),
            total_updates: total,
        })
    }

    /// Reads the supermodel training log.
    pub fn supermodel_log(&self) -> Result<Vec<StepRecord>> {
        let (_, _, log_path) = self.supermodel_paths()?;
        let text = fs::read_to_string(&log_path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(serde_json::from_str(l)?))
            .collect()
    }

    pub fn load_supermodel(&self) -> Result<ModelWeights<f32>> {
        let (model_path, _, _) = self.supermodel_paths()?;
        let status: SupermodelOutcome = read_json(
            &self.ws.root().join("supermodel").join("status.json"),
            "supermodel status",
        )?;
        if !status.is_complete() {
            return Err(Error::Config(format!(
                "supermodel training stopped at update {} of {}; rerun train-supermodel --resume",
                status.updates, status.total_updates
            )));
        }
        ModelWeights::load(&model_path)
    }

    fn candidate_seed(&self, arch: &Architecture) -> u64 {
        seed::derive_indexed(
            self.cfg.seed_for("finetune"),
            "candidate",
            &[arch.e as u64, arch.h as u64, arch.f as u64],
        )
    }

    /// Extracts `arch` from the supermodel and fine-tunes it on the task.
    pub fn finetune_extracted(
        &self,
        supermodel: &ModelWeights<f32>,
        arch: Architecture,
        task: &TaskData,
    ) -> Result<(ModelWeights<f32>, f64)> {
        let sub = supermodel.extract_submodel(arch)?;
        let ft = self
            .cfg
            .finetune
            .with(self.cfg.search.finetune_epochs, self.candidate_seed(&arch));
        finetune_candidate(sub, &task.train, &task.dev, &ft)
    }

    /// Trains, quantizes and measures one ladder model, reusing the cached
    /// result for the same configuration.
    fn baseline(
        &self,
        arch: Architecture,
        task: &TaskData,
        teacher_logits: &crate::numerics::Tensor2D,
    ) -> Result<BaselineInfo> {
        let c = &self.cfg;
        let dir = self
            .ws
            .dir(&format!("baselines/{}_{}_{}", arch.e, arch.h, arch.f))?;
        let hash = content_hash(&(
            "baseline",
            self.teacher_hash()?,
            self.profile_hash()?,
            arch,
            &c.baselines.distill_epochs,
            &c.supermodel.train,
            &c.finetune,
            c.search.finetune_epochs,
        ))?;
        let path = dir.join("model.bin");
        let info_path = dir.join("baseline.json");
        if is_fresh(&dir, &hash, &["model.bin", "baseline.json"]) {
            return read_json(&info_path, "baseline report");
        }
        log::info!("training baseline {arch}");
        let seed = seed::derive_indexed(
            c.seed_for("baseline"),
            "init",
            &[arch.e as u64, arch.h as u64, arch.f as u64],
        );
        let mut model = ModelWeights::instantiate(arch, c.dims(), seed)?;
        if c.baselines.distill_epochs > 0 {
            let tc = TrainConfig {
                epochs: c.baselines.distill_epochs,
                seed,
                ..c.supermodel.train.clone()
            };
            model = train_distill(model, DistillData::new(&task.train, teacher_logits)?, &tc)?.0;
        }
        let ft = c.finetune.with(c.search.finetune_epochs, seed);
        let (model, _) = finetune(model, &task.train, &ft)?;
        let q = quantize_model(&model);
        let info = BaselineInfo {
            arch,
            f32_ms: benchmark(&model, &c.bench)?.mean_ms,
            int8_ms: benchmark(&q, &c.bench)?.mean_ms,
            f32_accuracy: accuracy_f32(&model, &task.test)?,
            int8_accuracy: accuracy_int8(&q, &task.test)?,
            within_budget: false,
        };
        model.save(&path, seed)?;
        write_json(&info_path, &info)?;
        write_stamp(&dir, &hash)?;
        Ok(info)
    }

    /// Narrows the space at every configured latency target, searches it and
    /// compares the winner with the baseline ladder.
    pub fn search(&self) -> Result<Vec<TargetResult>> {
        let predictor = LatencyPredictor::load(&self.predictor_path())?;
        let supermodel = self.load_supermodel()?;
        let task = self.task()?;
        let (teacher, _) = self.teacher(&task)?;
        let logits = teacher_logits(&teacher, &task.train)?;
        let mut baselines = Vec::new();
        for &arch in &self.cfg.baselines.archs {
            let info = self.baseline(arch, &task, &logits)?;
            log::info!(
                "baseline {arch}: fp32 {:.3} ms acc {:.3}, int8 {:.3} ms acc {:.3}",
                info.f32_ms,
                info.f32_accuracy,
                info.int8_ms,
                info.int8_accuracy
            );
            baselines.push(info);
        }
        let mut out = Vec::new();
        for &target in &self.cfg.latency_targets_ms {
            out.push(self.search_target(target, &predictor, &supermodel, &task, &baselines)?);
        }
        Ok(out)
    }

    fn search_target(
        &self,
        target: f64,
        predictor: &LatencyPredictor,
        supermodel: &ModelWeights<f32>,
        task: &TaskData,
        baselines: &[BaselineInfo],
    ) -> Result<TargetResult> {
        let c = &self.cfg;
        let dir = self.ws.dir(&format!("search/l{target}"))?;
        let hash = content_hash(&(
            "search",
            target,
            self.supermodel_hash()?,
            self.predictor_hash()?,
            &c.search,
            &c.finetune,
            baselines,
        ))?;
        if is_fresh(&dir, &hash, &["result.json", "search_log.jsonl"]) {
            log::info!("search at {target} ms is up to date");
            return read_json(&dir.join("result.json"), "search result");
        }
        let narrowed = narrow_space(&c.space, predictor, target).map_err(|e| match e {
            Error::EmptyNarrowedSpace { fastest_ms, .. } => Error::EmptyNarrowedSpace {
                constraint_ms: target,
                fastest_ms,
            },
            other => other,
        })?;
        narrowed.save_csv(&dir.join("narrowed.csv"))?;
        log::info!(
            "searching {} architectures predicted under {target} ms",
            narrowed.len()
        );

        let log_path = dir.join("search_log.jsonl");
        let mut log_file = fs::File::create(&log_path)?;
        let (best, log) = run_search(
            &c.search,
            &c.space,
            &narrowed,
            predictor,
            |arch| {
                let (_, acc) = self.finetune_extracted(supermodel, *arch, task)?;
                Ok(Evaluation::from(acc))
            },
            |rec| {
                writeln!(log_file, "{}", serde_json::to_string(rec)?)?;
                log::info!(
                    "gen {} {}: dev int8 accuracy {:.4}, predicted {:.3} ms",
                    rec.generation,
                    rec.arch(),
                    rec.accuracy,
                    rec.predicted_ms
                );
                Ok(())
            },
        )?;
        log_file.flush()?;
        log::info!(
            "best candidate {} with dev accuracy {:.4}",
            best.arch,
            best.accuracy
        );

        let (winner, constraint_met) =
            self.verify_winner(&log, &narrowed, supermodel, task, target)?;
        let baseline = pick_baseline(baselines, target);
        let dims = c.dims();
        let rows = vec![
            ReportRow {
                method: MethodTag::SearchedInt8,
                target_ms: target,
                arch: winner.arch,
                accuracy: winner.test_accuracy,
                latency_ms: winner.measured_ms,
                bytes: winner.arch.int8_bytes(&dims),
            },
            ReportRow {
                method: MethodTag::BaselineF32,
                target_ms: target,
                arch: baseline.arch,
                accuracy: baseline.f32_accuracy,
                latency_ms: baseline.f32_ms,
                bytes: baseline.arch.f32_bytes(&dims),
            },
            ReportRow {
                method: MethodTag::BaselineInt8,
                target_ms: target,
                arch: baseline.arch,
                accuracy: baseline.int8_accuracy,
                latency_ms: baseline.int8_ms,
                bytes: baseline.arch.int8_bytes(&dims),
            },
        ];
        let result = TargetResult {
            target_ms: target,
            narrowed_members: narrowed.len(),
            predictor_fingerprint: narrowed.predictor_fingerprint.clone(),
            winner,
            constraint_met,
            baseline,
            rows,
        };
        write_json(&dir.join("result.json"), &result)?;
        write_stamp(&dir, &hash)?;
        Ok(result)
    }

    /// Benchmarks candidates from best to worst until one runs under `target`.
    fn verify_winner(
        &self,
        log: &SearchLog,
        narrowed: &NarrowedSpace,
        supermodel: &ModelWeights<f32>,
        task: &TaskData,
        target: f64,
    ) -> Result<(WinnerInfo, bool)> {
        let mut ranked: Vec<_> = log.records.iter().filter(|r| r.error.is_none()).collect();
        ranked.sort_by(|a, b| {
            b.accuracy
                .total_cmp(&a.accuracy)
                .then(a.predicted_ms.total_cmp(&b.predicted_ms))
                .then(a.arch().cmp(&b.arch()))
        });
        let mut seen = HashSet::new();
        ranked.retain(|r| seen.insert(r.arch()));
        let mut first = None;
        for (i, rec) in ranked.iter().take(MAX_WINNER_TRIES).enumerate() {
            let arch = rec.arch();
            let (model, dev_accuracy) = self.finetune_extracted(supermodel, arch, task)?;
            let q = quantize_model(&model);
            let measured_ms = benchmark(&q, &self.cfg.bench)?.mean_ms;
            let info = WinnerInfo {
                arch,
                dev_accuracy,
                test_accuracy: accuracy_int8(&q, &task.test)?,
                predicted_ms: narrowed.predicted_ms(&arch).unwrap_or(rec.predicted_ms),
                measured_ms,
                tries: i + 1,
            };
            if measured_ms < target {
                return Ok((info, true));
            }
            log::warn!("{arch} measures {measured_ms:.3} ms, over the {target} ms target");
            first.get_or_insert(info);
        }
        let info =
            first.ok_or_else(|| Error::Input("search produced no successful candidate".into()))?;
        log::warn!(
            "no candidate met {target} ms when measured; reporting {}",
            info.arch
        );
        Ok((info, false))
    }
}

/// 80/20 split on a hash of the architecture tuple; true for the 20%.
pub fn is_heldout(arch: &Architecture) -> bool {
    let digest = Sha256::digest(format!("{},{},{}", arch.e, arch.h, arch.f).as_bytes());
    digest[0] % 5 == 0
}

/// Largest-by-size ladder model whose fp32 latency is under `target`,
/// falling back to the fastest one.
fn pick_baseline(baselines: &[BaselineInfo], target: f64) -> BaselineInfo {
    let fits = baselines
        .iter()
        .filter(|b| b.f32_ms < target)
        .max_by(|a, b| {
            (a.arch.e * a.arch.h * (a.arch.h + a.arch.f))
                .cmp(&(b.arch.e * b.arch.h * (b.arch.h + b.arch.f)))
                .then(a.f32_ms.total_cmp(&b.f32_ms))
        });
    match fits {
        Some(b) => BaselineInfo {
            within_budget: true,
            ..b.clone()
        },
        None => {
            let b = baselines
                .iter()
                .min_by(|a, b| a.f32_ms.total_cmp(&b.f32_ms))
                .expect("validated nonempty ladder");
            log::warn!(
                "no baseline runs under {target} ms in fp32; using the fastest, {}",
                b.arch
            );
            b.clone()
        }
    }
}

fn truncate_log(path: &Path, updates: u64) -> Result<()> {
    if updates == 0 {
        if path.exists() {
            fs::remove_file(path)?;
        }
        return Ok(());
    }
    let text = fs::read_to_string(path).unwrap_or_default();
    let kept: String = text
        .lines()
        .filter(|l| serde_json::from_str::<StepRecord>(l).is_ok_and(|r| r.step < updates))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(path, kept)?;
    Ok(())
}
