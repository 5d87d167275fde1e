use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use speedlimit_core::latency::{BenchProtocol, PredictorConfig};
use speedlimit_core::pipeline::*;
use speedlimit_core::search::{SearchConfig, SearchSpace};
use speedlimit_core::training::TrainConfig;
use speedlimit_core::transformer::Architecture;
use speedlimit_core::Error;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn tiny(out: &Path) -> PipelineConfig {
    PipelineConfig {
        seed: 7,
        out_dir: out.to_path_buf(),
        task: TaskSpec {
            seq_len: 8,
            train: 96,
            dev: 32,
            test: 32,
            ..TaskSpec::default()
        },
        space: SearchSpace {
            e: vec![1, 2],
            h: vec![24, 36, 48],
            f: vec![32, 48, 64],
        },
        latency_targets_ms: vec![1e3],
        bench: BenchProtocol {
            warmup_runs: 1,
            timed_runs: 1,
            seq_len: 16,
            input_seed: 0,
        },
        profile: ProfileConfig {
            samples: 18,
            include_f32: true,
            rounds: 2,
        },
        predictor: PredictorConfig {
            hidden_width: 16,
            steps: 50,
            batch_size: 8,
            ..PredictorConfig::default()
        },
        teacher: TeacherConfig {
            arch: Architecture::new(1, 24, 32),
            epochs: 1,
            training: FinetuneSettings::default(),
        },
        supermodel: SupermodelConfig {
            train: TrainConfig {
                submodels_per_step: 2,
                steps_per_update: 1,
                batch_size: 16,
                epochs: 2,
                ..TrainConfig::default()
            },
            checkpoint_every: 1,
        },
        search: SearchConfig {
            generations: 2,
            population: 2,
            finetune_epochs: 1,
            ..SearchConfig::default()
        },
        finetune: FinetuneSettings::default(),
        baselines: BaselineConfig {
            archs: vec![Architecture::new(1, 24, 32)],
            distill_epochs: 1,
        },
    }
}

#[test]
fn task_is_deterministic_balanced_and_disjoint() {
    let spec = TaskSpec {
        train: 8000,
        dev: 1000,
        test: 1000,
        ..TaskSpec::default()
    };
    let a = generate_task(&spec, 11).unwrap();
    assert_eq!(a, generate_task(&spec, 11).unwrap());
    assert_ne!(a.train, generate_task(&spec, 12).unwrap().train);

    let mut seen = HashSet::new();
    for split in [&a.train, &a.dev, &a.test] {
        let positives = split.iter().filter(|x| x.label == 1).count();
        let share = positives as f64 / split.len() as f64;
        assert!((share - 0.5).abs() <= 0.01, "positive share {share}");
        for ex in split {
            assert!(
                seen.insert(ex.tokens.clone()),
                "example repeated across splits"
            );
            assert_eq!(ex.tokens.len(), spec.seq_len);
            assert_eq!(ex.tokens[0], CLS_TOKEN);
            assert!(ex.tokens.iter().all(|&t| (t as usize) < spec.vocab));
            assert_eq!(ex.label == 1, contains_pattern(&ex.tokens, &a.pattern));
            for p in a.pattern {
                assert_eq!(ex.tokens.iter().filter(|&&t| t == p).count(), 1);
            }
        }
    }
}

#[test]
fn bag_of_tokens_is_near_chance() {
    let spec = TaskSpec::default();
    let data = generate_task(&spec, 3).unwrap();
    let features = |tokens: &[u32]| {
        let mut x = vec![0.0f64; spec.vocab];
        for &t in tokens {
            x[t as usize] += 1.0;
        }
        x
    };
    let train: Vec<(Vec<f64>, f64)> = data
        .train
        .iter()
        .map(|e| (features(&e.tokens), e.label as f64))
        .collect();
    let mut w = vec![0.0f64; spec.vocab];
    let mut b = 0.0;
    for _ in 0..300 {
        let mut gw = vec![0.0; spec.vocab];
        let mut gb = 0.0;
        for (x, y) in &train {
            let z: f64 = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - y;
            gb += err;
            gw.iter_mut().zip(x).for_each(|(g, xi)| *g += err * xi);
        }
        let n = train.len() as f64;
        b -= 0.5 * gb / n;
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= 0.5 * g / n);
    }
    let correct = data
        .dev
        .iter()
        .filter(|e| {
            let z: f64 = b + features(&e.tokens)
                .iter()
                .zip(&w)
                .map(|(a, c)| a * c)
                .sum::<f64>();
            (z > 0.0) == (e.label == 1)
        })
        .count();
    let acc = correct as f64 / data.dev.len() as f64;
    assert!(acc < 0.6, "bag-of-tokens dev accuracy {acc}");
}

#[test]
fn task_rejects_unknown_generator_and_tiny_vocab() {
    let bad = TaskSpec {
        generator: "parity".into(),
        ..TaskSpec::default()
    };
    assert!(matches!(generate_task(&bad, 0), Err(Error::Config(_))));
    let tiny_vocab = TaskSpec {
        vocab: 4,
        ..TaskSpec::default()
    };
    assert!(matches!(
        generate_task(&tiny_vocab, 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn shipped_configs_load() {
    let default = PipelineConfig::load(&configs_dir().join("default.json")).unwrap();
    assert_eq!(default, PipelineConfig::default());
    PipelineConfig::load(&configs_dir().join("desk.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let missing = PipelineConfig::load(&dir.path().join("absent.json")).unwrap_err();
    assert_eq!(missing.category(), "missing-artifact");
    let garbled = dir.path().join("garbled.json");
    fs::write(&garbled, "{ \"seed\": ").unwrap();
    assert_eq!(
        PipelineConfig::load(&garbled).unwrap_err().category(),
        "config"
    );
    let oversampled = dir.path().join("oversampled.json");
    fs::write(&oversampled, r#"{"profile": {"samples": 1000000}}"#).unwrap();
    assert_eq!(
        PipelineConfig::load(&oversampled).unwrap_err().category(),
        "config"
    );
}

#[test]
fn workspace_lock_is_exclusive_and_released() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::open(dir.path()).unwrap();
    assert!(matches!(Workspace::open(dir.path()), Err(Error::Locked(_))));
    drop(ws);
    let ws = Workspace::open(dir.path()).unwrap();
    drop(ws);

    fs::write(dir.path().join(".speedlimit.lock"), "4294967295\n").unwrap();
    Workspace::open(dir.path()).expect("stale lock is taken over");
}

#[test]
fn supermodel_resume_reproduces_uninterrupted_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();

    let full = Pipeline::open(tiny(a.path())).unwrap();
    let done = full.train_supermodel(false, None).unwrap();
    assert!(done.is_complete());
    assert!(done.total_updates > 3);

    let split = Pipeline::open(tiny(b.path())).unwrap();
    let partial = split.train_supermodel(false, Some(3)).unwrap();
    assert_eq!(partial.updates, 3);
    assert_eq!(split.load_supermodel().unwrap_err().category(), "config");
    let resumed = split.train_supermodel(true, None).unwrap();
    assert_eq!(resumed, done);

    for file in ["supermodel.bin", "optimizer.bin"] {
        let x = fs::read(a.path().join("supermodel").join(file)).unwrap();
        let y = fs::read(b.path().join("supermodel").join(file)).unwrap();
        assert!(x == y, "{file} differs after resume");
    }
    let strip = |p: &Pipeline| -> Vec<_> {
        p.supermodel_log()
            .unwrap()
            .into_iter()
            .map(|r| (r.step, r.lr, r.loss))
            .collect()
    };
    assert_eq!(strip(&split), strip(&full));
    assert_eq!(strip(&split).len() as u64, done.total_updates);
}

#[test]
fn search_requires_earlier_stages() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::open(tiny(dir.path())).unwrap();
    assert_eq!(
        p.train_predictor().unwrap_err().category(),
        "missing-artifact"
    );
    assert_eq!(p.search().unwrap_err().category(), "missing-artifact");
    drop(p);
    assert_eq!(
        write_report(dir.path()).unwrap_err().category(),
        "missing-artifact"
    );
}

#[test]
fn tiny_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::open(tiny(dir.path())).unwrap();

    let prof = p.profile(false).unwrap();
    assert_eq!((prof.samples, prof.measured_now), (18, 18));
    assert_eq!(prof.regression.unwrap().n, 18);
    assert_eq!(p.profile(true).unwrap().measured_now, 0);

    let pred = p.train_predictor().unwrap();
    assert_eq!(pred.train_samples + pred.test_samples, 18);
    assert_eq!(p.train_predictor().unwrap(), pred);

    p.train_supermodel(false, None).unwrap();
    let results = p.search().unwrap();
    assert_eq!(results.len(), 1);
    let r = &results[0];
    assert!(p.config().space.contains(&r.winner.arch));
    assert_eq!(r.rows.len(), 3);
    assert_eq!(p.search().unwrap(), results);

    let files = write_report(p.root()).unwrap();
    let text = fs::read_to_string(&files.accuracy_vs_latency).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header, REPORT_COLUMNS);
    assert_eq!(text.lines().count(), 4);
    let methods: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(methods, ["searched-int8", "baseline-f32", "baseline-int8"]);

    let first = (
        fs::read(&files.accuracy_vs_latency).unwrap(),
        fs::read(&files.bytes_vs_latency).unwrap(),
    );
    write_report(p.root()).unwrap();
    let second = (
        fs::read(&files.accuracy_vs_latency).unwrap(),
        fs::read(&files.bytes_vs_latency).unwrap(),
    );
    assert_eq!(first, second);
}
