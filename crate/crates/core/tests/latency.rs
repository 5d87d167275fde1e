use std::cell::Cell;

use proptest::prelude::*;
use speedlimit_core::latency::{
    benchmark, collect_dataset, evaluate_mape, fit_latency_regression, fit_ols, mape, read_dataset,
    train_latency_predictor, BenchProtocol, CollectOptions, DatasetWriter, Executable,
    LatencyModel, LatencyPredictor, LatencySample, PredictorConfig, RunTimes, PREDICTION_FLOOR_MS,
};
use speedlimit_core::search::SearchSpace;
use speedlimit_core::transformer::{Architecture, ModelDims};
use speedlimit_core::Error;

struct Counting {
    calls: Cell<usize>,
}

impl Executable for Counting {
    fn dims(&self) -> ModelDims {
        ModelDims::new(2)
    }

    fn run(&self, tokens: &[u32]) -> speedlimit_core::Result<()> {
        assert_eq!(tokens.len(), 128);
        self.calls.set(self.calls.get() + 1);
        std::thread::sleep(std::time::Duration::from_micros(200));
        Ok(())
    }
}

#[test]
fn benchmark_runs_warmup_then_averages_timed_runs() {
    let model = Counting {
        calls: Cell::new(0),
    };
    let protocol = BenchProtocol::default();
    let m = benchmark(&model, &protocol).unwrap();
    assert_eq!(model.calls.get(), 5);
    assert_eq!(m.runs_ms.len(), 4);
    let mean = m.runs_ms.iter().sum::<f64>() / 4.0;
    assert_eq!(m.mean_ms, mean);
    assert!(m.runs_ms.iter().all(|&t| t >= 0.2));
    assert!(m.warning.is_none());

    let bad = BenchProtocol {
        timed_runs: 0,
        ..protocol
    };
    assert!(matches!(benchmark(&model, &bad), Err(Error::Config(_))));
}

#[test]
fn profiling_rounds_pool_timed_runs() {
    let archs = [Architecture::new(1, 12, 8), Architecture::new(1, 24, 16)];
    let mut opts = CollectOptions {
        protocol: BenchProtocol {
            timed_runs: 2,
            seq_len: 8,
            ..BenchProtocol::default()
        },
        include_f32: true,
        dims: ModelDims::new(2),
        weight_seed: 1,
        rounds: 3,
    };
    let mut sunk = Vec::new();
    let out = collect_dataset(&archs, &opts, |s| {
        sunk.push(s.arch);
        Ok(())
    })
    .unwrap();
    assert_eq!(sunk, archs);
    for s in &out {
        assert_eq!(s.run_times.int8.len(), 6);
        assert_eq!(s.run_times.f32.len(), 6);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((s.latency_int8_ms - mean(&s.run_times.int8)).abs() <= 1e-12);
        assert!((s.latency_f32_ms.unwrap() - mean(&s.run_times.f32)).abs() <= 1e-12);
    }
    opts.rounds = 0;
    assert!(collect_dataset(&archs, &opts, |_| Ok(())).is_err());
}

#[test]
fn mape_hand_cases() {
    assert!((mape(&[110.0, 90.0], &[100.0, 100.0]).unwrap() - 10.0).abs() < 1e-12);
    assert!((mape(&[3.0, 1.0], &[2.0, 4.0]).unwrap() - 62.5).abs() < 1e-12);
    assert_eq!(mape(&[5.0, 7.0], &[0.0, 7.0]).unwrap(), 0.0);
    assert!(mape(&[1.0], &[0.0]).is_err());
    assert!(matches!(mape(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
}

proptest! {
    #[test]
    fn ols_recovers_exact_lines(
        slope in -50.0f64..50.0,
        intercept in -50.0f64..50.0,
        xs in prop::collection::vec(0.0f64..100.0, 3..40),
    ) {
        prop_assume!(xs.iter().any(|&x| (x - xs[0]).abs() > 1e-3));
        let ys: Vec<f64> = xs.iter().map(|x| slope * x + intercept).collect();
        let fit = fit_ols(&xs, &ys).unwrap();
        prop_assert!((fit.slope - slope).abs() <= 1e-9 * slope.abs().max(1.0));
        prop_assert!((fit.intercept - intercept).abs() <= 1e-9 * intercept.abs().max(1.0) * 100.0);
    }

    #[test]
    fn ols_residuals_are_orthogonal_to_the_design(
        pts in prop::collection::vec((0.0f64..10.0, -10.0f64..10.0), 3..40),
    ) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        prop_assume!(xs.iter().any(|&x| (x - xs[0]).abs() > 1e-2));
        let fit = fit_ols(&xs, &ys).unwrap();
        let res: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - fit.slope * x - fit.intercept).collect();
        let scale = ys.iter().map(|y| y.abs()).sum::<f64>().max(1.0) * 10.0;
        prop_assert!(res.iter().sum::<f64>().abs() < 1e-9 * scale);
        prop_assert!(res.iter().zip(&xs).map(|(r, x)| r * x).sum::<f64>().abs() < 1e-9 * scale * 10.0);
        prop_assert!(fit.r_squared <= 1.0 + 1e-12);
    }
}

#[test]
fn ols_rejects_constant_regressor() {
    assert!(matches!(
        fit_ols(&[2.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]),
        Err(Error::Regression(_))
    ));
}

fn sample(arch: Architecture, int8: f64, f32: Option<f64>) -> LatencySample {
    LatencySample {
        arch,
        latency_int8_ms: int8,
        latency_f32_ms: f32,
        run_times: RunTimes {
            int8: vec![int8; 4],
            ..RunTimes::default()
        },
        host: "test host".into(),
    }
}

fn synthetic(n: usize) -> Vec<LatencySample> {
    let all = SearchSpace::default().enumerate();
    (0..n)
        .map(|i| {
            let a = all[(i * 104_729) % all.len()];
            let ms = 0.3 * a.e as f64 + 0.004 * a.h as f64 + 0.002 * a.f as f64 + 0.1;
            sample(a, ms, Some(1.75 * ms - 0.2))
        })
        .collect()
}

#[test]
fn regression_report_on_exact_data() {
    let r = fit_latency_regression(&synthetic(30)).unwrap();
    assert!((r.slope - 1.75).abs() < 1e-9);
    assert!((r.intercept + 0.2).abs() < 1e-9);
    assert_eq!(r.n, 30);
    let text = r.to_string();
    for key in ["slope:", "intercept:", "r_squared:", "n: 30"] {
        assert!(text.contains(key), "{text}");
    }
}

#[test]
fn dataset_csv_appends_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("latency.csv");
    assert!(matches!(
        read_dataset(&path),
        Err(Error::MissingArtifact { .. })
    ));
    let data = synthetic(6);
    {
        let mut w = DatasetWriter::append(&path).unwrap();
        for s in &data[..3] {
            w.write(s).unwrap();
        }
    }
    let mut w = DatasetWriter::append(&path).unwrap();
    let mut last = data[3].clone();
    last.latency_f32_ms = None;
    last.run_times.warnings.push("coarse timer".into());
    w.write(&last).unwrap();
    drop(w);
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.len(), 4);
    assert_eq!(back[..3], data[..3]);
    assert_eq!(back[3], last);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.matches("latency_int8_ms").count(), 1);
}

fn quick_config(seed: u64) -> PredictorConfig {
    PredictorConfig {
        hidden_width: 32,
        steps: 300,
        lr: 1e-3,
        seed,
        ..PredictorConfig::default()
    }
}

#[test]
fn predictor_training_is_deterministic_and_reloads_exactly() {
    let data = synthetic(60);
    let a = train_latency_predictor(&data, &quick_config(5)).unwrap();
    let b = train_latency_predictor(&data, &quick_config(5)).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.predictor, b.predictor);
    assert!(a.losses.last().unwrap() < &a.losses[0]);
    let c = train_latency_predictor(&data, &quick_config(6)).unwrap();
    assert_ne!(a.predictor.fingerprint(), c.predictor.fingerprint());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("predictor.bin");
    a.predictor.save(&path).unwrap();
    let back = LatencyPredictor::load(&path).unwrap();
    assert_eq!(back.fingerprint(), a.predictor.fingerprint());
    let archs = SearchSpace::default().enumerate();
    let batched = back.predict_many(&archs);
    for (arch, p) in archs.iter().zip(&batched).step_by(97) {
        assert_eq!(back.predict_ms(arch), a.predictor.predict_ms(arch));
        assert_eq!(*p, a.predictor.predict_ms(arch));
        assert!(*p >= PREDICTION_FLOOR_MS);
    }
    assert!(evaluate_mape(&back, &data).unwrap().is_finite());
}

#[test]
fn predictor_flags_extrapolation_and_rejects_flat_labels() {
    let data: Vec<_> = synthetic(40)
        .into_iter()
        .filter(|s| s.arch.e <= 3)
        .collect();
    let p = train_latency_predictor(&data, &quick_config(1))
        .unwrap()
        .predictor;
    assert!(p.predict(&Architecture::new(5, 240, 512)).extrapolated);
    assert!(!p.predict(&data[0].arch).extrapolated);

    let flat: Vec<_> = data.iter().map(|s| sample(s.arch, 2.0, None)).collect();
    assert!(matches!(
        train_latency_predictor(&flat, &quick_config(1)),
        Err(Error::Training(_))
    ));
}
