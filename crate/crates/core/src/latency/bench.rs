use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::int8_accelerated;
use crate::seed;
use crate::transformer::{ModelDims, ModelWeights, QuantizedModel};

/// Warm-up and timing schedule for one latency measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchProtocol {
    /// Untimed runs before measurement.
    pub warmup_runs: usize,
    /// Timed runs that are averaged.
    pub timed_runs: usize,
    /// Tokens in the single benchmark sentence.
    pub seq_len: usize,
    /// Seed of the fixed random input.
    pub input_seed: u64,
}

impl Default for BenchProtocol {
    fn default() -> Self {
        Self {
            warmup_runs: 1,
            timed_runs: 4,
            seq_len: 128,
            input_seed: 0,
        }
    }
}

impl BenchProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.timed_runs == 0 {
            return Err(Error::Config(
                "benchmark needs at least one timed run".into(),
            ));
        }
        if self.seq_len == 0 {
            return Err(Error::Config(
                "benchmark sequence length must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The fixed benchmark input for a model with `dims`.
    pub fn input(&self, dims: &ModelDims) -> Result<Vec<u32>> {
        if self.seq_len > dims.max_len {
            return Err(Error::Config(format!(
                "benchmark length {} exceeds the model's maximum of {}",
                self.seq_len, dims.max_len
            )));
        }
        let mut rng = seed::indexed_rng(self.input_seed, "bench-input", &[]);
        Ok((0..self.seq_len)
            .map(|_| rng.random_range(0..dims.vocab as u32))
            .collect())
    }
}

/// Mean latency plus the individual timed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub mean_ms: f64,
    pub runs_ms: Vec<f64>,
    /// Set when the timer is too coarse for the measured value.
    pub warning: Option<String>,
}

/// A model that can run one forward pass on a single sentence.
pub trait Executable {
    fn dims(&self) -> ModelDims;
    fn run(&self, tokens: &[u32]) -> Result<()>;
}

impl Executable for ModelWeights<f32> {
    fn dims(&self) -> ModelDims {
        ModelWeights::dims(self)
    }

    fn run(&self, tokens: &[u32]) -> Result<()> {
        std::hint::black_box(self.forward(tokens)?);
        Ok(())
    }
}

impl Executable for QuantizedModel {
    fn dims(&self) -> ModelDims {
        QuantizedModel::dims(self)
    }

    fn run(&self, tokens: &[u32]) -> Result<()> {
        std::hint::black_box(self.forward(tokens)?);
        Ok(())
    }
}

static BENCH_LOCK: Mutex<()> = Mutex::new(());

/// Smallest observable nonzero step of the monotonic clock, in ms.
pub fn timer_resolution_ms() -> f64 {
    static RES: OnceLock<f64> = OnceLock::new();
    *RES.get_or_init(|| {
        let mut best = f64::INFINITY;
        for _ in 0..200 {
            let a = Instant::now();
            let mut b = Instant::now();
            while b == a {
                b = Instant::now();
            }
            best = best.min((b - a).as_secs_f64() * 1e3);
        }
        best
    })
}

/// Times `model` under `protocol`. Measurements are serialized process-wide
/// so concurrent callers never overlap.
pub fn benchmark(model: &dyn Executable, protocol: &BenchProtocol) -> Result<Measurement> {
    protocol.validate()?;
    let input = protocol.input(&model.dims())?;
    let _guard = BENCH_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    for _ in 0..protocol.warmup_runs {
        model.run(&input)?;
    }
    let mut runs_ms = Vec::with_capacity(protocol.timed_runs);
    for _ in 0..protocol.timed_runs {
        let start = Instant::now();
        model.run(&input)?;
        runs_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = runs_ms.iter().sum::<f64>() / runs_ms.len() as f64;
    let res = timer_resolution_ms();
    let warning = (res > 0.01 * mean_ms).then(|| {
        format!("timer resolution {res:.6} ms exceeds 1% of the measured {mean_ms:.6} ms")
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(Measurement {
        mean_ms,
        runs_ms,
        warning,
    })
}

/// CPU model, logical CPU count and active int8 kernel of this machine.
pub fn host_fingerprint() -> String {
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let cpus = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let kernel = if int8_accelerated() {
        "int8-simd"
    } else {
        "int8-scalar"
    };
    format!("{model}; {cpus} logical cpus; {kernel}; single-thread")
}
