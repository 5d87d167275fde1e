use std::fs::{File, OpenOptions};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transformer::{quantize_model, Architecture, ModelDims, ModelWeights};

use super::bench::{benchmark, host_fingerprint, BenchProtocol};

/// Column order of the latency CSV.
pub const CSV_HEADER: [&str; 7] = [
    "e",
    "h",
    "f",
    "latency_int8_ms",
    "latency_f32_ms",
    "run_times_json",
    "host",
];

/// Per-run timings kept alongside the means.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTimes {
    pub int8: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub f32: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencySample {
    pub arch: Architecture,
    pub latency_int8_ms: f64,
    pub latency_f32_ms: Option<f64>,
    pub run_times: RunTimes,
    pub host: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    e: usize,
    h: usize,
    f: usize,
    latency_int8_ms: f64,
    latency_f32_ms: Option<f64>,
    run_times_json: String,
    host: String,
}

impl LatencySample {
    fn to_row(&self) -> Result<Row> {
        Ok(Row {
            e: self.arch.e,
            h: self.arch.h,
            f: self.arch.f,
            latency_int8_ms: self.latency_int8_ms,
            latency_f32_ms: self.latency_f32_ms,
            run_times_json: serde_json::to_string(&self.run_times)?,
            host: self.host.clone(),
        })
    }

    fn from_row(r: Row) -> Result<Self> {
        let arch = Architecture::new(r.e, r.h, r.f);
        if !(r.latency_int8_ms > 0.0) || r.latency_f32_ms.is_some_and(|v| !(v > 0.0)) {
            return Err(Error::Input(format!("non-positive latency for {arch}")));
        }
        Ok(Self {
            arch,
            latency_int8_ms: r.latency_int8_ms,
            latency_f32_ms: r.latency_f32_ms,
            run_times: serde_json::from_str(&r.run_times_json)?,
            host: r.host,
        })
    }
}

/// Appends samples to a latency CSV, writing the header for a new file.
pub struct DatasetWriter {
    inner: csv::Writer<File>,
}

impl DatasetWriter {
    pub fn append(path: &Path) -> Result<Self> {
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(file);
        if fresh {
            inner.write_record(CSV_HEADER)?;
            inner.flush()?;
        }
        Ok(Self { inner })
    }

    pub fn write(&mut self, sample: &LatencySample) -> Result<()> {
        self.inner.serialize(sample.to_row()?)?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Reads a latency CSV written by [`DatasetWriter`].
pub fn read_dataset(path: &Path) -> Result<Vec<LatencySample>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            what: "latency dataset (run `speedlimit profile` first)".into(),
        },
        _ => Error::Io(e),
    })?;
    let mut reader = csv::Reader::from_reader(file);
    if reader.headers()?.iter().ne(CSV_HEADER) {
        return Err(Error::Input(format!(
            "{} does not have the latency dataset header {}",
            path.display(),
            CSV_HEADER.join(",")
        )));
    }
    reader
        .deserialize::<Row>()
        .map(|r| LatencySample::from_row(r?))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectOptions {
    pub protocol: BenchProtocol,
    pub include_f32: bool,
    pub dims: ModelDims,
    /// Seed of the random weights each benchmarked model is built with.
    pub weight_seed: u64,
    /// Passes over the architecture list. A sample's latency is the mean of
    /// its timed runs over all passes.
    pub rounds: usize,
}

/// Measures one architecture.
pub fn measure_arch(
    arch: Architecture,
    opts: &CollectOptions,
    host: &str,
) -> Result<LatencySample> {
    let model = ModelWeights::<f32>::instantiate(arch, opts.dims, opts.weight_seed)?;
    let q = quantize_model(&model);
    let int8 = benchmark(&q, &opts.protocol)?;
    let mut run_times = RunTimes {
        int8: int8.runs_ms,
        ..RunTimes::default()
    };
    run_times.warnings.extend(int8.warning);
    let latency_f32_ms = if opts.include_f32 {
        let m = benchmark(&model, &opts.protocol)?;
        run_times.f32 = m.runs_ms;
        run_times.warnings.extend(m.warning);
        Some(m.mean_ms)
    } else {
        None
    };
    Ok(LatencySample {
        arch,
        latency_int8_ms: int8.mean_ms,
        latency_f32_ms,
        run_times,
        host: host.to_string(),
    })
}

/// Benchmarks every architecture in order, `opts.rounds` times over. Each
/// sample is handed to `sink` once its last round is done; failures are logged
/// and skipped.
pub fn collect_dataset(
    archs: &[Architecture],
    opts: &CollectOptions,
    mut sink: impl FnMut(&LatencySample) -> Result<()>,
) -> Result<Vec<LatencySample>> {
    if archs.is_empty() {
        return Err(Error::Input("no architectures to profile".into()));
    }
    if opts.rounds == 0 {
        return Err(Error::Input("profiling needs at least one round".into()));
    }
    let host = host_fingerprint();
    let rounds = opts.rounds;
    let mut partial: Vec<Option<LatencySample>> = vec![None; archs.len()];
    let mut failed = vec![false; archs.len()];
    let mut out = Vec::with_capacity(archs.len());
    for round in 0..rounds {
        for (i, &arch) in archs.iter().enumerate() {
            if failed[i] {
                continue;
            }
            let sample = match measure_arch(arch, opts, &host) {
                Ok(s) => match partial[i].take() {
                    Some(prev) => merge(prev, s),
                    None => s,
                },
                Err(e) => {
                    log::warn!("skipping {arch}: {e}");
                    failed[i] = true;
                    continue;
                }
            };
            if round + 1 < rounds {
                partial[i] = Some(sample);
                continue;
            }
            log::info!(
                "[{}/{}] {arch}: int8 {:.3} ms{}",
                i + 1,
                archs.len(),
                sample.latency_int8_ms,
                sample
                    .latency_f32_ms
                    .map(|v| format!(", fp32 {v:.3} ms"))
                    .unwrap_or_default()
            );
            sink(&sample)?;
            out.push(sample);
        }
        if round + 1 < rounds {
            log::info!("profiling round {}/{rounds} done", round + 1);
        }
    }
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn merge(mut a: LatencySample, b: LatencySample) -> LatencySample {
    a.run_times.int8.extend(b.run_times.int8);
    a.run_times.f32.extend(b.run_times.f32);
    a.run_times.warnings.extend(b.run_times.warnings);
    a.latency_int8_ms = mean(&a.run_times.int8);
    a.latency_f32_ms = a.latency_f32_ms.map(|_| mean(&a.run_times.f32));
    a
}
