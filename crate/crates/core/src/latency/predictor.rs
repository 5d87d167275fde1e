use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{linear, matmul_nt, matmul_tn, Tensor2D};
use crate::seed;
use crate::training::{AdamConfig, AdamState};
use crate::transformer::{Architecture, Container, ContainerKind, Header, ModelDims};

use super::dataset::LatencySample;

/// Anything that maps an architecture to predicted int8 milliseconds.
pub trait LatencyModel {
    fn predict_ms(&self, arch: &Architecture) -> f64;

    fn predict_many(&self, archs: &[Architecture]) -> Vec<f64> {
        archs.iter().map(|a| self.predict_ms(a)).collect()
    }

    /// Stable identifier of the model's parameters.
    fn fingerprint(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub lr: f32,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 3,
            hidden_width: 256,
            lr: 1e-5,
            steps: 5000,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0
            || self.hidden_width == 0
            || self.steps == 0
            || self.batch_size == 0
        {
            return Err(Error::Config(
                "predictor layers, width, steps and batch size must all be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Min-max bounds of the three features and the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub feature_min: [f64; 3],
    pub feature_max: [f64; 3],
    pub target_min: f64,
    pub target_max: f64,
}

impl Normalization {
    fn fit(samples: &[LatencySample]) -> Result<Self> {
        let mut n = Self {
            feature_min: [f64::INFINITY; 3],
            feature_max: [f64::NEG_INFINITY; 3],
            target_min: f64::INFINITY,
            target_max: f64::NEG_INFINITY,
        };
        for s in samples {
            for (i, v) in features(&s.arch).into_iter().enumerate() {
                n.feature_min[i] = n.feature_min[i].min(v);
                n.feature_max[i] = n.feature_max[i].max(v);
            }
            n.target_min = n.target_min.min(s.latency_int8_ms);
            n.target_max = n.target_max.max(s.latency_int8_ms);
        }
        // Stored as f32 in checkpoints; round now so reloads predict identically.
        let r = |v: f64| v as f32 as f64;
        n.feature_min = n.feature_min.map(r);
        n.feature_max = n.feature_max.map(r);
        n.target_min = r(n.target_min);
        n.target_max = r(n.target_max);
        if !(n.target_max > n.target_min) {
            return Err(Error::Training(
                "degenerate latency dataset: all labels are identical".into(),
            ));
        }
        Ok(n)
    }

    /// Features scaled to `[0, 1]` over the training range and whether any
    /// falls outside it.
    pub fn features(&self, arch: &Architecture) -> ([f32; 3], bool) {
        let mut out = [0f32; 3];
        let mut outside = false;
        for (i, v) in features(arch).into_iter().enumerate() {
            let span = self.feature_max[i] - self.feature_min[i];
            let z = if span > 0.0 {
                (v - self.feature_min[i]) / span
            } else {
                0.0
            };
            outside |=
                !(-1e-9..=1.0 + 1e-9).contains(&z) || (span == 0.0 && v != self.feature_min[i]);
            out[i] = z as f32;
        }
        (out, outside)
    }

    fn target(&self, ms: f64) -> f32 {
        ((ms - self.target_min) / (self.target_max - self.target_min)) as f32
    }

    fn untarget(&self, z: f32) -> f64 {
        z as f64 * (self.target_max - self.target_min) + self.target_min
    }

    fn to_tensor(self) -> Tensor2D {
        let mut v: Vec<f32> = Vec::with_capacity(8);
        v.extend(self.feature_min.iter().map(|&x| x as f32));
        v.push(self.target_min as f32);
        v.extend(self.feature_max.iter().map(|&x| x as f32));
        v.push(self.target_max as f32);
        Tensor2D::new(2, 4, v).expect("2x4")
    }

    fn from_tensor(t: &Tensor2D) -> Result<Self> {
        if t.shape() != (2, 4) || !t.is_finite() {
            return Err(Error::Checkpoint(
                "malformed predictor normalization tensor".into(),
            ));
        }
        let g = |r, c| t.get(r, c) as f64;
        Ok(Self {
            feature_min: [g(0, 0), g(0, 1), g(0, 2)],
            feature_max: [g(1, 0), g(1, 1), g(1, 2)],
            target_min: g(0, 3),
            target_max: g(1, 3),
        })
    }
}

fn features(arch: &Architecture) -> [f64; 3] {
    [arch.e as f64, arch.h as f64, arch.f as f64]
}

/// Smallest latency the predictor will report, in ms.
pub const PREDICTION_FLOOR_MS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub ms: f64,
    /// True when the architecture lies outside the training feature range.
    pub extrapolated: bool,
}

/// ReLU MLP from normalized `(e, h, f)` to normalized int8 latency.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyPredictor {
    layers: Vec<(Tensor2D, Tensor2D)>,
    norm: Normalization,
}

impl LatencyPredictor {
    fn init(cfg: &PredictorConfig, norm: Normalization) -> Self {
        let mut rng = seed::indexed_rng(cfg.seed, "predictor-init", &[]);
        let mut widths = vec![3];
        widths.extend(std::iter::repeat_n(cfg.hidden_width, cfg.hidden_layers));
        widths.push(1);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i + 2 < widths.len() { 2.0 } else { 1.0 };
                let std = (gain / w[0] as f64).sqrt();
                let weight = Tensor2D::from_fn(w[0], w[1], |_, _| {
                    (rng.sample::<f64, _>(StandardNormal) * std) as f32
                });
                (weight, Tensor2D::zeros(1, w[1]))
            })
            .collect();
        Self { layers, norm }
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    /// Normalized outputs and the per-layer inputs needed for backprop.
    fn forward(&self, x: &Tensor2D) -> Result<(Tensor2D, Vec<Tensor2D>)> {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let mut z = linear(&h, w, b)?;
            if i < last {
                z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(h);
            h = z;
        }
        Ok((h, acts))
    }

    fn batch_input(&self, archs: &[Architecture]) -> Tensor2D {
        let mut x = Tensor2D::zeros(archs.len(), 3);
        for (r, a) in archs.iter().enumerate() {
            x.row_mut(r).copy_from_slice(&self.norm.features(a).0);
        }
        x
    }

    pub fn predict(&self, arch: &Architecture) -> Prediction {
        let (z, extrapolated) = self.norm.features(arch);
        let x = Tensor2D::new(1, 3, z.to_vec()).expect("1x3");
        let (y, _) = self.forward(&x).expect("predictor shapes are consistent");
        Prediction {
            ms: self.norm.untarget(y.get(0, 0)).max(PREDICTION_FLOOR_MS),
            extrapolated,
        }
    }

    /// Predictions for many architectures at once.
    pub fn predict_batch(&self, archs: &[Architecture]) -> Vec<f64> {
        if archs.is_empty() {
            return Vec::new();
        }
        let (y, _) = self
            .forward(&self.batch_input(archs))
            .expect("predictor shapes are consistent");
        y.data()
            .iter()
            .map(|&z| self.norm.untarget(z).max(PREDICTION_FLOOR_MS))
            .collect()
    }

    pub fn to_container(&self) -> Container {
        let mut tensors = vec![("normalization".to_string(), self.norm.to_tensor())];
        for (i, (w, b)) in self.layers.iter().enumerate() {
            tensors.push((format!("layer{i}.weight"), w.clone()));
            tensors.push((format!("layer{i}.bias"), b.clone()));
        }
        Container {
            header: Header {
                kind: ContainerKind::LatencyPredictor,
                arch: Architecture::new(0, 0, 0),
                dims: ModelDims {
                    vocab: 0,
                    max_len: 0,
                    classes: 0,
                },
                seed: 0,
                extra: self.layers.len() as u64,
            },
            tensors,
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(ContainerKind::LatencyPredictor)?;
        let mut it = c.tensors.iter();
        let (name, norm) = it
            .next()
            .ok_or_else(|| Error::Checkpoint("empty predictor container".into()))?;
        if name != "normalization" {
            return Err(Error::Checkpoint(format!(
                "expected normalization tensor, found {name}"
            )));
        }
        let norm = Normalization::from_tensor(norm)?;
        let rest: Vec<_> = it.collect();
        if rest.is_empty() || rest.len() % 2 != 0 {
            return Err(Error::Checkpoint(
                "predictor layers must come in weight/bias pairs".into(),
            ));
        }
        let mut layers = Vec::with_capacity(rest.len() / 2);
        let mut width = 3;
        for (i, pair) in rest.chunks(2).enumerate() {
            let (wn, w) = pair[0];
            let (bn, b) = pair[1];
            if *wn != format!("layer{i}.weight") || *bn != format!("layer{i}.bias") {
                return Err(Error::Checkpoint(format!(
                    "unexpected predictor tensors {wn}, {bn}"
                )));
            }
            if w.rows() != width || b.shape() != (1, w.cols()) {
                return Err(Error::Checkpoint(format!(
                    "predictor layer {i} has inconsistent shapes"
                )));
            }
            width = w.cols();
            layers.push((w.clone(), b.clone()));
        }
        if width != 1 {
            return Err(Error::Checkpoint(
                "predictor must end in a single output".into(),
            ));
        }
        Ok(Self { layers, norm })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

impl LatencyModel for LatencyPredictor {
    fn predict_ms(&self, arch: &Architecture) -> f64 {
        self.predict(arch).ms
    }

    fn predict_many(&self, archs: &[Architecture]) -> Vec<f64> {
        archs
            .chunks(1024)
            .flat_map(|c| self.predict_batch(c))
            .collect()
    }

    fn fingerprint(&self) -> String {
        let bytes = self
            .to_container()
            .to_bytes()
            .expect("predictor fits the container format");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

/// Fitted predictor and the training loss of every step.
#[derive(Debug, Clone)]
pub struct TrainedPredictor {
    pub predictor: LatencyPredictor,
    pub losses: Vec<f32>,
}

/// Fits the MLP with MSE on normalized targets, Adam and batches resampled
/// with replacement at every step.
pub fn train_latency_predictor(
    samples: &[LatencySample],
    cfg: &PredictorConfig,
) -> Result<TrainedPredictor> {
    cfg.validate()?;
    if samples.len() < 2 {
        return Err(Error::Training(format!(
            "need at least 2 latency samples, got {}",
            samples.len()
        )));
    }
    let norm = Normalization::fit(samples)?;
    let mut p = LatencyPredictor::init(cfg, norm);
    let mut adam = AdamState::new(cfg.adam, p.layers.iter().flat_map(|(w, b)| [w, b]));
    let inputs: Vec<[f32; 3]> = samples.iter().map(|s| norm.features(&s.arch).0).collect();
    let targets: Vec<f32> = samples
        .iter()
        .map(|s| norm.target(s.latency_int8_ms))
        .collect();
    let mut rng = seed::indexed_rng(cfg.seed, "predictor-batches", &[]);
    let bs = cfg.batch_size;
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut x = Tensor2D::zeros(bs, 3);
    let mut y = vec![0f32; bs];
    for _ in 0..cfg.steps {
        for r in 0..bs {
            let i = rng.random_range(0..samples.len());
            x.row_mut(r).copy_from_slice(&inputs[i]);
            y[r] = targets[i];
        }
        let (out, acts) = p.forward(&x)?;
        let mut loss = 0.0;
        let mut d = Tensor2D::zeros(bs, 1);
        for r in 0..bs {
            let e = out.get(r, 0) - y[r];
            loss += e * e;
            d.set(r, 0, 2.0 * e / bs as f32);
        }
        losses.push(loss / bs as f32);
        let mut grads = Vec::with_capacity(2 * p.layers.len());
        for (i, (w, _)) in p.layers.iter().enumerate().rev() {
            let a = &acts[i];
            grads.push((matmul_tn(a, &d)?, d.sum_rows()));
            if i > 0 {
                let mut da = matmul_nt(&d, w)?;
                for (g, &v) in da.data_mut().iter_mut().zip(a.data()) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
                d = da;
            }
        }
        grads.reverse();
        let params = p.layers.iter_mut().flat_map(|(w, b)| [w, b]).collect();
        let grads = grads.iter().flat_map(|(w, b)| [w, b]).collect();
        adam.update(params, grads, cfg.lr)?;
    }
    Ok(TrainedPredictor {
        predictor: p,
        losses,
    })
}
