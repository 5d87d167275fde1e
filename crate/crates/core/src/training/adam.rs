use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor2D>,
    v: Vec<Tensor2D>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor2D>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| {
                (
                    Tensor2D::zeros(p.rows(), p.cols()),
                    Tensor2D::zeros(p.rows(), p.cols()),
                )
            })
            .unzip();
        Self {
            config,
            step: 0,
            m,
            v,
        }
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update with learning rate `lr`.
    pub fn update(
        &mut self,
        params: Vec<&mut Tensor2D>,
        grads: Vec<&Tensor2D>,
        lr: f32,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.m) {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(Error::Shape(format!(
                    "parameter {:?} / gradient {:?} vs moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moments as named tensors, for checkpointing.
    pub fn to_tensors(&self) -> Vec<(String, Tensor2D)> {
        let mut out = Vec::with_capacity(2 * self.m.len());
        for (i, m) in self.m.iter().enumerate() {
            out.push((format!("m.{i}"), m.clone()));
        }
        for (i, v) in self.v.iter().enumerate() {
            out.push((format!("v.{i}"), v.clone()));
        }
        out
    }

    pub fn from_tensors(
        config: AdamConfig,
        step: u64,
        tensors: Vec<(String, Tensor2D)>,
    ) -> Result<Self> {
        if !tensors.len().is_multiple_of(2) {
            return Err(Error::Checkpoint(
                "optimizer state needs paired moments".into(),
            ));
        }
        let half = tensors.len() / 2;
        let mut m = Vec::with_capacity(half);
        let mut v = Vec::with_capacity(half);
        for (i, (name, t)) in tensors.into_iter().enumerate() {
            let (want, dst) = if i < half {
                (format!("m.{i}"), &mut m)
            } else {
                (format!("v.{}", i - half), &mut v)
            };
            if name != want {
                return Err(Error::Checkpoint(format!(
                    "optimizer tensor {name}, expected {want}"
                )));
            }
            dst.push(t);
        }
        Ok(Self { config, step, m, v })
    }
}

/// Linear warm-up from 0 to `peak` over the first `ceil(warmup_fraction * total)`
/// steps, then linear decay to 0 at `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearWarmup {
    pub peak: f32,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LinearWarmup {
    pub fn new(peak: f32, warmup_fraction: f64, total_steps: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&warmup_fraction) {
            return Err(Error::Config(format!(
                "warm-up fraction {warmup_fraction} outside [0, 1]"
            )));
        }
        let warmup_steps = (warmup_fraction * total_steps as f64).ceil() as u64;
        Ok(Self {
            peak,
            warmup_steps,
            total_steps,
        })
    }

    pub fn lr(&self, step: u64) -> f32 {
        if step < self.warmup_steps {
            return self.peak * step as f32 / self.warmup_steps as f32;
        }
        let decay = self.total_steps.saturating_sub(self.warmup_steps);
        if decay == 0 {
            return self.peak;
        }
        let left = self.total_steps.saturating_sub(step);
        self.peak * left as f32 / decay as f32
    }
}
