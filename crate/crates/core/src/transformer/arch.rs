use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attention heads per encoder block. Head width is `h / HEAD_COUNT`.
pub const HEAD_COUNT: usize = 12;
/// Default vocabulary size.
pub const VOCAB_SIZE: usize = 64;
/// Default maximum sequence length (rows of the position embedding).
pub const MAX_SEQ_LEN: usize = 128;

/// A homogeneous-encoder transformer shape: `e` identical blocks of hidden
/// width `h` and feed-forward width `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Architecture {
    pub e: usize,
    pub h: usize,
    pub f: usize,
}

impl Architecture {
    pub const fn new(e: usize, h: usize, f: usize) -> Self {
        Self { e, h, f }
    }

    pub fn validate(&self) -> Result<()> {
        if self.e == 0 {
            return Err(Error::InvalidArchitecture(format!(
                "{self}: need at least one block"
            )));
        }
        if self.h == 0 || !self.h.is_multiple_of(HEAD_COUNT) {
            return Err(Error::InvalidArchitecture(format!(
                "{self}: hidden width must be a positive multiple of {HEAD_COUNT}"
            )));
        }
        if self.f == 0 {
            return Err(Error::InvalidArchitecture(format!(
                "{self}: ffn width must be positive"
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.h / HEAD_COUNT
    }

    /// Elementwise `<=` in every coordinate.
    pub fn fits_within(&self, other: &Architecture) -> bool {
        self.e <= other.e && self.h <= other.h && self.f <= other.f
    }

    /// Parameters held in linear-layer weight matrices (the ones int8 quantization touches).
    pub fn linear_weight_params(&self, classes: usize) -> usize {
        let (e, h, f) = (self.e, self.h, self.f);
        e * (4 * h * h + 2 * h * f) + h * h + h * classes
    }

    /// Total parameter count for a model with the given vocabulary, maximum
    /// length and class count.
    pub fn param_count(&self, dims: &ModelDims) -> usize {
        let (e, h, f) = (self.e, self.h, self.f);
        let embeddings = dims.vocab * h + dims.max_len * h;
        let block = 4 * (h * h + h) + (h * f + f) + (f * h + h) + 4 * h;
        let pooler = h * h + h;
        let head = h * dims.classes + dims.classes;
        embeddings + e * block + pooler + head
    }

    /// Storage bytes with every parameter in fp32.
    pub fn f32_bytes(&self, dims: &ModelDims) -> usize {
        4 * self.param_count(dims)
    }

    /// Storage bytes with linear-layer weights in int8 and everything else in fp32.
    pub fn int8_bytes(&self, dims: &ModelDims) -> usize {
        let linear = self.linear_weight_params(dims.classes);
        linear + 4 * (self.param_count(dims) - linear)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.e, self.h, self.f)
    }
}

/// Shape constants shared by every model in one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub max_len: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn new(classes: usize) -> Self {
        Self {
            vocab: VOCAB_SIZE,
            max_len: MAX_SEQ_LEN,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.max_len == 0 || self.classes == 0 {
            return Err(Error::InvalidArchitecture(format!(
                "vocab, max length and classes must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for ModelDims {
    fn default() -> Self {
        Self::new(2)
    }
}
