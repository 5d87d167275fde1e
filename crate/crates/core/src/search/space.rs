use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transformer::{Architecture, HEAD_COUNT};

/// Candidate values for each coordinate of `(e, h, f)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub e: Vec<usize>,
    pub h: Vec<usize>,
    pub f: Vec<usize>,
}

/// `start, start + step, ..., <= stop`.
pub fn grid(start: usize, stop: usize, step: usize) -> Vec<usize> {
    (start..=stop).step_by(step.max(1)).collect()
}

impl Default for SearchSpace {
    /// e in 1..=5, h in 120..=528 step 12, f in 128..=1016 step 12.
    fn default() -> Self {
        Self {
            e: grid(1, 5, 1),
            h: grid(120, 528, 12),
            f: grid(128, 1016, 12),
        }
    }
}

impl SearchSpace {
    pub fn new(e: Vec<usize>, h: Vec<usize>, f: Vec<usize>) -> Result<Self> {
        let s = Self { e, h, f };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, values) in [("e", &self.e), ("h", &self.h), ("f", &self.f)] {
            if values.is_empty() {
                return Err(Error::Config(format!("search space list {name} is empty")));
            }
            if values.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!(
                    "search space list {name} must be strictly increasing"
                )));
            }
            if values[0] == 0 {
                return Err(Error::Config(format!(
                    "search space list {name} contains 0"
                )));
            }
        }
        if let Some(bad) = self.h.iter().find(|&&h| h % HEAD_COUNT != 0) {
            return Err(Error::Config(format!(
                "hidden width {bad} is not divisible by the head count {HEAD_COUNT}"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.e.len() * self.h.len() * self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian grid in lexicographic `(e, h, f)` order.
    pub fn enumerate(&self) -> Vec<Architecture> {
        let mut out = Vec::with_capacity(self.len());
        for &e in &self.e {
            for &h in &self.h {
                for &f in &self.f {
                    out.push(Architecture::new(e, h, f));
                }
            }
        }
        out
    }

    /// Grid indices of `arch`, if it is a member.
    pub fn position(&self, arch: &Architecture) -> Option<[usize; 3]> {
        Some([
            self.e.binary_search(&arch.e).ok()?,
            self.h.binary_search(&arch.h).ok()?,
            self.f.binary_search(&arch.f).ok()?,
        ])
    }

    pub fn contains(&self, arch: &Architecture) -> bool {
        self.position(arch).is_some()
    }

    pub fn at(&self, idx: [usize; 3]) -> Architecture {
        Architecture::new(self.e[idx[0]], self.h[idx[1]], self.f[idx[2]])
    }

    /// Elementwise maximum, the supermodel shape.
    pub fn max_arch(&self) -> Architecture {
        Architecture::new(
            *self.e.last().unwrap(),
            *self.h.last().unwrap(),
            *self.f.last().unwrap(),
        )
    }

    pub fn min_arch(&self) -> Architecture {
        Architecture::new(self.e[0], self.h[0], self.f[0])
    }

    /// Uniform draw over the grid.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Architecture {
        self.at([
            rng.random_range(0..self.e.len()),
            rng.random_range(0..self.h.len()),
            rng.random_range(0..self.f.len()),
        ])
    }
}

/// Every architecture of `space` in lexicographic order.
pub fn enumerate_space(space: &SearchSpace) -> Vec<Architecture> {
    space.enumerate()
}
