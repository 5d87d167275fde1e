//! Synthetic sequence classification data.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::training::Example;

/// Token placed at position 0 of every sequence; the pooler reads it.
pub const CLS_TOKEN: u32 = 0;

pub const PATTERN_CONTAINMENT: &str = "pattern-containment";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub generator: String,
    pub vocab: usize,
    /// Tokens per sequence including the leading CLS token.
    pub seq_len: usize,
    pub classes: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            generator: PATTERN_CONTAINMENT.into(),
            vocab: 64,
            seq_len: 16,
            classes: 2,
            train: 4096,
            dev: 512,
            test: 1024,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.generator != PATTERN_CONTAINMENT {
            return Err(Error::Config(format!(
                "unknown task generator {:?}; available: {PATTERN_CONTAINMENT}",
                self.generator
            )));
        }
        if self.classes != 2 {
            return Err(Error::Config(format!(
                "{PATTERN_CONTAINMENT} has 2 classes, got {}",
                self.classes
            )));
        }
        if self.vocab < 8 {
            return Err(Error::Config(format!(
                "vocabulary of {} is too small",
                self.vocab
            )));
        }
        if self.seq_len < 4 {
            return Err(Error::Config(format!(
                "sequence length {} cannot hold the pattern",
                self.seq_len
            )));
        }
        if self.train == 0 || self.dev == 0 || self.test == 0 {
            return Err(Error::Config(
                "every split needs at least one example".into(),
            ));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    /// The hidden ordered pattern.
    pub pattern: [u32; 3],
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

/// Label 1 iff the hidden 3-token pattern occurs contiguously and in order.
///
/// Both classes contain the three pattern tokens exactly once, adjacent;
/// negatives hold them in one of the five other orders. Filler tokens never
/// use the pattern tokens, so token counts carry no signal. Splits are
/// disjoint and each has alternating labels before shuffling.
pub fn generate_task(spec: &TaskSpec, seed: u64) -> Result<TaskData> {
    spec.validate()?;
    let mut rng = seed::indexed_rng(seed, "task", &[]);
    let mut pool: Vec<u32> = (1..spec.vocab as u32).collect();
    pool.shuffle(&mut rng);
    let pattern = [pool[0], pool[1], pool[2]];
    let filler = &pool[3..];
    let wrong_orders: Vec<[u32; 3]> = [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]]
        .iter()
        .map(|p| p.map(|i| pattern[i]))
        .collect();

    let body = spec.seq_len - 1;
    let mut seen = HashSet::with_capacity(spec.total());
    let mut make_split = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Result<Vec<Example>> {
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while out.len() < n {
            attempts += 1;
            if attempts > 100 * n + 1000 {
                return Err(Error::Config(format!(
                    "cannot draw {n} distinct examples from this vocabulary and length"
                )));
            }
            let label = (out.len() % 2) as u32;
            let triple = if label == 1 {
                pattern
            } else {
                *wrong_orders.choose(rng).expect("five orders")
            };
            let at = rng.random_range(0..=body - 3);
            let mut tokens = Vec::with_capacity(spec.seq_len);
            tokens.push(CLS_TOKEN);
            for i in 0..body {
                if (at..at + 3).contains(&i) {
                    tokens.push(triple[i - at]);
                } else {
                    tokens.push(*filler.choose(rng).expect("nonempty filler"));
                }
            }
            let ex = Example { tokens, label };
            if seen.insert(ex.tokens.clone()) {
                out.push(ex);
            }
        }
        out.shuffle(rng);
        Ok(out)
    };
    let train = make_split(spec.train, &mut rng)?;
    let dev = make_split(spec.dev, &mut rng)?;
    let test = make_split(spec.test, &mut rng)?;
    Ok(TaskData {
        pattern,
        train,
        dev,
        test,
    })
}

/// Whether `tokens` contains `pattern` contiguously.
pub fn contains_pattern(tokens: &[u32], pattern: &[u32; 3]) -> bool {
    tokens.windows(3).any(|w| w == pattern)
}
