//! Evolutionary search over a narrowed architecture space.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::LatencyModel;
use crate::seed;
use crate::transformer::Architecture;

use super::narrow::NarrowedSpace;
use super::space::SearchSpace;

/// Re-draws allowed before a mutation falls back to its input.
pub const MUTATION_ATTEMPTS: usize = 32;
/// Re-draws allowed before a duplicate child is accepted.
pub const DUPLICATE_ATTEMPTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Generations `T`.
    pub generations: usize,
    /// Population size `S`.
    pub population: usize,
    /// Probability `p_m` that a child is a mutated parent.
    pub mutation_prob: f64,
    /// Per-coordinate move probability inside one mutation.
    pub mutation_dim_prob: f64,
    /// Fine-tuning epochs the evaluator gives each candidate.
    pub finetune_epochs: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            generations: 4,
            population: 16,
            mutation_prob: 0.7,
            mutation_dim_prob: 0.5,
            finetune_epochs: 2,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.generations == 0 || self.population == 0 {
            return Err(Error::Config(
                "generations and population must be at least 1".into(),
            ));
        }
        for (name, p) in [
            ("mutation_prob", self.mutation_prob),
            ("mutation_dim_prob", self.mutation_dim_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Parents kept per generation: the top quarter, at least one.
    pub fn parents(&self) -> usize {
        (self.population / 4).max(1)
    }
}

/// One evaluated architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub arch: Architecture,
    pub accuracy: f64,
    pub predicted_ms: f64,
    pub measured_ms: Option<f64>,
    pub generation: usize,
}

/// What an evaluator reports for one architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub measured_ms: Option<f64>,
}

impl From<f64> for Evaluation {
    fn from(accuracy: f64) -> Self {
        Self {
            accuracy,
            measured_ms: None,
        }
    }
}

/// Line-delimited search log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub generation: usize,
    pub e: usize,
    pub h: usize,
    pub f: usize,
    pub accuracy: f64,
    pub predicted_ms: f64,
    pub measured_ms: Option<f64>,
    pub wall_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl LogRecord {
    pub fn arch(&self) -> Architecture {
        Architecture::new(self.e, self.h, self.f)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchLog {
    pub records: Vec<LogRecord>,
}

impl SearchLog {
    /// Best accuracy seen up to and including each generation.
    pub fn best_so_far(&self) -> Vec<f64> {
        let gens = self
            .records
            .iter()
            .map(|r| r.generation)
            .max()
            .map_or(0, |g| g + 1);
        let mut out = Vec::with_capacity(gens);
        let mut best = f64::NEG_INFINITY;
        for g in 0..gens {
            for r in self.records.iter().filter(|r| r.generation == g) {
                best = best.max(r.accuracy);
            }
            out.push(best);
        }
        out
    }

    /// Best candidate of the final generation alone.
    pub fn best_of_last_generation(&self) -> Option<&LogRecord> {
        let last = self.records.iter().map(|r| r.generation).max()?;
        self.records.iter().filter(|r| r.generation == last).fold(
            None,
            |best: Option<&LogRecord>, r| match best {
                Some(b) if b.accuracy >= r.accuracy => Some(b),
                _ => Some(r),
            },
        )
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }
}

fn step_index(values: &[usize], idx: usize, rng: &mut impl Rng) -> usize {
    match (idx > 0, idx + 1 < values.len()) {
        (true, true) => {
            if rng.random_bool(0.5) {
                idx - 1
            } else {
                idx + 1
            }
        }
        (true, false) => idx - 1,
        (false, true) => idx + 1,
        (false, false) => idx,
    }
}

/// Moves each coordinate one grid step with probability `p_dim`, re-drawing
/// until the result is predicted under `constraint_ms`. After
/// [`MUTATION_ATTEMPTS`] failures the input is returned unchanged.
pub fn mutate(
    arch: &Architecture,
    space: &SearchSpace,
    model: &dyn LatencyModel,
    constraint_ms: f64,
    p_dim: f64,
    rng: &mut impl Rng,
) -> Architecture {
    let Some(pos) = space.position(arch) else {
        return *arch;
    };
    let lists = [&space.e, &space.h, &space.f];
    for _ in 0..MUTATION_ATTEMPTS {
        let mut next = pos;
        for (d, list) in lists.iter().enumerate() {
            if rng.random_bool(p_dim) {
                next[d] = step_index(list, pos[d], rng);
            }
        }
        if next == pos {
            return *arch;
        }
        let cand = space.at(next);
        if model.predict_ms(&cand) < constraint_ms {
            return cand;
        }
    }
    *arch
}

/// Children of one generation: top-quartile parents are mutated with
/// probability `p_m`, otherwise a fresh uniform member is drawn. Duplicates
/// within the generation are re-drawn a bounded number of times.
pub fn evolve_generation(
    prev: &[Candidate],
    cfg: &SearchConfig,
    space: &SearchSpace,
    narrowed: &NarrowedSpace,
    model: &dyn LatencyModel,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Architecture>> {
    if prev.is_empty() {
        return Err(Error::Input("cannot evolve an empty generation".into()));
    }
    let mut ranked: Vec<&Candidate> = prev.iter().collect();
    ranked.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
    let parents = &ranked[..cfg.parents().min(ranked.len())];
    let mut children = Vec::with_capacity(cfg.population);
    let mut taken = HashSet::new();
    while children.len() < cfg.population {
        let mut child = None;
        for _ in 0..DUPLICATE_ATTEMPTS {
            let c = if rng.random_bool(cfg.mutation_prob) {
                let parent = parents.choose(rng).expect("nonempty parents");
                mutate(
                    &parent.arch,
                    space,
                    model,
                    narrowed.constraint_ms,
                    cfg.mutation_dim_prob,
                    rng,
                )
            } else {
                *narrowed
                    .members()
                    .choose(rng)
                    .expect("nonempty narrowed space")
            };
            child = Some(c);
            if !taken.contains(&c) {
                break;
            }
        }
        let c = child.expect("at least one attempt");
        taken.insert(c);
        children.push(c);
    }
    Ok(children)
}

/// Higher accuracy wins; equal accuracy goes to the lower predicted latency.
fn beats(a: &Candidate, b: &Candidate) -> bool {
    a.accuracy > b.accuracy || (a.accuracy == b.accuracy && a.predicted_ms < b.predicted_ms)
}

/// Runs `cfg.generations` rounds of evaluate-then-evolve and returns the best
/// candidate ever evaluated with the full log. Repeated architectures reuse
/// their first evaluation; evaluator errors score accuracy 0.
pub fn run_search(
    cfg: &SearchConfig,
    space: &SearchSpace,
    narrowed: &NarrowedSpace,
    model: &dyn LatencyModel,
    mut evaluate: impl FnMut(&Architecture) -> Result<Evaluation>,
    mut on_record: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<(Candidate, SearchLog)> {
    cfg.validate()?;
    if narrowed.is_empty() {
        return Err(Error::EmptyNarrowedSpace {
            constraint_ms: narrowed.constraint_ms,
            fastest_ms: f64::NAN,
        });
    }
    let mut rng = seed::indexed_rng(cfg.seed, "search", &[]);
    let mut population: Vec<Architecture> = narrowed
        .members()
        .choose_multiple(&mut rng, cfg.population.min(narrowed.len()))
        .copied()
        .collect();
    population.shuffle(&mut rng);
    let mut cache: HashMap<Architecture, (Evaluation, Option<String>)> = HashMap::new();
    let mut log = SearchLog::default();
    let mut best: Option<Candidate> = None;
    for generation in 0..cfg.generations {
        let mut evaluated = Vec::with_capacity(population.len());
        for arch in &population {
            let start = Instant::now();
            let (eval, error) = cache
                .entry(*arch)
                .or_insert_with(|| match evaluate(arch) {
                    Ok(e) => (e, None),
                    Err(e) => {
                        log::warn!("evaluation of {arch} failed: {e}");
                        (Evaluation::from(0.0), Some(e.to_string()))
                    }
                })
                .clone();
            let predicted_ms = narrowed
                .predicted_ms(arch)
                .unwrap_or_else(|| model.predict_ms(arch));
            let cand = Candidate {
                arch: *arch,
                accuracy: eval.accuracy,
                predicted_ms,
                measured_ms: eval.measured_ms,
                generation,
            };
            let rec = LogRecord {
                generation,
                e: arch.e,
                h: arch.h,
                f: arch.f,
                accuracy: eval.accuracy,
                predicted_ms,
                measured_ms: eval.measured_ms,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                error,
            };
            on_record(&rec)?;
            log.records.push(rec);
            if best.as_ref().is_none_or(|b| beats(&cand, b)) {
                best = Some(cand.clone());
            }
            evaluated.push(cand);
        }
        if generation + 1 < cfg.generations {
            population = evolve_generation(&evaluated, cfg, space, narrowed, model, &mut rng)?;
        }
    }
    Ok((best.expect("at least one evaluation"), log))
}
