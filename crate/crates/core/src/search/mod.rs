mod evolution;
mod narrow;
mod space;

pub use evolution::{
    evolve_generation, mutate, run_search, Candidate, Evaluation, LogRecord, SearchConfig,
    SearchLog, DUPLICATE_ATTEMPTS, MUTATION_ATTEMPTS,
};
pub use narrow::{narrow_space, NarrowedSpace};
pub use space::{enumerate_space, grid, SearchSpace};
