//! Closed-loop simulation, metrics, benchmark aggregation and dataset
//! generation.

pub mod bench;
pub mod dataset;
pub mod metrics;
pub mod sim;

pub use bench::{run_benchmark, BenchConfig, BenchReport, TrialRow};
pub use dataset::{generate_dataset, DatasetConfig};
pub use metrics::{compute_metrics, Metrics};
pub use sim::{simulate_trial, ExecutedSample, Method, Outcome, StepRecord, TrialConfig, TrialLog};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("infeasible start/goal: {0}")]
    InfeasibleStartGoal(String),
    #[error(transparent)]
    World(#[from] crate::world::WorldError),
    #[error(transparent)]
    Plan(#[from] crate::planner::PlanError),
    #[error(transparent)]
    Micronet(#[from] crate::micronet::MicronetError),
    #[error("a network checkpoint is required for method {0}")]
    MissingNetwork(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Deterministic seed mixing (splitmix64 finalizer). Trial and stream
/// seeds derive from a base seed so that parallel and serial execution see
/// identical randomness.
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
