//! Synthetic reasoning environment with an exactly differentiable policy,
//! closing the full reinforcement loop at desk scale: every reasoning step
//! has verifiable ground truth, every token has an exact probability, and
//! the whole loop is deterministic in the run seed.

mod policy;
mod problem;
mod rollout;
mod train;

pub use policy::{PolicyGradient, PolicySnapshot, SlotId, ToyPolicy, DIGITS};
pub use problem::{gen_problem, gen_problem_in, Op, ToyProblem};
pub use rollout::{
    recompute_current_logprobs, rollout, sample_trajectory, DecisionRef, RolloutGroup,
    SampledTrajectory,
};
pub use train::{
    evaluate_policy, train, EvalReport, IterationMetrics, TrainConfig, TrainOutcome,
};

use crate::advantage::AdvantageError;
use crate::grpo::GrpoError;
use crate::trajectory::TrajectoryError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("parameters diverged (non-finite) at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("step value {value} is outside the single-digit range [1, 9]")]
    ValueOutOfRange { value: i64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

pub(crate) const STREAM_PROBLEM: u64 = 0x70726f62;
pub(crate) const STREAM_ROLLOUT: u64 = 0x726f6c6c;
pub(crate) const STREAM_HELDOUT: u64 = 0x68656c64;
pub(crate) const STREAM_EVAL: u64 = 0x6576616c;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives independent RNG seeds from (base seed, stream tag, indices), so
/// every sampling site is deterministic regardless of evaluation order.
pub(crate) fn derive_seed(base: u64, stream: u64, a: u64, b: u64) -> u64 {
    splitmix(base ^ splitmix(stream ^ splitmix(a ^ splitmix(b))))
}
