//! Engine for interleaved reasoning-critique traces: parsing, exact answer
//! verification, reward and group-relative advantage computation, a clipped
//! policy objective over supplied log-probabilities, SFT data synthesis,
//! critique-guided test-time selection, and a desk-scale training loop on a
//! synthetic arithmetic environment with an exactly differentiable policy.
//!
//! The numeric core is generic over the scalar type ([`Scalar`], `f32` or
//! `f64`); answer equivalence uses exact integer/rational arithmetic. The
//! `*64` aliases below pin the default double-precision engine used by the
//! CLI and the toy trainer.

pub mod advantage;
pub mod eval;
pub mod grpo;
pub mod pipeline;
pub mod records;
pub mod rewards;
pub mod scalar;
pub mod toy;
pub mod trajectory;
pub mod verifier;

pub use scalar::Scalar;
pub use trajectory::{
    parse_str, parse_trace, ParsedTrajectory, TraceMode, TraceText, TrajectoryError,
};
pub use verifier::{answers_equal, canonicalize, CanonicalAnswer, VerifierError};

/// Double-precision aliases for the generic core types.
pub type RewardBundle64 = rewards::RewardBundle<f64>;
pub type GroupBatch64 = advantage::GroupBatch<f64>;
pub type GroupMember64 = advantage::GroupMember<f64>;
pub type AdvantageWeights64 = advantage::AdvantageWeights<f64>;
pub type AdvantageField64 = advantage::AdvantageField<f64>;
pub type PolicyLogprobs64 = grpo::PolicyLogprobs<f64>;
pub type ClipConfig64 = grpo::ClipConfig<f64>;
