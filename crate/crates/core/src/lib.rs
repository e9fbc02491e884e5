//! Runtime for interleaved natural-language and code reasoning.
//!
//! The crate is organised around the reasoning loop:
//!
//! - [`tagproto`]: the tag wire format of the reasoning stream.
//! - [`sandbox`]: notebook-style sessions with persistent state.
//! - [`policy`]: the generation contract (scripted and remote).
//! - [`reasoner`]: the generate / execute / feed back loop.
//! - [`judge`]: rule-based ±1 rewards for code and math answers.
//! - [`rlcore`]: group advantages, dynamic filtering, the clipped objective,
//!   loss masks and supervised trace construction.
//! - [`harness`]: datasets, evaluation, rollouts, metrics and persistence.

pub mod harness;
pub mod judge;
pub mod policy;
pub mod reasoner;
pub mod rlcore;
pub mod sandbox;
pub mod tagproto;

pub use harness::{
    load_dataset, rollout_group, run_eval, EvalOptions, EvalReport, Problem, ProblemKind, RolloutOptions,
};
pub use judge::{judge_code, judge_math, CaseOutcome, CodeTests, JudgeError, TestCase, Verdict};
pub use policy::{ConversationKey, GenerationRequest, GenerationResult, Policy, PolicyError, StopReason};
pub use reasoner::{Reasoner, ReasonerLimits, Trajectory, TrajectoryStatus};
pub use rlcore::{
    build_loss_mask, build_sft_trace, compute_advantages, dapo_objective, dynamic_filter, DapoConfig, LossMask,
    RlError, RolloutGroup, SftStage, SftWorkflowStep,
};
pub use sandbox::{
    ErrorKind, ExecutionResult, ExecutorBinding, SandboxConfig, SandboxError, SandboxManager, SessionId,
};
pub use tagproto::{Origin, Phase, Segment, SegmentKind, TagSet, Transcript};
