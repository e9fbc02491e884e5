//! Training math over rollout groups.
//!
//! Rewards within a group are standardized into advantages (population
//! standard deviation), groups whose rewards are all equal are filtered
//! out, and the clipped surrogate objective is averaged per group with
//! token-level normalization. Loss masks and supervised traces live in
//! [`mask`] and [`sft`].

pub mod mask;
mod objective;
pub mod sft;

pub use mask::{build_loss_mask, token_mask, LossMask, MaskSpan};
pub use objective::{
    clip_term, clip_term_grad, dapo_objective, dapo_objective_grad, toy_policy_logprob, toy_policy_objective,
};
pub use sft::{build_sft_trace, SftStage, SftWorkflowStep};

use crate::reasoner::Trajectory;
use crate::tagproto::TranscriptError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DapoConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    pub group_size: usize,
}

impl Default for DapoConfig {
    fn default() -> Self {
        Self { eps_low: 0.2, eps_high: 0.28, group_size: 16 }
    }
}

impl DapoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(self.eps_low > 0.0 && self.eps_low < 1.0) {
            return Err(RlError::InvalidConfig(format!("eps_low {} must lie in (0, 1)", self.eps_low)));
        }
        if !(self.eps_high > 0.0 && self.eps_high.is_finite()) {
            return Err(RlError::InvalidConfig(format!("eps_high {} must be positive", self.eps_high)));
        }
        if self.group_size < 2 {
            return Err(RlError::InvalidConfig(format!("group size {} must be at least 2", self.group_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RlError {
    #[error("rewards of group {0:?} have zero spread")]
    DegenerateGroup(String),
    #[error("group {group} sample {sample}: {detail}")]
    PartitionMismatch { group: usize, sample: usize, detail: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("malformed group: {0}")]
    GroupShape(String),
    #[error("code step {step} has no execution result")]
    MissingResult { step: usize },
    #[error("step {step}: finalize must appear exactly once, as the last step")]
    MisplacedFinalize { step: usize },
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

/// G sampled trajectories for one question with their rewards and token
/// counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub question_id: String,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub lengths: Vec<usize>,
}

/// The numeric part of a group, all the objective needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupView<'a> {
    pub rewards: &'a [f64],
    pub lengths: &'a [usize],
}

impl RolloutGroup {
    pub fn new(
        question_id: impl Into<String>,
        trajectories: Vec<Trajectory>,
        rewards: Vec<f64>,
        lengths: Vec<usize>,
    ) -> Result<Self, RlError> {
        let g = Self { question_id: question_id.into(), trajectories, rewards, lengths };
        g.validate()?;
        Ok(g)
    }

    /// Checks the shape invariants, e.g. after deserializing.
    pub fn validate(&self) -> Result<(), RlError> {
        if self.trajectories.len() != self.rewards.len() || self.rewards.len() != self.lengths.len() {
            return Err(RlError::GroupShape(format!(
                "{} trajectories, {} rewards, {} lengths",
                self.trajectories.len(),
                self.rewards.len(),
                self.lengths.len()
            )));
        }
        if self.lengths.contains(&0) {
            return Err(RlError::GroupShape("every trajectory needs at least one token".into()));
        }
        Ok(())
    }

    pub fn view(&self) -> GroupView<'_> {
        GroupView { rewards: &self.rewards, lengths: &self.lengths }
    }

    /// Number of trajectories with reward +1.
    pub fn correct(&self) -> usize {
        correct_count(&self.rewards)
    }
}

fn correct_count(rewards: &[f64]) -> usize {
    rewards.iter().filter(|r| **r > 0.0).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageStats {
    pub mean: f64,
    pub std: f64,
    pub advantages: Vec<f64>,
}

/// Standardizes rewards with the population standard deviation.
pub fn advantages(rewards: &[f64]) -> Result<AdvantageStats, RlError> {
    if rewards.is_empty() {
        return Err(RlError::GroupShape("empty reward list".into()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std == 0.0 || !std.is_finite() {
        return Err(RlError::DegenerateGroup(String::new()));
    }
    let advantages = rewards.iter().map(|r| (r - mean) / std).collect();
    Ok(AdvantageStats { mean, std, advantages })
}

pub fn compute_advantages(group: &RolloutGroup) -> Result<AdvantageStats, RlError> {
    advantages(&group.rewards).map_err(|e| match e {
        RlError::DegenerateGroup(_) => RlError::DegenerateGroup(group.question_id.clone()),
        other => other,
    })
}

/// Keeps groups with at least one correct and one incorrect sample, in
/// order.
pub fn dynamic_filter(groups: Vec<RolloutGroup>) -> Vec<RolloutGroup> {
    groups
        .into_iter()
        .filter(|g| {
            let c = g.correct();
            0 < c && c < g.rewards.len()
        })
        .collect()
}

/// Whether a reward vector would survive [`dynamic_filter`].
pub fn retained(rewards: &[f64]) -> bool {
    let c = correct_count(rewards);
    0 < c && c < rewards.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_group() {
        let a = advantages(&[1.0, 1.0, -1.0, -1.0]).unwrap();
        assert_eq!((a.mean, a.std), (0.0, 1.0));
        assert_eq!(a.advantages, [1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn one_of_four_correct() {
        let a = advantages(&[1.0, -1.0, -1.0, -1.0]).unwrap();
        // hand arithmetic: mean -1/2, variance (9/4 + 3/4) / 4 = 3/4
        assert!((a.mean + 0.5).abs() < 1e-15);
        assert!((a.std - 0.75f64.sqrt()).abs() < 1e-15);
        let s3 = 3f64.sqrt();
        for (got, want) in a.advantages.iter().zip([s3, -1.0 / s3, -1.0 / s3, -1.0 / s3]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_rewards_are_degenerate() {
        assert!(matches!(advantages(&[1.0; 4]), Err(RlError::DegenerateGroup(_))));
    }

    #[test]
    fn filter_keeps_mixed_groups_in_order() {
        let g = |id: &str, r: Vec<f64>| RolloutGroup {
            question_id: id.into(),
            trajectories: Vec::new(),
            lengths: vec![1; r.len()],
            rewards: r,
        };
        let kept = dynamic_filter(vec![
            g("a", vec![1.0, 1.0, -1.0, -1.0]),
            g("b", vec![-1.0; 4]),
            g("c", vec![1.0; 4]),
            g("d", vec![-1.0, 1.0]),
        ]);
        let ids: Vec<_> = kept.iter().map(|g| g.question_id.as_str()).collect();
        assert_eq!(ids, ["a", "d"]);
        assert!(dynamic_filter(Vec::new()).is_empty());
    }

    #[test]
    fn config_bounds() {
        assert!(DapoConfig::default().validate().is_ok());
        // eps_high below eps_low is allowed
        assert!(DapoConfig { eps_low: 0.5, eps_high: 0.1, group_size: 2 }.validate().is_ok());
        assert!(DapoConfig { eps_low: 1.0, ..Default::default() }.validate().is_err());
        assert!(DapoConfig { eps_high: 0.0, ..Default::default() }.validate().is_err());
        assert!(DapoConfig { group_size: 1, ..Default::default() }.validate().is_err());
    }
}
