use crate::reasoner::Trajectory;
use crate::tagproto::{Origin, SegmentKind};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Fraction of trajectories with at least one code cell; `None` for an
/// empty list.
pub fn code_reasoning_ratio(trajectories: &[Trajectory]) -> Option<f64> {
    if trajectories.is_empty() {
        return None;
    }
    let with_code = trajectories.iter().filter(|t| t.code_cells >= 1).count();
    Some(with_code as f64 / trajectories.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BehaviorCategory {
    Backtracking,
    Verification,
    SubgoalSetting,
    Enumeration,
}

impl fmt::Display for BehaviorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BehaviorCategory::Backtracking => "Backtracking",
            BehaviorCategory::Verification => "Verification",
            BehaviorCategory::SubgoalSetting => "Subgoal Setting",
            BehaviorCategory::Enumeration => "Enumeration",
        })
    }
}

/// One primary behavior per trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BehaviorLabel {
    pub category: BehaviorCategory,
    pub code_inspired: bool,
}

impl fmt::Display for BehaviorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.code_inspired {
            write!(f, "Code-Inspired {}", self.category)
        } else {
            write!(f, "{}", self.category)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotatorError {
    #[error("annotator unavailable: {0}")]
    AnnotatorUnavailable(String),
}

pub trait Annotator: Send + Sync {
    fn annotate(&self, trajectory: &Trajectory) -> Result<BehaviorLabel, AnnotatorError>;
}

pub fn annotate_behavior(trajectory: &Trajectory, annotator: &dyn Annotator) -> Result<BehaviorLabel, AnnotatorError> {
    annotator.annotate(trajectory)
}

/// Deterministic fallback labeller. Counts case-insensitive keyword hits in
/// the model's reasoning; the category with most hits wins, ties go to the
/// earlier row of [`KeywordAnnotator::TABLE`], and no hits means
/// Enumeration. A trajectory is code-inspired when it ran any cell.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeywordAnnotator;

impl KeywordAnnotator {
    pub const TABLE: &'static [(BehaviorCategory, &'static [&'static str])] = &[
        (
            BehaviorCategory::Backtracking,
            &["backtrack", "go back", "reconsider", "that's wrong", "that is wrong", "mistake", "wait,", "instead"],
        ),
        (BehaviorCategory::Verification, &["verify", "double-check", "double check", "confirm", "sanity", "check"]),
        (
            BehaviorCategory::SubgoalSetting,
            &["subgoal", "sub-problem", "subproblem", "break it down", "break down", "first,", "step 1", "next,"],
        ),
        (
            BehaviorCategory::Enumeration,
            &["enumerate", "try all", "each case", "all cases", "brute force", "list all", "every possible"],
        ),
    ];
}

fn hits(text: &str, needle: &str) -> usize {
    text.matches(needle).count()
}

impl Annotator for KeywordAnnotator {
    fn annotate(&self, trajectory: &Trajectory) -> Result<BehaviorLabel, AnnotatorError> {
        let reasoning: String = trajectory
            .transcript
            .segments()
            .iter()
            .filter(|s| s.kind == SegmentKind::Reasoning && s.origin == Origin::Model)
            .map(|s| s.text.to_lowercase())
            .collect::<Vec<_>>()
            .join("\n");
        let mut best = (0, BehaviorCategory::Enumeration);
        for (category, words) in Self::TABLE {
            let n: usize = words.iter().map(|w| hits(&reasoning, w)).sum();
            if n > best.0 {
                best = (n, *category);
            }
        }
        Ok(BehaviorLabel { category: best.1, code_inspired: trajectory.code_cells >= 1 })
    }
}

/// Placeholder for labelling with an external judge model. The integration
/// is not part of this crate, so every call reports unavailability.
#[derive(Debug, Clone, Default)]
pub struct ExternalAnnotator {
    pub endpoint: Option<String>,
}

impl Annotator for ExternalAnnotator {
    fn annotate(&self, _trajectory: &Trajectory) -> Result<BehaviorLabel, AnnotatorError> {
        let why = match &self.endpoint {
            Some(e) => format!("no judge-model client for {e}"),
            None => "no judge-model endpoint configured".to_string(),
        };
        Err(AnnotatorError::AnnotatorUnavailable(why))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoner::TrajectoryStatus;
    use crate::tagproto::{Phase, Segment, Transcript};

    fn traj(segments: Vec<Segment>) -> Trajectory {
        let transcript = Transcript::from_parts(segments, Phase::Thinking).unwrap();
        Trajectory {
            code_cells: transcript.code_cells(),
            transcript,
            answer: None,
            status: TrajectoryStatus::TurnLimit,
            turns_used: 1,
            token_logprobs: None,
            detail: None,
        }
    }

    #[test]
    fn ratio_counts_trajectories_with_cells() {
        let cells = |n: usize| {
            let mut segs = vec![Segment::reasoning("r")];
            for _ in 0..n {
                segs.push(Segment::code("x=1"));
            }
            traj(segs)
        };
        let ts = [cells(2), cells(0), cells(1), cells(0)];
        assert_eq!(code_reasoning_ratio(&ts), Some(0.5));
        assert_eq!(code_reasoning_ratio(&[cells(0), cells(0)]), Some(0.0));
        assert_eq!(code_reasoning_ratio(&[]), None);
    }

    #[test]
    fn keyword_fallback() {
        let a = KeywordAnnotator;
        let t =
            traj(vec![Segment::reasoning("Let me verify this."), Segment::code("print(1)"), Segment::output("1\n")]);
        assert_eq!(
            a.annotate(&t).unwrap(),
            BehaviorLabel { category: BehaviorCategory::Verification, code_inspired: true }
        );
        let t = traj(vec![Segment::prompt("verify me"), Segment::reasoning("ok")]);
        assert_eq!(
            a.annotate(&t).unwrap(),
            BehaviorLabel { category: BehaviorCategory::Enumeration, code_inspired: false }
        );
        let t = traj(vec![]);
        assert_eq!(a.annotate(&t).unwrap().category, BehaviorCategory::Enumeration);
    }

    #[test]
    fn external_is_unavailable() {
        let t = traj(vec![]);
        assert!(matches!(
            annotate_behavior(&t, &ExternalAnnotator::default()),
            Err(AnnotatorError::AnnotatorUnavailable(_))
        ));
    }
}
