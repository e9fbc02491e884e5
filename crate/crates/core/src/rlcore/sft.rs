//! Supervised traces assembled from a staged solving workflow.

use super::RlError;
use crate::reasoner::escape_markers;
use crate::sandbox::ExecutionResult;
use crate::tagproto::{TagSet, Transcript};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SftStage {
    Understand,
    Plan,
    Code,
    Validate,
    Refine,
    Finalize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftWorkflowStep {
    pub stage: SftStage,
    pub content: String,
    pub is_code: bool,
}

impl SftWorkflowStep {
    pub fn text(stage: SftStage, content: impl Into<String>) -> Self {
        Self { stage, content: content.into(), is_code: false }
    }

    pub fn code(stage: SftStage, content: impl Into<String>) -> Self {
        Self { stage, content: content.into(), is_code: true }
    }
}

/// Builds an answered transcript. `results[k]` is the execution of the
/// k-th code step; its feedback becomes that cell's output block. Adjacent
/// reasoning steps are joined with a newline. The Finalize step's content
/// is the answer.
pub fn build_sft_trace(
    prompt: &str,
    steps: &[SftWorkflowStep],
    results: &[ExecutionResult],
    tags: &TagSet,
) -> Result<Transcript, RlError> {
    let fin = steps.iter().position(|s| s.stage == SftStage::Finalize);
    match fin {
        Some(i) if i + 1 == steps.len() => {}
        Some(i) => return Err(RlError::MisplacedFinalize { step: i }),
        None => return Err(RlError::MisplacedFinalize { step: steps.len() }),
    }
    let mut t = Transcript::with_prompt(prompt);
    let mut cells = 0;
    let mut after_text = false;
    for (i, step) in steps[..steps.len() - 1].iter().enumerate() {
        if step.is_code {
            let r = results.get(cells).ok_or(RlError::MissingResult { step: i })?;
            t.push_code(&step.content);
            t.push_output(&escape_markers(&r.feedback(), tags))?;
            cells += 1;
            after_text = false;
        } else if !step.content.is_empty() {
            if after_text {
                t.push_reasoning("\n");
            }
            t.push_reasoning(&step.content);
            after_text = true;
        }
    }
    t.close_think()?;
    t.set_answer(&steps[steps.len() - 1].content)?;
    t.validate(tags)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::ErrorKind;
    use crate::tagproto::SegmentKind;
    use std::time::Duration;
    use SftStage::*;

    fn ok(stdout: &str) -> ExecutionResult {
        ExecutionResult {
            stdout: stdout.into(),
            stderr: String::new(),
            error_kind: ErrorKind::None,
            error_summary: String::new(),
            wall_time: Duration::ZERO,
            output_truncated: false,
        }
    }

    fn five() -> Vec<SftWorkflowStep> {
        vec![
            SftWorkflowStep::text(Understand, "Sum of 1..10."),
            SftWorkflowStep::text(Plan, "Compute it."),
            SftWorkflowStep::code(Code, "print(sum(range(11)))"),
            SftWorkflowStep::text(Validate, "Matches n(n+1)/2."),
            SftWorkflowStep::text(Finalize, "55"),
        ]
    }

    #[test]
    fn five_stage_fixture() {
        let tags = TagSet::default();
        let t = build_sft_trace("Q", &five(), &[ok("55\n")], &tags).unwrap();
        assert_eq!(t.code_cells(), 1);
        let kinds: Vec<_> = t.segments().iter().map(|s| s.kind).collect();
        use SegmentKind as K;
        assert_eq!(kinds, [K::Reasoning, K::Reasoning, K::Code, K::ExecutionOutput, K::Reasoning, K::Answer]);
        assert_eq!(
            t.serialize(&tags).unwrap(),
            "Q<think>Sum of 1..10.\nCompute it.<code>print(sum(range(11)))</code>\
             <output>55\n</output>Matches n(n+1)/2.</think><answer>55</answer>"
        );
    }

    #[test]
    fn finalize_must_be_last_and_unique() {
        let tags = TagSet::default();
        let mut s = five();
        s.swap(3, 4);
        assert_eq!(build_sft_trace("Q", &s, &[ok("")], &tags), Err(RlError::MisplacedFinalize { step: 3 }));
        let mut s = five();
        s.push(SftWorkflowStep::text(Finalize, "55"));
        assert_eq!(build_sft_trace("Q", &s, &[ok("")], &tags), Err(RlError::MisplacedFinalize { step: 4 }));
        assert_eq!(build_sft_trace("Q", &five()[..4], &[ok("")], &tags), Err(RlError::MisplacedFinalize { step: 4 }));
    }

    #[test]
    fn code_needs_result() {
        let tags = TagSet::default();
        assert_eq!(build_sft_trace("Q", &five(), &[], &tags), Err(RlError::MissingResult { step: 2 }));
    }
}
