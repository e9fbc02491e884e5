//! Datasets, batch evaluation, rollout groups, metrics and persistence.
//!
//! Scoring separates model failures from infrastructure failures: a turn
//! limit or a wrong answer earns -1, while an unreachable endpoint or a
//! dead worker leaves the problem unscored and out of every rate.

mod eval;
mod metrics;
mod persist;

pub use eval::{rollout_group, run_eval, run_eval_with, EvalOptions, RolloutOptions};
pub use metrics::{
    annotate_behavior, code_reasoning_ratio, Annotator, AnnotatorError, BehaviorCategory, BehaviorLabel,
    ExternalAnnotator, KeywordAnnotator,
};
pub use persist::{
    read_rollouts, read_trajectories, write_eval, write_rollouts, EvalReport, EvalSummary, RolloutStats,
    TrajectoryRecord, REPORT_CSV, REPORT_JSON, ROLLOUTS_JSONL, ROLLOUT_STATS_CSV, TRAJECTORIES_JSONL,
};

use crate::judge::{CodeTests, TestCase};
use crate::policy::PolicyError;
use crate::reasoner::ReasonerError;
use crate::rlcore::RlError;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::time::Duration;
use thiserror::Error;

/// Per-case timeout given to dataset tests that do not set one.
pub const DEFAULT_CASE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Code,
    Math,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Code => "code",
            ProblemKind::Math => "math",
        })
    }
}

/// What a problem is checked against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Task {
    Code(CodeTests),
    Math { answer: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub id: String,
    pub prompt: String,
    pub task: Task,
}

impl Problem {
    pub fn code(id: impl Into<String>, prompt: impl Into<String>, cases: Vec<TestCase>) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            task: Task::Code(CodeTests { cases, per_case_timeout: DEFAULT_CASE_TIMEOUT }),
        }
    }

    pub fn math(id: impl Into<String>, prompt: impl Into<String>, answer: impl Into<String>) -> Self {
        Self { id: id.into(), prompt: prompt.into(), task: Task::Math { answer: answer.into() } }
    }

    pub fn kind(&self) -> ProblemKind {
        match self.task {
            Task::Code(_) => ProblemKind::Code,
            Task::Math { .. } => ProblemKind::Math,
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: duplicate problem id {id:?}")]
    DuplicateId { line: usize, id: String },
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("group size {0} is below 2")]
    GroupTooSmall(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("problem {problem} sample {sample}: {reason}")]
    Infrastructure { problem: String, sample: u32, reason: String },
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    id: String,
    kind: ProblemKind,
    prompt: String,
    tests: Option<Vec<RawCase>>,
    answer: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    stdin: String,
    stdout: String,
}

/// Reads a JSONL dataset. Blank lines are skipped; line numbers are
/// 1-based.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Problem>, DatasetError> {
    let path = path.as_ref();
    let io = |source| DatasetError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::open(path).map_err(io)?;
    parse_dataset(std::io::BufReader::new(file)).map_err(|e| match e {
        DatasetError::Io { source, .. } => io(source),
        other => other,
    })
}

pub fn parse_dataset(reader: impl BufRead) -> Result<Vec<Problem>, DatasetError> {
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| DatasetError::Io { path: String::new(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| DatasetError::Schema { line: line_no, message };
        let raw: RawProblem = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        if raw.id.is_empty() {
            return Err(schema("empty id".into()));
        }
        if raw.prompt.trim().is_empty() {
            return Err(schema("empty prompt".into()));
        }
        let task = match (raw.kind, raw.tests, raw.answer) {
            (ProblemKind::Code, Some(tests), None) => {
                if tests.is_empty() {
                    return Err(schema("code problem needs at least one test".into()));
                }
                let cases = tests.into_iter().map(|c| TestCase { stdin: c.stdin, expected_stdout: c.stdout }).collect();
                Task::Code(CodeTests { cases, per_case_timeout: DEFAULT_CASE_TIMEOUT })
            }
            (ProblemKind::Code, None, _) => return Err(schema("code problem is missing tests".into())),
            (ProblemKind::Code, Some(_), Some(_)) => {
                return Err(schema("code problem must not carry an answer".into()))
            }
            (ProblemKind::Math, None, Some(answer)) => {
                if answer.trim().is_empty() {
                    return Err(schema("empty answer".into()));
                }
                Task::Math { answer }
            }
            (ProblemKind::Math, _, None) => return Err(schema("math problem is missing its answer".into())),
            (ProblemKind::Math, Some(_), Some(_)) => return Err(schema("math problem must not carry tests".into())),
        };
        if seen.insert(raw.id.clone(), line_no).is_some() {
            return Err(DatasetError::DuplicateId { line: line_no, id: raw.id });
        }
        out.push(Problem { id: raw.id, prompt: raw.prompt, task });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Vec<Problem>, DatasetError> {
        parse_dataset(s.as_bytes())
    }

    #[test]
    fn three_valid_lines() {
        let ps = parse(concat!(
            r#"{"id":"a","kind":"math","prompt":"1+1?","answer":"2"}"#,
            "\n\n",
            r#"{"id":"b","kind":"code","prompt":"echo","tests":[{"stdin":"x\n","stdout":"x\n"}]}"#,
            "\n",
            r#"{"id":"c","kind":"math","prompt":"half","answer":"1/2"}"#,
        ))
        .unwrap();
        let ids: Vec<_> = ps.iter().map(|p| (p.id.as_str(), p.kind())).collect();
        assert_eq!(ids, [("a", ProblemKind::Math), ("b", ProblemKind::Code), ("c", ProblemKind::Math)]);
    }

    #[test]
    fn missing_tests_is_a_schema_error() {
        let e = parse(concat!(
            r#"{"id":"a","kind":"math","prompt":"q","answer":"2"}"#,
            "\n",
            r#"{"id":"b","kind":"code","prompt":"q"}"#
        ))
        .unwrap_err();
        assert!(matches!(e, DatasetError::Schema { line: 2, .. }), "{e}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let line = r#"{"id":"a","kind":"math","prompt":"q","answer":"2"}"#;
        let e = parse(&format!("{line}\n{line}\n")).unwrap_err();
        assert!(matches!(e, DatasetError::DuplicateId { line: 2, ref id } if id == "a"));
    }

    #[test]
    fn malformed_json_reports_its_line() {
        let e = parse("\n{nope\n").unwrap_err();
        assert!(matches!(e, DatasetError::Schema { line: 2, .. }));
        assert!(matches!(parse(r#"{"id":"a","kind":"poem","prompt":"q"}"#), Err(DatasetError::Schema { line: 1, .. })));
    }
}
