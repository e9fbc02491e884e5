use super::eval::mask_triples;
use super::metrics::code_reasoning_ratio;
use super::{HarnessError, Problem, ProblemKind};
use crate::judge::PASS_REWARD;
use crate::reasoner::{Trajectory, TrajectoryStatus};
use crate::rlcore::{retained, RolloutGroup};
use crate::tagproto::TagSet;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const TRAJECTORIES_JSONL: &str = "trajectories.jsonl";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const ROLLOUTS_JSONL: &str = "rollouts.jsonl";
pub const ROLLOUT_STATS_CSV: &str = "rollout_stats.csv";

/// One persisted trajectory line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub kind: ProblemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<u32>,
    /// Absent when the solve never started.
    pub status: Option<TrajectoryStatus>,
    pub answer: Option<String>,
    /// Absent for unscored problems.
    pub reward: Option<f64>,
    pub turns: usize,
    pub code_cells: usize,
    pub transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<(usize, usize, bool)>>,
    pub behavior: Option<String>,
    pub code_inspired: bool,
    pub verdict: Option<String>,
    pub unscored: Option<String>,
    pub detail: Option<String>,
}

impl TrajectoryRecord {
    pub(crate) fn from_trajectory(
        problem: &Problem,
        sample: Option<u32>,
        t: &Trajectory,
        tags: &TagSet,
        with_mask: bool,
    ) -> Self {
        Self {
            id: problem.id.clone(),
            kind: problem.kind(),
            sample,
            status: Some(t.status),
            answer: t.answer.clone(),
            reward: None,
            turns: t.turns_used,
            code_cells: t.code_cells,
            transcript: t.transcript.serialize(tags).unwrap_or_default(),
            mask: if with_mask { mask_triples(t, tags) } else { None },
            behavior: None,
            code_inspired: t.code_cells >= 1,
            verdict: None,
            unscored: None,
            detail: t.detail.clone(),
        }
    }

    pub(crate) fn unsolved(problem: &Problem, sample: Option<u32>, reason: String) -> Self {
        Self {
            id: problem.id.clone(),
            kind: problem.kind(),
            sample,
            status: None,
            answer: None,
            reward: None,
            turns: 0,
            code_cells: 0,
            transcript: String::new(),
            mask: None,
            behavior: None,
            code_inspired: false,
            verdict: None,
            unscored: Some(reason),
            detail: None,
        }
    }

    /// Behavior label as reported, e.g. "Code-Inspired Verification".
    pub fn behavior_label(&self) -> Option<String> {
        self.behavior.as_ref().map(|b| if self.code_inspired { format!("Code-Inspired {b}") } else { b.clone() })
    }
}

/// Aggregates over one evaluation. Rates are `None` when their denominator
/// is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub problems: usize,
    pub unscored: usize,
    pub code_scored: usize,
    pub code_passed: usize,
    pub math_scored: usize,
    pub math_correct: usize,
    pub pass_rate: Option<f64>,
    pub accuracy: Option<f64>,
    /// Over every trajectory that was produced, scored or not.
    pub code_reasoning_ratio: Option<f64>,
    pub mean_turns: Option<f64>,
    pub behavior_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<TrajectoryRecord>,
    pub summary: EvalSummary,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl EvalSummary {
    pub fn from_records(records: &[TrajectoryRecord]) -> Self {
        let scored = |k: ProblemKind| records.iter().filter(move |r| r.kind == k && r.reward.is_some());
        let code_scored = scored(ProblemKind::Code).count();
        let code_passed = scored(ProblemKind::Code).filter(|r| r.reward == Some(PASS_REWARD)).count();
        let math_scored = scored(ProblemKind::Math).count();
        let math_correct = scored(ProblemKind::Math).filter(|r| r.reward == Some(PASS_REWARD)).count();
        let produced: Vec<_> = records.iter().filter(|r| r.status.is_some()).collect();
        let with_code = produced.iter().filter(|r| r.code_cells >= 1).count();
        let turns: usize = produced.iter().map(|r| r.turns).sum();
        let mut behavior_counts = BTreeMap::new();
        for label in records.iter().filter_map(TrajectoryRecord::behavior_label) {
            *behavior_counts.entry(label).or_insert(0) += 1;
        }
        Self {
            problems: records.len(),
            unscored: records.iter().filter(|r| r.unscored.is_some()).count(),
            code_scored,
            code_passed,
            math_scored,
            math_correct,
            pass_rate: ratio(code_passed, code_scored),
            accuracy: ratio(math_correct, math_scored),
            code_reasoning_ratio: ratio(with_code, produced.len()),
            mean_turns: (!produced.is_empty()).then(|| turns as f64 / produced.len() as f64),
            behavior_counts,
        }
    }
}

impl EvalReport {
    pub fn from_records(records: Vec<TrajectoryRecord>) -> Self {
        let summary = EvalSummary::from_records(&records);
        Self { records, summary }
    }

    pub fn has_unscored(&self) -> bool {
        self.summary.unscored > 0
    }
}

#[derive(Serialize)]
struct ReportRow<'a> {
    problem_id: &'a str,
    kind: ProblemKind,
    reward: Option<f64>,
    turns: usize,
    code_cells: usize,
    behavior: Option<&'a str>,
    code_inspired: bool,
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Writes the trajectory lines, the per-problem CSV and the summary JSON
/// into `dir`, creating it if needed.
pub fn write_eval(report: &EvalReport, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(TRAJECTORIES_JSONL), &report.records)?;
    let mut csv = csv::Writer::from_path(dir.join(REPORT_CSV))?;
    for r in &report.records {
        csv.serialize(ReportRow {
            problem_id: &r.id,
            kind: r.kind,
            reward: r.reward,
            turns: r.turns,
            code_cells: r.code_cells,
            behavior: r.behavior.as_deref(),
            code_inspired: r.code_inspired,
        })?;
    }
    csv.flush()?;
    let mut json = serde_json::to_string_pretty(&report.summary)?;
    json.push('\n');
    std::fs::write(dir.join(REPORT_JSON), json)?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>, HarnessError> {
    read_jsonl(path)
}

/// One plot-ready row per rollout group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub question_id: String,
    pub group_size: usize,
    pub correct: usize,
    pub mean_reward: f64,
    pub code_reasoning_ratio: f64,
    pub retained: bool,
}

impl RolloutStats {
    pub fn of(group: &RolloutGroup) -> Self {
        let n = group.rewards.len();
        Self {
            question_id: group.question_id.clone(),
            group_size: n,
            correct: group.correct(),
            mean_reward: group.rewards.iter().sum::<f64>() / n.max(1) as f64,
            code_reasoning_ratio: code_reasoning_ratio(&group.trajectories).unwrap_or(0.0),
            retained: retained(&group.rewards),
        }
    }
}

pub fn write_rollouts(groups: &[RolloutGroup], dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(ROLLOUTS_JSONL), groups)?;
    let mut csv = csv::Writer::from_path(dir.join(ROLLOUT_STATS_CSV))?;
    for g in groups {
        csv.serialize(RolloutStats::of(g))?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_rollouts(path: &Path) -> Result<Vec<RolloutGroup>, HarnessError> {
    let groups: Vec<RolloutGroup> = read_jsonl(path)?;
    for g in &groups {
        g.validate()?;
    }
    Ok(groups)
}
