//! Rule-based ±1 rewards.
//!
//! Code answers are run against hidden stdin/stdout cases, each in a fresh
//! sandbox session. Math answers are compared as normalized strings or as
//! numbers. Infrastructure trouble is reported as a [`JudgeError`], never as
//! a negative reward.

use crate::sandbox::{ErrorKind, SandboxConfig, SandboxError, SandboxManager};
use serde::{Deserialize, Serialize};
use std::time::Duration;
use thiserror::Error;

pub const PASS_REWARD: f64 = 1.0;
pub const FAIL_REWARD: f64 = -1.0;

/// Relative tolerance of numeric answer equivalence.
pub const MATH_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub stdin: String,
    pub expected_stdout: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeTests {
    pub cases: Vec<TestCase>,
    pub per_case_timeout: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseOutcome {
    Pass,
    WrongOutput,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub reward: f64,
    /// Every executed case in order. Judging stops at the first failing
    /// case, so this may be shorter than the case list.
    pub per_case: Vec<CaseOutcome>,
    pub detail: String,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.reward == PASS_REWARD
    }

    fn binary(pass: bool, per_case: Vec<CaseOutcome>, detail: String) -> Self {
        Self { reward: if pass { PASS_REWARD } else { FAIL_REWARD }, per_case, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JudgeError {
    #[error("program is empty")]
    EmptyProgram,
    #[error("code tests need at least one case")]
    NoCases,
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("sandbox failure while judging: {0}")]
    Sandbox(#[from] SandboxError),
    #[error("worker crashed while judging case {case}: {summary}")]
    WorkerCrash { case: usize, summary: String },
}

/// The program inside an answer: the first fenced code block when there is
/// one, otherwise the whole text.
pub fn extract_program(answer: &str) -> String {
    let Some(open) = answer.find("```") else {
        return answer.trim().to_string();
    };
    let after = &answer[open + 3..];
    // skip the info string (e.g. "python") up to the end of its line
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
    let body = &after[body_start..];
    match body.find("```") {
        Some(close) => body[..close].trim_end().to_string(),
        None => body.trim_end().to_string(),
    }
}

/// Output normalization shared by expected and actual text: trailing
/// whitespace removed per line, trailing empty lines dropped.
pub fn normalize_output(s: &str) -> String {
    let mut lines: Vec<&str> = s.lines().map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

/// Runs `program` once per case in a fresh session derived from `base`
/// (timeout replaced by the per-case timeout).
pub fn judge_code(
    program: &str,
    tests: &CodeTests,
    sandbox: &SandboxManager,
    base: &SandboxConfig,
) -> Result<Verdict, JudgeError> {
    if program.trim().is_empty() {
        return Err(JudgeError::EmptyProgram);
    }
    if tests.cases.is_empty() {
        return Err(JudgeError::NoCases);
    }
    let config = SandboxConfig { cell_timeout: tests.per_case_timeout, ..base.clone() };
    let mut per_case = Vec::with_capacity(tests.cases.len());
    let mut detail = String::new();
    for (i, case) in tests.cases.iter().enumerate() {
        let session = sandbox.open_session_with_stdin(&config, &case.stdin)?;
        let run = sandbox.execute_cell(session, program);
        // release the session before looking at the outcome
        let _ = sandbox.close_session(session);
        let r = run?;
        let outcome = match r.error_kind {
            ErrorKind::None if normalize_output(&r.stdout) == normalize_output(&case.expected_stdout) => {
                CaseOutcome::Pass
            }
            ErrorKind::None => CaseOutcome::WrongOutput,
            ErrorKind::Syntax | ErrorKind::Runtime => CaseOutcome::Error,
            ErrorKind::Timeout => CaseOutcome::Timeout,
            ErrorKind::WorkerCrash => return Err(JudgeError::WorkerCrash { case: i, summary: r.error_summary }),
        };
        per_case.push(outcome);
        if outcome != CaseOutcome::Pass {
            detail = match outcome {
                CaseOutcome::WrongOutput => format!("case {i}: wrong output"),
                CaseOutcome::Timeout => format!("case {i}: timed out"),
                _ => format!("case {i}: {}", r.error_summary),
            };
            break;
        }
    }
    let pass = per_case.len() == tests.cases.len() && per_case.iter().all(|c| *c == CaseOutcome::Pass);
    if pass {
        detail = format!("all {} cases passed", per_case.len());
    }
    Ok(Verdict::binary(pass, per_case, detail))
}

/// Strips whitespace, surrounding `$` signs and a leading `answer:` label.
pub fn normalize_math(s: &str) -> String {
    let mut t = s.trim();
    loop {
        let before = t;
        if t.get(..7).is_some_and(|p| p.eq_ignore_ascii_case("answer:")) {
            t = t[7..].trim_start();
        }
        if t.len() >= 2 && t.starts_with('$') && t.ends_with('$') {
            t = t[1..t.len() - 1].trim();
        }
        if t == before {
            break;
        }
    }
    t.to_string()
}

fn parse_decimal(s: &str) -> Option<f64> {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if int.is_empty() && frac.is_empty() || !digits(int) || !digits(frac) {
        return None;
    }
    s.parse().ok()
}

/// Integer, decimal or `a/b` value of a normalized answer.
pub fn parse_number(s: &str) -> Option<f64> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    match s.split_once('/') {
        Some((a, b)) => {
            let (a, b) = (parse_decimal(a)?, parse_decimal(b)?);
            (b != 0.0).then(|| a / b)
        }
        None => parse_decimal(&s),
    }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= MATH_REL_TOL * a.abs().max(b.abs())
}

pub fn judge_math(candidate: &str, ground_truth: &str) -> Result<Verdict, JudgeError> {
    let truth = normalize_math(ground_truth);
    if truth.is_empty() {
        return Err(JudgeError::EmptyGroundTruth);
    }
    let cand = normalize_math(candidate);
    if cand == truth {
        return Ok(Verdict::binary(true, vec![CaseOutcome::Pass], "exact match".into()));
    }
    let (pass, detail) = match (parse_number(&cand), parse_number(&truth)) {
        (Some(a), Some(b)) if close(a, b) => (true, "numerically equal".to_string()),
        (Some(a), Some(b)) => (false, format!("{a} != {b}")),
        _ => (false, "no match".to_string()),
    };
    let outcome = if pass { CaseOutcome::Pass } else { CaseOutcome::WrongOutput };
    Ok(Verdict::binary(pass, vec![outcome], detail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use num_traits::ToPrimitive;

    fn tests(cases: &[(&str, &str)]) -> CodeTests {
        CodeTests {
            cases: cases
                .iter()
                .map(|(i, o)| TestCase { stdin: i.to_string(), expected_stdout: o.to_string() })
                .collect(),
            per_case_timeout: Duration::from_secs(5),
        }
    }

    fn judge(program: &str, cases: &[(&str, &str)]) -> Verdict {
        judge_code(program, &tests(cases), &SandboxManager::default(), &SandboxConfig::default()).unwrap()
    }

    #[test]
    fn non_ascii_does_not_split_chars() {
        assert_eq!(normalize_math("ééééé"), "ééééé");
        assert_eq!(normalize_math("Answer: é"), "é");
    }

    #[test]
    fn echo_passes_every_case() {
        let v = judge("print(input())", &[("a\n", "a\n"), ("b\n", "b"), ("c\n", "c  \n\n")]);
        assert_eq!(v.reward, 1.0);
        assert_eq!(v.per_case, [CaseOutcome::Pass; 3]);
    }

    #[test]
    fn one_mismatch_fails() {
        let v = judge("print(7)", &[("", "7"), ("", "8")]);
        assert_eq!(v.reward, -1.0);
        assert_eq!(v.per_case, [CaseOutcome::Pass, CaseOutcome::WrongOutput]);
    }

    #[test]
    fn raising_program_is_an_error_case() {
        let v = judge("raise ValueError('no')", &[("", "1"), ("", "2")]);
        assert_eq!(v.per_case, [CaseOutcome::Error]);
        assert_eq!(v.reward, -1.0);
        assert!(v.detail.contains("ValueError: no"));
        let v = judge_code(
            "while True: pass",
            &CodeTests { per_case_timeout: Duration::from_millis(100), ..tests(&[("", "")]) },
            &SandboxManager::default(),
            &SandboxConfig::default(),
        )
        .unwrap();
        assert_eq!(v.per_case, [CaseOutcome::Timeout]);
    }

    #[test]
    fn infrastructure_failures_are_not_scored() {
        use crate::sandbox::{ExecutorBinding, WorkerCommand};
        let cfg = SandboxConfig {
            executor_binding: ExecutorBinding::Worker(WorkerCommand::new("/missing/kernel")),
            ..SandboxConfig::default()
        };
        let err = judge_code("print(1)", &tests(&[("", "1")]), &SandboxManager::default(), &cfg).unwrap_err();
        assert!(matches!(err, JudgeError::Sandbox(SandboxError::WorkerUnavailable(_))));
        let m = SandboxManager::default();
        assert_eq!(judge_code(" ", &tests(&[("", "")]), &m, &SandboxConfig::default()), Err(JudgeError::EmptyProgram));
        assert_eq!(judge_code("1", &tests(&[]), &m, &SandboxConfig::default()), Err(JudgeError::NoCases));
    }

    #[test]
    fn fenced_program_is_extracted() {
        assert_eq!(extract_program("Here:\n```python\nprint(1)\n```\nbye"), "print(1)");
        assert_eq!(extract_program("```\nx = 1\nprint(x)\n```"), "x = 1\nprint(x)");
        assert_eq!(extract_program("  print(2)\n"), "print(2)");
    }

    fn oracle(s: &str) -> Option<BigRational> {
        // exact rational parse, independent of the f64 path
        let s = s.trim();
        if let Some((a, b)) = s.split_once('/') {
            let (a, b) = (oracle(a)?, oracle(b)?);
            return (b != BigRational::from_integer(0.into())).then(|| a / b);
        }
        let (neg, body) = match s.strip_prefix('-') {
            Some(r) => (true, r),
            None => (false, s),
        };
        let (i, f) = body.split_once('.').unwrap_or((body, ""));
        let digits = format!("{i}{f}");
        let n: num_bigint::BigInt = digits.parse().ok()?;
        let d = num_bigint::BigInt::from(10).pow(f.len() as u32);
        let r = BigRational::new(n, d);
        Some(if neg { -r } else { r })
    }

    #[test]
    fn math_equivalence() {
        assert_eq!(oracle("1/2"), oracle("0.5"));
        assert_eq!(judge_math("1/2", "0.5").unwrap().reward, 1.0);
        assert_eq!(judge_math("42", "42").unwrap().reward, 1.0);
        assert_eq!(judge_math("2", "3").unwrap().reward, -1.0);
        assert_eq!(judge_math("  $ 3/4 $", "Answer: 0.75").unwrap().reward, 1.0);
        assert_eq!(judge_math("$$x+1$$", "x+1").unwrap().reward, 1.0);
        assert_eq!(judge_math("x + 1", "x+1").unwrap().reward, -1.0);
        assert_eq!(judge_math("1/0", "1/0").unwrap().reward, 1.0);
        assert_eq!(judge_math("inf", "1e999").unwrap().reward, -1.0);
        assert_eq!(judge_math("1", "").unwrap_err(), JudgeError::EmptyGroundTruth);
    }

    #[test]
    fn tolerance_boundary_matches_the_rational_oracle() {
        let cases =
            [("1000000000", "1000000000.5"), ("1000000000", "1000000002"), ("1/3", "0.333333333333"), ("-2", "2")];
        for (a, b) in cases {
            let (x, y) = (oracle(a).unwrap(), oracle(b).unwrap());
            let diff = (&x - &y).to_f64().unwrap().abs();
            let scale = x.to_f64().unwrap().abs().max(y.to_f64().unwrap().abs());
            let expect = diff <= MATH_REL_TOL * scale;
            assert_eq!(judge_math(a, b).unwrap().passed(), expect, "{a} vs {b}");
        }
    }
}
