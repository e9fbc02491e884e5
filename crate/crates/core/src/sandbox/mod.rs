//! Notebook-style execution sessions.
//!
//! A [`SandboxManager`] owns live sessions. Each session wraps one kernel
//! (the in-process [`mock`] interpreter or an external [`worker`] process)
//! whose module namespace persists from cell to cell. Results are
//! normalised here: stdout is capped, and any diagnostic is cut down to its
//! final line.

pub mod contract;
mod manager;
pub mod mock;
pub mod worker;

pub use manager::SandboxManager;
pub use mock::{MockTable, ScriptedOutcome};
pub use worker::WorkerCommand;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecutorBinding {
    Mock,
    Worker(WorkerCommand),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandboxConfig {
    pub cell_timeout: Duration,
    pub output_byte_cap: usize,
    pub max_cells_per_session: usize,
    pub executor_binding: ExecutorBinding,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            cell_timeout: Duration::from_secs(10),
            output_byte_cap: 8192,
            max_cells_per_session: 64,
            executor_binding: ExecutorBinding::Mock,
        }
    }
}

impl SandboxConfig {
    pub fn validate(&self) -> Result<(), SandboxError> {
        if self.cell_timeout.is_zero() {
            return Err(SandboxError::InvalidConfig("cell_timeout must be positive".into()));
        }
        if self.output_byte_cap == 0 {
            return Err(SandboxError::InvalidConfig("output_byte_cap must be at least 1".into()));
        }
        if self.max_cells_per_session == 0 {
            return Err(SandboxError::InvalidConfig("max_cells_per_session must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "session-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    None,
    Syntax,
    Runtime,
    Timeout,
    WorkerCrash,
}

impl ErrorKind {
    pub fn wire_name(self) -> &'static str {
        match self {
            ErrorKind::None => "none",
            ErrorKind::Syntax => "syntax",
            ErrorKind::Runtime => "runtime",
            ErrorKind::Timeout => "timeout",
            ErrorKind::WorkerCrash => "worker_crash",
        }
    }

    /// Parses a wire name, ignoring ASCII case.
    pub fn from_wire(s: &str) -> Option<Self> {
        let all = [ErrorKind::None, ErrorKind::Syntax, ErrorKind::Runtime, ErrorKind::Timeout, ErrorKind::WorkerCrash];
        all.into_iter().find(|k| k.wire_name().eq_ignore_ascii_case(s.trim()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub stdout: String,
    pub stderr: String,
    pub error_kind: ErrorKind,
    pub error_summary: String,
    pub wall_time: Duration,
    pub output_truncated: bool,
}

impl ExecutionResult {
    /// Text appended to the history after the cell.
    pub fn feedback(&self) -> String {
        feedback_text(self)
    }

    /// Same fields, wall time ignored.
    pub fn same_outcome(&self, other: &ExecutionResult) -> bool {
        self.stdout == other.stdout
            && self.stderr == other.stderr
            && self.error_kind == other.error_kind
            && self.error_summary == other.error_summary
            && self.output_truncated == other.output_truncated
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SandboxError {
    #[error("worker unavailable: {0}")]
    WorkerUnavailable(String),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("session {0} is dead after a worker crash")]
    SessionDead(SessionId),
    #[error("empty cell")]
    EmptyCell,
    #[error("session {session} reached its limit of {limit} cells")]
    CellLimit { session: SessionId, limit: usize },
    #[error("invalid sandbox config: {0}")]
    InvalidConfig(String),
}

/// What a kernel reports for one cell before normalisation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct RawOutcome {
    pub stdout: String,
    pub stderr: String,
    pub error_kind: ErrorKind,
    pub diagnostic: String,
}

impl RawOutcome {
    pub(crate) fn crashed(why: &str) -> Self {
        Self {
            stdout: String::new(),
            stderr: String::new(),
            error_kind: ErrorKind::WorkerCrash,
            diagnostic: format!("WorkerCrash: {why}"),
        }
    }
}

pub(crate) trait Kernel: Send {
    fn execute(&mut self, source: &str, timeout: Duration) -> RawOutcome;
    fn bind_stdin(&mut self, data: &str) -> Result<(), String>;
}

/// Last non-empty line of a diagnostic, trailing whitespace removed.
pub fn summarize_error(raw_diagnostic: &str) -> String {
    raw_diagnostic.lines().map(str::trim_end).rev().find(|l| !l.is_empty()).unwrap_or("").to_string()
}

/// Feedback text for a cell: stdout, then stderr, then the error summary,
/// joined by single newlines (no newline is added after a part that
/// already ends with one).
pub fn feedback_text(r: &ExecutionResult) -> String {
    let mut out = String::new();
    for part in [r.stdout.as_str(), r.stderr.as_str(), r.error_summary.as_str()] {
        if part.is_empty() {
            continue;
        }
        if !out.is_empty() && !out.ends_with('\n') {
            out.push('\n');
        }
        out.push_str(part);
    }
    out
}

/// Keeps the longest prefix of at most `cap` bytes that ends on a char
/// boundary. Returns whether anything was cut.
pub(crate) fn truncate_prefix(s: &mut String, cap: usize) -> bool {
    if s.len() <= cap {
        return false;
    }
    let mut cut = cap;
    while !s.is_char_boundary(cut) {
        cut -= 1;
    }
    s.truncate(cut);
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_takes_last_non_empty_line() {
        let tb = "Traceback (most recent call last):\n  File \"x\", line 1\nValueError: bad input\n";
        assert_eq!(summarize_error(tb), "ValueError: bad input");
        assert_eq!(summarize_error("SyntaxError: invalid syntax"), "SyntaxError: invalid syntax");
        assert_eq!(summarize_error("a\nKeyError: 'k'  \n\n   \n"), "KeyError: 'k'");
        assert_eq!(summarize_error(""), "");
    }

    #[test]
    fn feedback_order_and_separators() {
        let mut r = ExecutionResult {
            stdout: "4\n".into(),
            stderr: "warn".into(),
            error_kind: ErrorKind::Runtime,
            error_summary: "ValueError: x".into(),
            wall_time: Duration::ZERO,
            output_truncated: false,
        };
        assert_eq!(feedback_text(&r), "4\nwarn\nValueError: x");
        r.stderr.clear();
        r.stdout = "partial".into();
        assert_eq!(feedback_text(&r), "partial\nValueError: x");
    }

    #[test]
    fn wire_names_round_trip() {
        for k in [ErrorKind::None, ErrorKind::Syntax, ErrorKind::Runtime, ErrorKind::Timeout, ErrorKind::WorkerCrash] {
            assert_eq!(ErrorKind::from_wire(k.wire_name()), Some(k));
        }
        assert_eq!(ErrorKind::from_wire("RUNTIME"), Some(ErrorKind::Runtime));
        assert_eq!(ErrorKind::from_wire("segfault"), None);
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        let mut s = "ab€".to_string();
        assert!(truncate_prefix(&mut s, 3));
        assert_eq!(s, "ab");
        let mut s = "abc".to_string();
        assert!(!truncate_prefix(&mut s, 3));
    }
}
