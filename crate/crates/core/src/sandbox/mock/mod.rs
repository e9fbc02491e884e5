//! Deterministic in-process executor.
//!
//! Cells are run by a small interpreter for a Python subset (enough for
//! contest-style programs: ints of any size, floats, strings, lists, dicts,
//! sets, tuples, functions and closures, comprehensions, `try`, and the
//! `math`, `sys`, `itertools`, `functools`, `string`, `heapq` and `bisect`
//! modules). Classes and `with` blocks raise `NotImplementedError`.
//!
//! A [`MockTable`] can pin the result of an exact source text, which is how
//! tests script conditions the interpreter cannot produce on its own (a
//! crashed worker, for instance).

mod ast;
mod builtins;
mod interp;
mod lexer;
mod parser;
mod value;

use super::{ErrorKind, Kernel, RawOutcome};
use interp::{CellEnd, Interp};
use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

/// Reserved stack for the evaluator thread. Deep Python recursion maps to
/// deep Rust recursion, so this bounds `sys.setrecursionlimit`.
const EVAL_STACK_BYTES: usize = 512 << 20;

/// A scripted outcome for one exact cell source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedOutcome {
    pub stdout: String,
    pub stderr: String,
    pub error_kind: ErrorKind,
    /// Full diagnostic; the session reduces it to its last line.
    pub diagnostic: String,
}

impl ScriptedOutcome {
    pub fn crash() -> Self {
        Self {
            stdout: String::new(),
            stderr: String::new(),
            error_kind: ErrorKind::WorkerCrash,
            diagnostic: "WorkerCrash: kernel process exited".into(),
        }
    }
}

/// Source text → scripted outcome. Lookups use the exact cell text.
#[derive(Debug, Clone, Default)]
pub struct MockTable {
    entries: HashMap<String, ScriptedOutcome>,
}

impl MockTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source: impl Into<String>, outcome: ScriptedOutcome) -> &mut Self {
        self.entries.insert(source.into(), outcome);
        self
    }

    pub fn get(&self, source: &str) -> Option<&ScriptedOutcome> {
        self.entries.get(source)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub(crate) struct MockKernel {
    interp: Option<Interp>,
    table: Option<Arc<MockTable>>,
}

impl MockKernel {
    pub(crate) fn new(output_cap: usize, table: Option<Arc<MockTable>>) -> Self {
        let mut interp = Interp::new();
        // keep a little past the cap so the session can tell it overflowed
        interp.out_ceiling = output_cap.saturating_add(4);
        Self { interp: Some(interp), table }
    }
}

impl Kernel for MockKernel {
    fn execute(&mut self, source: &str, timeout: Duration) -> RawOutcome {
        if let Some(s) = self.table.as_ref().and_then(|t| t.get(source)) {
            return RawOutcome {
                stdout: s.stdout.clone(),
                stderr: s.stderr.clone(),
                error_kind: s.error_kind,
                diagnostic: s.diagnostic.clone(),
            };
        }
        let Some(mut interp) = self.interp.take() else {
            return RawOutcome::crashed("mock interpreter lost after an internal fault");
        };
        let deadline = Instant::now() + timeout;
        let src = source.to_string();
        let joined = std::thread::Builder::new()
            .name("mock-cell".into())
            .stack_size(EVAL_STACK_BYTES)
            .spawn(move || {
                let end = interp.run_cell(&src, deadline);
                (interp, end)
            })
            .map(|h| h.join());
        let (mut interp, end) = match joined {
            Ok(Ok(pair)) => pair,
            Ok(Err(_)) => return RawOutcome::crashed("mock interpreter panicked"),
            Err(e) => return RawOutcome::crashed(&format!("could not start evaluator thread: {e}")),
        };
        let (stdout, stderr) = interp.take_output();
        self.interp = Some(interp);
        let (error_kind, diagnostic) = match end {
            CellEnd::Ok => (ErrorKind::None, String::new()),
            CellEnd::Syntax(d) => (ErrorKind::Syntax, d),
            CellEnd::Runtime(d) => (ErrorKind::Runtime, d),
            CellEnd::Timeout => {
                (ErrorKind::Timeout, format!("TimeoutError: cell exceeded {:.3}s", timeout.as_secs_f64()))
            }
        };
        RawOutcome { stdout, stderr, error_kind, diagnostic }
    }

    fn bind_stdin(&mut self, data: &str) -> Result<(), String> {
        match self.interp.as_mut() {
            Some(i) => {
                i.set_stdin(data);
                Ok(())
            }
            None => Err("mock interpreter unavailable".into()),
        }
    }
}
