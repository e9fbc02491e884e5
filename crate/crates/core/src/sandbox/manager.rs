use super::mock::{MockKernel, MockTable};
use super::worker::WorkerKernel;
use super::{
    summarize_error, truncate_prefix, ErrorKind, ExecutionResult, ExecutorBinding, Kernel, SandboxConfig, SandboxError,
    SessionId,
};
use parking_lot::{Condvar, Mutex};
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

/// Counting gate bounding how many cells run at once.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GatePermit<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        GatePermit(self)
    }
}

struct GatePermit<'a>(&'a Gate);

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

struct Session {
    config: SandboxConfig,
    state: Mutex<SessionState>,
}

struct SessionState {
    kernel: Option<Box<dyn Kernel>>,
    cells: usize,
}

/// Owns live sessions. Safe to share between threads: calls on one session
/// are serialised, distinct sessions run in parallel up to the pool limit.
pub struct SandboxManager {
    sessions: Mutex<HashMap<SessionId, Arc<Session>>>,
    next_id: AtomicU64,
    gate: Gate,
    pool_limit: usize,
    table: Option<Arc<MockTable>>,
}

impl Default for SandboxManager {
    fn default() -> Self {
        Self::new(16)
    }
}

impl SandboxManager {
    /// `pool_limit` bounds concurrently executing cells; 0 is treated as 1.
    pub fn new(pool_limit: usize) -> Self {
        let pool_limit = pool_limit.max(1);
        Self {
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            gate: Gate { free: Mutex::new(pool_limit), cv: Condvar::new() },
            pool_limit,
            table: None,
        }
    }

    /// Mock sessions opened from now on consult `table` before interpreting.
    pub fn with_mock_table(mut self, table: MockTable) -> Self {
        self.table = Some(Arc::new(table));
        self
    }

    pub fn pool_limit(&self) -> usize {
        self.pool_limit
    }

    pub fn live_sessions(&self) -> usize {
        self.sessions.lock().len()
    }

    pub fn open_session(&self, config: &SandboxConfig) -> Result<SessionId, SandboxError> {
        self.open(config, None)
    }

    /// Opens a session whose standard input reads from `stdin`.
    pub fn open_session_with_stdin(&self, config: &SandboxConfig, stdin: &str) -> Result<SessionId, SandboxError> {
        self.open(config, Some(stdin))
    }

    fn open(&self, config: &SandboxConfig, stdin: Option<&str>) -> Result<SessionId, SandboxError> {
        config.validate()?;
        let mut kernel: Box<dyn Kernel> = match &config.executor_binding {
            ExecutorBinding::Mock => Box::new(MockKernel::new(config.output_byte_cap, self.table.clone())),
            ExecutorBinding::Worker(cmd) => Box::new(WorkerKernel::spawn(cmd, config.output_byte_cap)?),
        };
        if let Some(data) = stdin {
            kernel.bind_stdin(data).map_err(SandboxError::WorkerUnavailable)?;
        }
        let id = SessionId(self.next_id.fetch_add(1, Ordering::Relaxed));
        let session =
            Session { config: config.clone(), state: Mutex::new(SessionState { kernel: Some(kernel), cells: 0 }) };
        self.sessions.lock().insert(id, Arc::new(session));
        log::debug!("opened {id}");
        Ok(id)
    }

    pub fn execute_cell(&self, session: SessionId, source: &str) -> Result<ExecutionResult, SandboxError> {
        let s = self.sessions.lock().get(&session).cloned().ok_or(SandboxError::UnknownSession(session))?;
        if source.trim().is_empty() {
            return Err(SandboxError::EmptyCell);
        }
        let mut state = s.state.lock();
        if state.kernel.is_none() {
            return Err(SandboxError::SessionDead(session));
        }
        if state.cells >= s.config.max_cells_per_session {
            return Err(SandboxError::CellLimit { session, limit: s.config.max_cells_per_session });
        }
        state.cells += 1;
        let raw = {
            let _permit = self.gate.acquire();
            let started = Instant::now();
            let raw = state.kernel.as_mut().unwrap().execute(source, s.config.cell_timeout);
            (raw, started.elapsed())
        };
        let (raw, wall_time) = raw;
        if raw.error_kind == ErrorKind::WorkerCrash {
            // dropping the kernel releases the process, if any
            state.kernel = None;
            log::warn!("{session} died: {}", raw.diagnostic);
        }
        let mut stdout = raw.stdout;
        let mut stderr = raw.stderr;
        let output_truncated = truncate_prefix(&mut stdout, s.config.output_byte_cap);
        truncate_prefix(&mut stderr, s.config.output_byte_cap);
        let error_summary = match raw.error_kind {
            ErrorKind::None => String::new(),
            kind => {
                let line = summarize_error(&raw.diagnostic);
                if line.is_empty() {
                    // never report an error with an empty summary
                    format!("{kind:?}")
                } else {
                    line
                }
            }
        };
        Ok(ExecutionResult { stdout, stderr, error_kind: raw.error_kind, error_summary, wall_time, output_truncated })
    }

    /// Releases a session, live or dead. Closing twice is an error.
    pub fn close_session(&self, session: SessionId) -> Result<(), SandboxError> {
        match self.sessions.lock().remove(&session) {
            Some(_) => {
                log::debug!("closed {session}");
                Ok(())
            }
            None => Err(SandboxError::UnknownSession(session)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::ScriptedOutcome;
    use std::time::Duration;

    fn mock() -> SandboxConfig {
        SandboxConfig::default()
    }

    #[test]
    fn fresh_session_has_no_bindings() {
        let m = SandboxManager::default();
        let s = m.open_session(&mock()).unwrap();
        let r = m.execute_cell(s, "print(x)").unwrap();
        assert_eq!(r.error_kind, ErrorKind::Runtime);
        assert_eq!(r.error_summary, "NameError: name 'x' is not defined");
    }

    #[test]
    fn sessions_are_isolated() {
        let m = SandboxManager::default();
        let a = m.open_session(&mock()).unwrap();
        let b = m.open_session(&mock()).unwrap();
        assert_ne!(a, b);
        m.execute_cell(a, "x = 1").unwrap();
        assert_eq!(m.execute_cell(b, "x").unwrap().error_kind, ErrorKind::Runtime);
        assert_eq!(m.execute_cell(a, "print(x)").unwrap().stdout, "1\n");
    }

    #[test]
    fn lifecycle_and_double_close() {
        let m = SandboxManager::default();
        let s = m.open_session(&mock()).unwrap();
        m.close_session(s).unwrap();
        assert_eq!(m.execute_cell(s, "1").unwrap_err(), SandboxError::UnknownSession(s));
        assert_eq!(m.close_session(s).unwrap_err(), SandboxError::UnknownSession(s));
    }

    #[test]
    fn crash_kills_the_session_but_close_still_works() {
        let mut t = MockTable::new();
        t.insert("crash()", ScriptedOutcome::crash());
        let m = SandboxManager::default().with_mock_table(t);
        let s = m.open_session(&mock()).unwrap();
        let r = m.execute_cell(s, "crash()").unwrap();
        assert_eq!(r.error_kind, ErrorKind::WorkerCrash);
        assert!(!r.error_summary.is_empty());
        assert_eq!(m.execute_cell(s, "1").unwrap_err(), SandboxError::SessionDead(s));
        m.close_session(s).unwrap();
    }

    #[test]
    fn stdout_is_capped_exactly() {
        let m = SandboxManager::default();
        let cfg = SandboxConfig { output_byte_cap: 100, ..mock() };
        let s = m.open_session(&cfg).unwrap();
        let r = m.execute_cell(s, "print('x' * 1000)").unwrap();
        assert!(r.output_truncated);
        assert_eq!(r.stdout.len(), 100);
        let r = m.execute_cell(s, "print('y' * 99)").unwrap();
        assert!(!r.output_truncated);
        assert_eq!(r.stdout.len(), 100);
    }

    #[test]
    fn empty_cells_and_cell_limit_are_rejected() {
        let m = SandboxManager::default();
        let cfg = SandboxConfig { max_cells_per_session: 2, ..mock() };
        let s = m.open_session(&cfg).unwrap();
        assert_eq!(m.execute_cell(s, "  \n").unwrap_err(), SandboxError::EmptyCell);
        m.execute_cell(s, "a = 1").unwrap();
        m.execute_cell(s, "a += 1").unwrap();
        assert!(matches!(m.execute_cell(s, "a").unwrap_err(), SandboxError::CellLimit { limit: 2, .. }));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let m = SandboxManager::default();
        let cfg = SandboxConfig { cell_timeout: Duration::ZERO, ..mock() };
        assert!(matches!(m.open_session(&cfg), Err(SandboxError::InvalidConfig(_))));
        let cfg = SandboxConfig { output_byte_cap: 0, ..mock() };
        assert!(matches!(m.open_session(&cfg), Err(SandboxError::InvalidConfig(_))));
    }

    #[test]
    fn timeout_leaves_session_usable() {
        let m = SandboxManager::default();
        let cfg = SandboxConfig { cell_timeout: Duration::from_millis(300), ..mock() };
        let s = m.open_session(&cfg).unwrap();
        m.execute_cell(s, "keep = 5").unwrap();
        let r = m.execute_cell(s, "while True: pass").unwrap();
        assert_eq!(r.error_kind, ErrorKind::Timeout);
        assert!(r.wall_time >= Duration::from_millis(300));
        assert_eq!(m.execute_cell(s, "print(keep)").unwrap().stdout, "5\n");
    }
}
