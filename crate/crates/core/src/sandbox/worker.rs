//! Supervisor side of the external kernel binding.
//!
//! The kernel is a child process speaking newline-delimited JSON on its
//! standard streams: one request frame per line in, one response frame per
//! line out, ids echoed. The kernel never enforces timeouts itself. When a
//! cell overruns, the supervisor kills the process and starts a fresh one,
//! so the session survives with its state reset.

use super::{ErrorKind, Kernel, RawOutcome, SandboxError};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

/// Environment variable handed to the kernel with the output byte cap.
pub const CAP_ENV: &str = "CTM_WORKER_CAP";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerCommand {
    pub program: PathBuf,
    pub args: Vec<String>,
    /// How long a freshly spawned kernel has to answer its first ping.
    pub handshake_timeout: Duration,
}

impl WorkerCommand {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self { program: program.into(), args: Vec::new(), handshake_timeout: Duration::from_secs(10) }
    }

    pub fn arg(mut self, a: impl Into<String>) -> Self {
        self.args.push(a.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Execute,
    Reset,
    Ping,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: i64,
    pub op: Op,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub id: i64,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default = "none_kind")]
    pub error_kind: String,
    #[serde(default)]
    pub error_summary: String,
    #[serde(default)]
    pub wall_ms: u64,
}

fn none_kind() -> String {
    ErrorKind::None.wire_name().into()
}

impl Response {
    /// Decoded error kind; unknown names count as runtime errors.
    pub fn kind(&self) -> ErrorKind {
        ErrorKind::from_wire(&self.error_kind).unwrap_or(ErrorKind::Runtime)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("kernel closed its output")]
    Closed,
    #[error("could not write request: {0}")]
    Write(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

/// One running kernel process.
pub struct WorkerClient {
    child: Child,
    stdin: ChildStdin,
    frames: Receiver<Result<Response, String>>,
    next_id: i64,
}

impl WorkerClient {
    /// Starts the kernel and waits for it to answer a ping.
    pub fn spawn(cmd: &WorkerCommand, output_cap: usize) -> Result<Self, SandboxError> {
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .env(CAP_ENV, output_cap.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| SandboxError::WorkerUnavailable(format!("{}: {e}", cmd.program.display())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::Builder::new()
            .name("worker-reader".into())
            .spawn(move || {
                for line in BufReader::new(stdout).lines() {
                    let Ok(line) = line else { break };
                    if line.trim().is_empty() {
                        continue;
                    }
                    let frame = serde_json::from_str::<Response>(&line).map_err(|e| format!("{e}: {line}"));
                    if tx.send(frame).is_err() {
                        break;
                    }
                }
            })
            .map_err(|e| SandboxError::WorkerUnavailable(e.to_string()))?;
        let mut client = Self { child, stdin, frames: rx, next_id: 1 };
        client
            .ping(cmd.handshake_timeout)
            .map_err(|e| SandboxError::WorkerUnavailable(format!("handshake failed: {e}")))?;
        Ok(client)
    }

    pub fn ping(&mut self, timeout: Duration) -> Result<Response, ClientError> {
        self.request(Op::Ping, None, timeout)
    }

    pub fn reset(&mut self, timeout: Duration) -> Result<Response, ClientError> {
        self.request(Op::Reset, None, timeout)
    }

    pub fn execute(&mut self, code: &str, timeout: Duration) -> Result<Response, ClientError> {
        self.request(Op::Execute, Some(code.to_string()), timeout)
    }

    /// Sends one frame and waits for the response carrying its id. Frames
    /// left over from abandoned requests are skipped.
    pub fn request(&mut self, op: Op, code: Option<String>, timeout: Duration) -> Result<Response, ClientError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut line = serde_json::to_string(&Request { id, op, code }).expect("request serializes");
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| ClientError::Write(e.to_string()))?;
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.frames.recv_timeout(left) {
                Ok(Ok(r)) if r.id == id => return Ok(r),
                Ok(Ok(r)) if r.id < 0 => return Err(ClientError::Malformed(format!("kernel rejected frame {id}"))),
                Ok(Ok(_stale)) => continue,
                Ok(Err(e)) => return Err(ClientError::Malformed(e)),
                Err(RecvTimeoutError::Timeout) => return Err(ClientError::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => return Err(ClientError::Closed),
            }
        }
    }

    /// Whether the process is still running.
    pub fn is_alive(&mut self) -> bool {
        matches!(self.child.try_wait(), Ok(None))
    }
}

impl Drop for WorkerClient {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Python source that rebinds the kernel's standard input.
pub fn stdin_prelude(data: &str) -> String {
    // a JSON string literal is also a valid Python string literal
    let lit = serde_json::to_string(data).expect("string serializes");
    format!("import sys as _s, io as _io\n_s.stdin = _io.StringIO({lit})\ndel _s, _io")
}

pub(crate) struct WorkerKernel {
    cmd: WorkerCommand,
    cap: usize,
    client: Option<WorkerClient>,
    stdin: Option<String>,
}

impl WorkerKernel {
    pub(crate) fn spawn(cmd: &WorkerCommand, cap: usize) -> Result<Self, SandboxError> {
        let client = WorkerClient::spawn(cmd, cap)?;
        Ok(Self { cmd: cmd.clone(), cap, client: Some(client), stdin: None })
    }

    fn apply_stdin(&mut self) -> Result<(), String> {
        let (Some(client), Some(data)) = (self.client.as_mut(), self.stdin.as_ref()) else {
            return Ok(());
        };
        let r = client.execute(&stdin_prelude(data), self.cmd.handshake_timeout).map_err(|e| e.to_string())?;
        match r.kind() {
            ErrorKind::None => Ok(()),
            _ => Err(format!("stdin binding failed: {}", r.error_summary)),
        }
    }
}

impl Kernel for WorkerKernel {
    fn execute(&mut self, source: &str, timeout: Duration) -> RawOutcome {
        let Some(client) = self.client.as_mut() else {
            return RawOutcome::crashed("kernel could not be restarted after a timeout");
        };
        match client.execute(source, timeout) {
            Ok(r) => {
                let error_kind = r.kind();
                RawOutcome { stdout: r.stdout, stderr: r.stderr, error_kind, diagnostic: r.error_summary }
            }
            Err(ClientError::Timeout(t)) => {
                // abandon the frame: replace the process, keep the session
                self.client = None;
                match WorkerClient::spawn(&self.cmd, self.cap) {
                    Ok(c) => {
                        self.client = Some(c);
                        if let Err(e) = self.apply_stdin() {
                            log::warn!("rebinding stdin after restart failed: {e}");
                            self.client = None;
                        }
                    }
                    Err(e) => log::warn!("kernel restart failed: {e}"),
                }
                RawOutcome {
                    stdout: String::new(),
                    stderr: String::new(),
                    error_kind: ErrorKind::Timeout,
                    diagnostic: format!("TimeoutError: cell exceeded {:.3}s", t.as_secs_f64()),
                }
            }
            Err(e) => {
                self.client = None;
                RawOutcome::crashed(&e.to_string())
            }
        }
    }

    fn bind_stdin(&mut self, data: &str) -> Result<(), String> {
        self.stdin = Some(data.to_string());
        self.apply_stdin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_use_the_documented_field_names() {
        let req = Request { id: 3, op: Op::Execute, code: Some("print(1)".into()) };
        assert_eq!(serde_json::to_string(&req).unwrap(), r#"{"id":3,"op":"execute","code":"print(1)"}"#);
        let ping = Request { id: 7, op: Op::Ping, code: None };
        assert_eq!(serde_json::to_string(&ping).unwrap(), r#"{"id":7,"op":"ping"}"#);
        let r: Response = serde_json::from_str(
            r#"{"id":3,"stdout":"1\n","stderr":"","error_kind":"none","error_summary":"","wall_ms":2}"#,
        )
        .unwrap();
        assert_eq!(r.kind(), ErrorKind::None);
        let r: Response = serde_json::from_str(r#"{"id":-1,"error_kind":"Syntax"}"#).unwrap();
        assert_eq!(r.kind(), ErrorKind::Syntax);
    }

    #[test]
    fn prelude_escapes_stdin() {
        let p = stdin_prelude("a \"b\"\n\\c");
        assert!(p.contains(r#"StringIO("a \"b\"\n\\c")"#), "{p}");
    }

    #[test]
    fn missing_program_is_unavailable() {
        let cmd = WorkerCommand::new("/nonexistent/ctm-kernel");
        assert!(matches!(WorkerClient::spawn(&cmd, 8192), Err(SandboxError::WorkerUnavailable(_))));
    }
}
