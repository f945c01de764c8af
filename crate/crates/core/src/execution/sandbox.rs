//! Client side of the sandbox worker: process lifecycle, deadlines, and the
//! helper-tool callback bridge.

use std::io::{BufReader, BufWriter};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use crate::helpers::{res_handler, ToolError};
use crate::model::{ExecStatus, ExecutionOutcome};

use super::protocol::{read_frame, write_frame, Frame, ProtocolError, PROTOCOL_VERSION};
use super::{ExecError, ExecJob, ExecSession, Executor};

const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

/// How to launch a worker process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl WorkerCommand {
    pub fn new(program: impl Into<String>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
        }
    }

    pub fn arg(mut self, arg: impl Into<String>) -> Self {
        self.args.push(arg.into());
        self
    }

    /// Splits a whitespace-separated command line.
    pub fn parse(line: &str) -> Result<Self, ExecError> {
        let mut parts = line.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| ExecError::Config("empty worker command".into()))?;
        Ok(Self {
            program: program.to_string(),
            args: parts.map(str::to_string).collect(),
        })
    }
}

struct Live {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    frames: Receiver<Result<Frame, ProtocolError>>,
}

impl Live {
    fn spawn(cmd: &WorkerCommand) -> Result<Self, ExecError> {
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| ExecError::Spawn(format!("{}: {e}", cmd.program)))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                match read_frame(&mut reader) {
                    Ok(Some(frame)) => {
                        if tx.send(Ok(frame)).is_err() {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        let mut live = Self {
            child,
            stdin,
            frames: rx,
        };
        live.handshake()?;
        Ok(live)
    }

    fn handshake(&mut self) -> Result<(), ExecError> {
        self.send(&Frame::Hello {
            version: PROTOCOL_VERSION,
        })
        .map_err(|e| ExecError::Spawn(format!("handshake: {e}")))?;
        match self.frames.recv_timeout(HANDSHAKE_TIMEOUT) {
            Ok(Ok(Frame::Hello { version })) if version == PROTOCOL_VERSION => Ok(()),
            Ok(Ok(Frame::Hello { version })) => Err(ExecError::Protocol(format!(
                "worker speaks protocol version {version}, expected {PROTOCOL_VERSION}"
            ))),
            Ok(Ok(other)) => Err(ExecError::Protocol(format!(
                "expected hello, got {}",
                other.kind()
            ))),
            Ok(Err(e)) => Err(e.into()),
            Err(_) => Err(ExecError::Spawn("worker did not complete the handshake".into())),
        }
    }

    fn send(&mut self, frame: &Frame) -> std::io::Result<()> {
        write_frame(&mut self.stdin, frame)
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn shutdown(mut self) {
        if self.send(&Frame::Shutdown).is_ok() {
            let deadline = Instant::now() + Duration::from_millis(500);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = self.child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
        }
        self.kill();
    }
}

static SESSION_COUNTER: AtomicU64 = AtomicU64::new(1);

/// One worker process, respawned on demand after a timeout or crash.
pub struct SandboxWorker {
    command: WorkerCommand,
    live: Option<Live>,
    next_id: u64,
}

enum Step {
    Done(ExecutionOutcome),
    Crashed,
    TimedOut,
}

impl SandboxWorker {
    /// Starts the worker and completes the hello handshake.
    pub fn spawn(command: WorkerCommand) -> Result<Self, ExecError> {
        let live = Live::spawn(&command)?;
        Ok(Self {
            command,
            live: Some(live),
            next_id: 1,
        })
    }

    pub fn is_running(&self) -> bool {
        self.live.is_some()
    }

    fn ensure_live(&mut self) -> Result<&mut Live, ExecError> {
        if self.live.is_none() {
            self.live = Some(Live::spawn(&self.command)?);
        }
        Ok(self.live.as_mut().expect("just spawned"))
    }

    /// Runs `job`. Timeouts and crashes become outcomes and leave the worker
    /// ready to respawn; protocol violations are errors.
    pub fn execute(
        &mut self,
        job: &ExecJob<'_>,
        session_id: Option<&str>,
    ) -> Result<ExecutionOutcome, ExecError> {
        let id = self.next_id;
        self.next_id += 1;
        let timeout = Duration::from_millis(job.limits.timeout_ms);
        let started = Instant::now();
        let deadline = started + timeout;
        let step = {
            let live = self.ensure_live()?;
            let request = Frame::ExecRequest {
                id,
                code: job.code.to_string(),
                tool_names: job.tools.iter().map(|t| t.name.clone()).collect(),
                timeout_ms: job.limits.timeout_ms,
                keep_namespace: session_id.is_some(),
                session_id: session_id.map(str::to_string),
                max_output_bytes: Some(job.limits.max_output_bytes),
                max_tool_calls: Some(job.limits.max_tool_calls),
            };
            if live.send(&request).is_err() {
                Ok(Step::Crashed)
            } else {
                Self::await_result(live, id, job, deadline)
            }
        };
        let step = match step {
            Ok(step) => step,
            Err(e) => {
                if let Some(live) = self.live.take() {
                    live.kill();
                }
                return Err(e);
            }
        };
        let elapsed = started.elapsed().as_millis() as u64;
        match step {
            Step::Done(outcome) => Ok(outcome),
            Step::TimedOut => {
                if let Some(live) = self.live.take() {
                    live.kill();
                }
                Ok(ExecutionOutcome::timeout(elapsed.max(job.limits.timeout_ms)))
            }
            Step::Crashed => {
                if let Some(live) = self.live.take() {
                    live.kill();
                }
                Ok(ExecutionOutcome::exception("worker_crash").with_duration(elapsed))
            }
        }
    }

    fn await_result(
        live: &mut Live,
        id: u64,
        job: &ExecJob<'_>,
        deadline: Instant,
    ) -> Result<Step, ExecError> {
        let mut helper_calls = 0u32;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Ok(Step::TimedOut);
            }
            let frame = match live.frames.recv_timeout(remaining) {
                Ok(Ok(frame)) => frame,
                Ok(Err(e)) => return Err(e.into()),
                Err(RecvTimeoutError::Timeout) => return Ok(Step::TimedOut),
                Err(RecvTimeoutError::Disconnected) => return Ok(Step::Crashed),
            };
            match frame {
                Frame::ExecResult {
                    id: rid,
                    status,
                    value,
                    stdout,
                    stderr,
                    duration_ms,
                } => {
                    if rid != id {
                        return Err(ExecError::Protocol(format!(
                            "exec_result id {rid} does not match request {id}"
                        )));
                    }
                    if status == ExecStatus::Timeout {
                        return Ok(Step::TimedOut);
                    }
                    let value = value.trim().to_string();
                    let status = match status {
                        ExecStatus::Ok if value.is_empty() => ExecStatus::Empty,
                        s => s,
                    };
                    return Ok(Step::Done(ExecutionOutcome {
                        status,
                        value,
                        stdout,
                        stderr,
                        duration_ms: duration_ms.min(job.limits.timeout_ms),
                    }));
                }
                Frame::LlmCallRequest { id: call_id, prompt } => {
                    helper_calls += 1;
                    let reply = if helper_calls > job.limits.max_tool_calls {
                        Frame::LlmCallResponse {
                            id: call_id,
                            completion: String::new(),
                            error: Some("helper call limit exceeded".into()),
                        }
                    } else {
                        let result = match &job.helper {
                            Some(route) => res_handler(&prompt, route),
                            None => Err(ToolError::Gateway("no completion route configured".into())),
                        };
                        match result {
                            Ok(completion) => Frame::LlmCallResponse {
                                id: call_id,
                                completion,
                                error: None,
                            },
                            Err(e) => Frame::LlmCallResponse {
                                id: call_id,
                                completion: String::new(),
                                error: Some(e.to_string()),
                            },
                        }
                    };
                    if live.send(&reply).is_err() {
                        return Ok(Step::Crashed);
                    }
                }
                Frame::Error { message } => {
                    return Err(ExecError::Protocol(format!("worker reported: {message}")))
                }
                other => {
                    return Err(ProtocolError::Unexpected(format!(
                        "{} while awaiting exec_result",
                        other.kind()
                    ))
                    .into())
                }
            }
        }
    }

    pub fn shutdown(mut self) {
        if let Some(live) = self.live.take() {
            live.shutdown();
        }
    }
}

impl Drop for SandboxWorker {
    fn drop(&mut self) {
        if let Some(live) = self.live.take() {
            live.shutdown();
        }
    }
}

/// Pool of worker processes; one in-flight execution per worker. Workers are
/// started lazily, so the pool grows to the peak concurrency of its callers.
pub struct SandboxPool {
    command: WorkerCommand,
    idle: Mutex<Vec<SandboxWorker>>,
}

impl SandboxPool {
    pub fn new(command: WorkerCommand) -> Self {
        Self {
            command,
            idle: Mutex::new(Vec::new()),
        }
    }

    /// Starts `n` workers up front (e.g. one per layer slot).
    pub fn warm(command: WorkerCommand, n: usize) -> Result<Self, ExecError> {
        let pool = Self::new(command);
        {
            let mut idle = pool.idle.lock().expect("pool lock poisoned");
            for _ in 0..n {
                idle.push(SandboxWorker::spawn(pool.command.clone())?);
            }
        }
        Ok(pool)
    }

    fn checkout(&self) -> Result<SandboxWorker, ExecError> {
        if let Some(w) = self.idle.lock().expect("pool lock poisoned").pop() {
            return Ok(w);
        }
        SandboxWorker::spawn(self.command.clone())
    }

    fn checkin(&self, worker: SandboxWorker) {
        self.idle.lock().expect("pool lock poisoned").push(worker);
    }

    pub fn idle_workers(&self) -> usize {
        self.idle.lock().expect("pool lock poisoned").len()
    }
}

impl Executor for SandboxPool {
    fn execute(&self, job: &ExecJob<'_>) -> Result<ExecutionOutcome, ExecError> {
        let mut worker = self.checkout()?;
        let result = worker.execute(job, None);
        if result.is_ok() {
            self.checkin(worker);
        }
        result
    }

    fn open_session(&self) -> Result<Box<dyn ExecSession + '_>, ExecError> {
        let worker = self.checkout()?;
        let id = SESSION_COUNTER.fetch_add(1, Ordering::Relaxed);
        Ok(Box::new(PoolSession {
            pool: self,
            worker: Some(worker),
            session_id: format!("session-{}-{id}", std::process::id()),
        }))
    }
}

/// A worker held for the duration of a multi-turn run, with a persistent
/// namespace. Returned to the pool on drop.
struct PoolSession<'a> {
    pool: &'a SandboxPool,
    worker: Option<SandboxWorker>,
    session_id: String,
}

impl ExecSession for PoolSession<'_> {
    fn execute(&mut self, job: &ExecJob<'_>) -> Result<ExecutionOutcome, ExecError> {
        let worker = self.worker.as_mut().expect("session worker present");
        worker.execute(job, Some(&self.session_id))
    }
}

impl Drop for PoolSession<'_> {
    fn drop(&mut self) {
        if let Some(w) = self.worker.take() {
            if w.is_running() {
                self.pool.checkin(w);
            }
        }
    }
}
