use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::protocol::*;
use super::RunnerError;
use crate::dataset::{open_dataset, DatasetError, Frame, Payload, Pose, SensorKind, SensorSpec, Trajectory};
use crate::perturbation::PerturbationContext;

const STDERR_TAIL: usize = 4096;

/// Program plus arguments. The program may itself be a container invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlgorithmCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl AlgorithmCommand {
    pub fn new(program: impl Into<String>) -> Self {
        AlgorithmCommand { program: program.into(), args: Vec::new() }
    }

    pub fn arg(mut self, a: impl Into<String>) -> Self {
        self.args.push(a.into());
        self
    }

    /// First element is the program.
    pub fn from_argv(argv: &[String]) -> Option<Self> {
        let (program, args) = argv.split_first()?;
        Some(AlgorithmCommand { program: program.clone(), args: args.to_vec() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionOptions {
    pub handshake_timeout: Duration,
    pub frame_timeout: Duration,
    /// Ground-truth frames are withheld unless this is set.
    pub send_ground_truth: bool,
    pub max_message_len: u32,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            handshake_timeout: Duration::from_secs(10),
            frame_timeout: Duration::from_secs(30),
            send_ground_truth: false,
            max_message_len: DEFAULT_MAX_MESSAGE_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoEvent {
    pub kind: String,
    pub data: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub seq_index: u64,
    pub sensor_id: u32,
    pub timestamp_ns: u64,
    pub estimate: Option<Pose>,
    /// From FRAME write completion to arrival of the ESTIMATE header.
    pub processing_time_ns: u64,
    pub tracking_status: TrackingStatus,
    pub events: Vec<AlgoEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed,
    Crashed { exit_code: Option<i32>, reason: String, stderr_tail: String },
    TimedOut { seq_index: u64 },
    /// The stop predicate fired after this frame.
    StoppedEarly { seq_index: u64 },
}

impl RunOutcome {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunOutcome::Completed)
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, RunOutcome::Crashed { .. } | RunOutcome::TimedOut { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub frames: Vec<FrameRecord>,
    #[serde(flatten)]
    pub outcome: RunOutcome,
}

impl RunRecord {
    /// Estimated poses (status Ok or Lost) in stream order; later poses with a
    /// repeated timestamp are dropped.
    pub fn estimate_trajectory(&self) -> Option<Trajectory> {
        let mut poses: Vec<Pose> = Vec::new();
        for f in &self.frames {
            if let Some(p) = f.estimate {
                if poses.last().is_none_or(|last| p.timestamp_ns > last.timestamp_ns) {
                    poses.push(p);
                }
            }
        }
        Trajectory::new(poses).ok()
    }

    pub fn mean_processing_time_ns(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(|f| f.processing_time_ns as f64).sum::<f64>() / self.frames.len() as f64
    }
}

enum Inbound {
    Message { at: Instant, msg: Message },
    Error(ProtocolError),
    Eof,
}

/// A live algorithm subprocess speaking the wire protocol over stdin/stdout.
pub struct Session {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    inbound: Receiver<Inbound>,
    stderr: Arc<Mutex<Vec<u8>>>,
    sensors: Vec<SensorSpec>,
    opts: SessionOptions,
    scratch: Vec<u8>,
}

impl Session {
    /// Spawns the algorithm, sends INIT and waits for READY.
    pub fn launch(cmd: &AlgorithmCommand, sensors: &[SensorSpec], opts: SessionOptions) -> Result<Session, RunnerError> {
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| RunnerError::Spawn { program: cmd.program.clone(), source: e })?;

        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        let max_len = opts.max_message_len;
        thread::spawn(move || {
            let mut reader = MessageReader::with_limit(stdout, max_len);
            loop {
                let item = match reader.read_message() {
                    Ok(Some(msg)) => Inbound::Message { at: reader.last_header_at().unwrap_or_else(Instant::now), msg },
                    Ok(None) => Inbound::Eof,
                    Err(e) => Inbound::Error(e),
                };
                let stop = !matches!(item, Inbound::Message { .. });
                if tx.send(item).is_err() || stop {
                    return;
                }
            }
        });

        let stderr_buf = Arc::new(Mutex::new(Vec::new()));
        let mut stderr = child.stderr.take().expect("piped stderr");
        let sink = Arc::clone(&stderr_buf);
        thread::spawn(move || {
            let mut chunk = [0u8; 1024];
            while let Ok(n) = stderr.read(&mut chunk) {
                if n == 0 {
                    break;
                }
                let mut buf = sink.lock().unwrap();
                buf.extend_from_slice(&chunk[..n]);
                if buf.len() > 2 * STDERR_TAIL {
                    let cut = buf.len() - STDERR_TAIL;
                    buf.drain(..cut);
                }
            }
        });

        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let mut session = Session {
            child,
            stdin: Some(stdin),
            inbound: rx,
            stderr: stderr_buf,
            sensors: sensors.to_vec(),
            opts,
            scratch: Vec::new(),
        };
        session.handshake()?;
        Ok(session)
    }

    fn handshake(&mut self) -> Result<(), RunnerError> {
        let init = Message::init(&self.sensors).encode();
        if let Err(e) = self.write_raw(&init) {
            return Err(self.exited_error(format!("writing INIT failed: {e}")));
        }
        match self.inbound.recv_timeout(self.opts.handshake_timeout) {
            Ok(Inbound::Message { msg: Message::Ready, .. }) => Ok(()),
            Ok(Inbound::Message { msg, .. }) => {
                self.kill();
                Err(RunnerError::UnexpectedMessage { expected: "READY", got: msg.name() })
            }
            Ok(Inbound::Error(e)) => {
                self.kill();
                Err(RunnerError::Protocol(e))
            }
            Ok(Inbound::Eof) | Err(RecvTimeoutError::Disconnected) => Err(self.exited_error("exited before READY".into())),
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Err(RunnerError::HandshakeTimeout(self.opts.handshake_timeout))
            }
        }
    }

    pub fn sensors(&self) -> &[SensorSpec] {
        &self.sensors
    }

    pub fn options(&self) -> &SessionOptions {
        &self.opts
    }

    fn write_raw(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        let w = self.stdin.as_mut().ok_or_else(|| std::io::Error::from(std::io::ErrorKind::BrokenPipe))?;
        w.write_all(bytes)?;
        w.flush()
    }

    fn stderr_tail(&self) -> String {
        let buf = self.stderr.lock().unwrap();
        let start = buf.len().saturating_sub(STDERR_TAIL);
        String::from_utf8_lossy(&buf[start..]).into_owned()
    }

    fn wait_exit(&mut self, grace: Duration) -> Option<ExitStatus> {
        let deadline = Instant::now() + grace;
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return Some(status),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(2)),
                _ => {
                    self.kill();
                    return None;
                }
            }
        }
    }

    fn exited_error(&mut self, reason: String) -> RunnerError {
        let status = self.wait_exit(Duration::from_secs(1));
        // give the stderr reader a moment to drain
        thread::sleep(Duration::from_millis(10));
        RunnerError::ChildExited { exit_code: status.and_then(|s| s.code()), reason, stderr_tail: self.stderr_tail() }
    }

    fn kill(&mut self) {
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn crashed(&mut self, reason: String) -> RunOutcome {
        match self.exited_error(reason) {
            RunnerError::ChildExited { exit_code, reason, stderr_tail } => RunOutcome::Crashed { exit_code, reason, stderr_tail },
            _ => unreachable!(),
        }
    }

    fn protocol_crash(&mut self, reason: String) -> RunOutcome {
        self.kill();
        RunOutcome::Crashed { exit_code: None, reason, stderr_tail: self.stderr_tail() }
    }

    /// Sends SHUTDOWN and reaps the child.
    pub fn shutdown(mut self) -> Option<ExitStatus> {
        let bytes = Message::Shutdown.encode();
        let _ = self.write_raw(&bytes);
        self.stdin = None;
        self.wait_exit(Duration::from_secs(5))
    }

    /// Sends one frame and waits for its ESTIMATE, collecting interleaved EVENTs.
    fn exchange(&mut self, frame: &Frame) -> Result<FrameRecord, RunOutcome> {
        let mut buf = std::mem::take(&mut self.scratch);
        if let Err(e) = encode_frame_message(frame, &mut buf) {
            self.scratch = buf;
            return Err(self.protocol_crash(format!("frame {} cannot be encoded: {e}", frame.seq_index)));
        }
        let written = self.write_raw(&buf);
        self.scratch = buf;
        if let Err(e) = written {
            return Err(self.crashed(format!("writing frame {} failed: {e}", frame.seq_index)));
        }
        let sent_at = Instant::now();
        let deadline = sent_at + self.opts.frame_timeout;
        let mut events = Vec::new();
        loop {
            let wait = deadline.saturating_duration_since(Instant::now());
            match self.inbound.recv_timeout(wait) {
                Ok(Inbound::Message { at, msg: Message::Estimate(est) }) => {
                    let estimate = match est.status {
                        TrackingStatus::NoEstimate => None,
                        _ => match est.pose() {
                            Ok(p) => Some(p),
                            Err(e) => return Err(self.protocol_crash(format!("invalid estimate pose: {e}"))),
                        },
                    };
                    return Ok(FrameRecord {
                        seq_index: frame.seq_index,
                        sensor_id: frame.sensor_id,
                        timestamp_ns: frame.timestamp_ns,
                        estimate,
                        processing_time_ns: at.saturating_duration_since(sent_at).as_nanos() as u64,
                        tracking_status: est.status,
                        events,
                    });
                }
                Ok(Inbound::Message { msg: Message::Event(text), .. }) => match serde_json::from_str::<Value>(&text) {
                    Ok(data) => {
                        let kind = data.get("kind").and_then(Value::as_str).unwrap_or("unknown").to_string();
                        events.push(AlgoEvent { kind, data });
                    }
                    Err(e) => return Err(self.protocol_crash(format!("EVENT is not JSON: {e}"))),
                },
                Ok(Inbound::Message { msg, .. }) => {
                    return Err(self.protocol_crash(format!("unexpected {} while awaiting ESTIMATE", msg.name())))
                }
                Ok(Inbound::Error(e)) => return Err(self.protocol_crash(e.to_string())),
                Ok(Inbound::Eof) | Err(RecvTimeoutError::Disconnected) => {
                    return Err(self.crashed(format!("exited while processing frame {}", frame.seq_index)))
                }
                Err(RecvTimeoutError::Timeout) => {
                    self.kill();
                    return Err(RunOutcome::TimedOut { seq_index: frame.seq_index });
                }
            }
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            self.kill();
        }
    }
}

/// Per-run controls for [`run_sequence`].
#[derive(Default)]
pub struct RunControl<'a> {
    /// Frames with a smaller `seq_index` are skipped (restart-from-frame).
    pub start_from: u64,
    /// Checked after every recorded frame; returning true stops the run.
    pub stop: Option<&'a mut dyn FnMut(&FrameRecord) -> bool>,
}

/// Streams frames through the session: perturb (untimed), send FRAME, await
/// ESTIMATE, record. Dataset errors abort with `Err`; algorithm failures end the
/// run with the corresponding [`RunOutcome`].
pub fn run_sequence<I>(
    mut session: Session,
    frames: I,
    perturbation: &PerturbationContext,
    mut control: RunControl<'_>,
) -> Result<RunRecord, RunnerError>
where
    I: IntoIterator<Item = Result<Frame, DatasetError>>,
{
    let kinds: std::collections::HashMap<u32, SensorKind> =
        session.sensors.iter().map(|s| (s.sensor_id, s.kind)).collect();
    let mut records = Vec::new();
    for frame in frames {
        let frame = frame?;
        if frame.seq_index < control.start_from {
            continue;
        }
        let is_gt = matches!(frame.payload, Payload::Pose(_)) || kinds.get(&frame.sensor_id) == Some(&SensorKind::GroundTruth);
        if is_gt && !session.opts.send_ground_truth {
            continue;
        }
        let perturbed = perturbation.apply(&frame);
        match session.exchange(&perturbed) {
            Ok(rec) => {
                let stop = control.stop.as_mut().is_some_and(|f| f(&rec));
                let seq_index = rec.seq_index;
                records.push(rec);
                if stop {
                    session.shutdown();
                    return Ok(RunRecord { frames: records, outcome: RunOutcome::StoppedEarly { seq_index } });
                }
            }
            Err(outcome) => return Ok(RunRecord { frames: records, outcome }),
        }
    }
    session.shutdown();
    Ok(RunRecord { frames: records, outcome: RunOutcome::Completed })
}

/// Launches a fresh session and replays the dataset from `start_from`.
pub fn run_dataset(
    cmd: &AlgorithmCommand,
    dataset: &Path,
    perturbation: &PerturbationContext,
    opts: SessionOptions,
    control: RunControl<'_>,
) -> Result<RunRecord, RunnerError> {
    let reader = open_dataset(dataset)?;
    let sensors = reader.sensors().to_vec();
    let session = Session::launch(cmd, &sensors, opts)?;
    run_sequence(session, reader, perturbation, control)
}
