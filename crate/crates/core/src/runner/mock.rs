//! Built-in algorithms speaking the wire protocol, used as test doubles.
//!
//! A mock is configured by one JSON object whose `mode` field selects
//! `oracle`, `noisy` or `fault`; see [`MockConfig`].

use std::collections::HashMap;
use std::io::{self, BufWriter, Read, Write};
use std::path::PathBuf;
use std::time::Duration;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::protocol::*;
use crate::dataset::{read_dataset_file, DatasetError, Payload, Pose, SensorKind, SensorSpec};
use crate::image_metrics::{compute_metrics, percent_difference, ImageMetrics};
use crate::perturbation::derive_seed;

/// Exit status used when a mock is told to die mid-run.
pub const SCRIPTED_EXIT_CODE: i32 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    #[serde(flatten)]
    pub behavior: MockBehavior,
    /// Sleep before every ESTIMATE.
    #[serde(default)]
    pub delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MockBehavior {
    Oracle(OracleParams),
    Noisy(NoisyParams),
    Fault(FaultParams),
}

/// Replies with the exact ground-truth pose, or NoEstimate when none exists at
/// the frame's timestamp. Ground truth comes from `dataset` and from any
/// ground-truth frames the host forwards.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Exit with [`SCRIPTED_EXIT_CODE`] on receiving this many-th frame (0-based),
    /// after answering all earlier ones.
    #[serde(default)]
    pub exit_at_frame: Option<u64>,
}

/// Ground-truth motion plus leaky noise whose scale grows with image degradation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoisyParams {
    pub dataset: PathBuf,
    pub seed: u64,
    /// Noise scale per frame at quality factor 1, metres.
    pub sigma_m: f64,
    /// Fraction of the accumulated drift kept from one frame to the next.
    pub drift_decay: f64,
    pub gain_brightness: f64,
    pub gain_contrast: f64,
    pub gain_tenengrad: f64,
    pub brightness_low: f64,
    pub brightness_high: f64,
    pub tenengrad_min: f64,
    /// Consecutive bad frames before tracking is lost for good.
    pub lost_after: u32,
    /// Percent-difference bound on all three metrics for a loop closure; `None` disables loops.
    pub loop_threshold_pct: Option<f64>,
    pub loop_radius_m: f64,
    /// Minimum camera-frame distance between loop candidates.
    pub loop_min_gap: u64,
}

impl Default for NoisyParams {
    fn default() -> Self {
        NoisyParams {
            dataset: PathBuf::new(),
            seed: 0,
            sigma_m: 0.02,
            drift_decay: 0.5,
            gain_brightness: 4.0,
            gain_contrast: 4.0,
            gain_tenengrad: 4.0,
            brightness_low: 30.0,
            brightness_high: 225.0,
            tenengrad_min: 0.0,
            lost_after: 3,
            loop_threshold_pct: None,
            loop_radius_m: 0.05,
            loop_min_gap: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Non-protocol bytes instead of READY.
    Garbage,
    /// READY carrying a payload.
    BadReady,
    /// Half of an ESTIMATE, then exit.
    Truncate,
    /// A length prefix far above the host limit.
    Oversize,
    /// A message with type 0x7F.
    UnknownType,
    /// An EVENT that is not JSON.
    BadEvent,
    /// Stop replying without exiting.
    Hang,
    /// Exit without replying.
    Exit,
}

/// Behaves like the oracle until frame `at_frame` (0-based), then misbehaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultParams {
    pub fault: FaultKind,
    #[serde(default)]
    pub at_frame: u64,
}

#[derive(Debug, Error)]
pub enum MockError {
    #[error("invalid mock config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("expected {expected} but host sent {got}")]
    Unexpected { expected: &'static str, got: &'static str },
}

/// How a mock session ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockExit {
    Shutdown,
    EndOfInput,
    /// The process should exit with this code.
    Exit(i32),
    /// The process should block until killed.
    Hang,
}

impl MockConfig {
    pub fn from_json(text: &str) -> Result<Self, MockError> {
        serde_json::from_str(text).map_err(|e| MockError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mock config serializes")
    }

    pub fn oracle(dataset: Option<PathBuf>) -> Self {
        MockConfig { behavior: MockBehavior::Oracle(OracleParams { dataset, exit_at_frame: None }), delay_ms: 0 }
    }

    pub fn noisy(params: NoisyParams) -> Self {
        MockConfig { behavior: MockBehavior::Noisy(params), delay_ms: 0 }
    }

    pub fn fault(fault: FaultKind, at_frame: u64) -> Self {
        MockConfig { behavior: MockBehavior::Fault(FaultParams { fault, at_frame }), delay_ms: 0 }
    }

    pub fn with_delay_ms(mut self, ms: u64) -> Self {
        self.delay_ms = ms;
        self
    }
}

fn load_ground_truth(path: &std::path::Path) -> Result<(Vec<SensorSpec>, HashMap<u64, Pose>, Vec<(u64, ImageMetrics)>), MockError> {
    let (sensors, frames) = read_dataset_file(path)?;
    let mut gt = HashMap::new();
    let mut baseline = Vec::new();
    for f in &frames {
        match &f.payload {
            Payload::Pose(p) => {
                gt.insert(f.timestamp_ns, *p);
            }
            Payload::Image(img) => {
                if let Ok(m) = compute_metrics(img) {
                    baseline.push((f.timestamp_ns, m));
                }
            }
            _ => {}
        }
    }
    Ok((sensors, gt, baseline))
}

struct Seen {
    timestamp_ns: u64,
    camera_index: u64,
    position: Vector3<f64>,
    metrics: ImageMetrics,
}

struct NoisyState {
    params: NoisyParams,
    ground_truth: HashMap<u64, Pose>,
    baseline: HashMap<u64, ImageMetrics>,
    drift: Vector3<f64>,
    bad_streak: u32,
    lost: bool,
    last_pose: Option<Pose>,
    camera_frames: u64,
    history: Vec<Seen>,
}

impl NoisyState {
    fn new(params: NoisyParams) -> Result<Self, MockError> {
        let (_, ground_truth, baseline) = load_ground_truth(&params.dataset)?;
        Ok(NoisyState {
            params,
            ground_truth,
            baseline: baseline.into_iter().collect(),
            drift: Vector3::zeros(),
            bad_streak: 0,
            lost: false,
            last_pose: None,
            camera_frames: 0,
            history: Vec::new(),
        })
    }

    fn quality_factor(&self, m: &ImageMetrics, base: &ImageMetrics) -> f64 {
        let p = &self.params;
        let tenengrad_drop = if base.tenengrad > 0.0 { (1.0 - m.tenengrad / base.tenengrad).max(0.0) } else { 0.0 };
        1.0 + p.gain_brightness * (m.brightness - base.brightness).abs() / 255.0
            + p.gain_contrast * (m.contrast - base.contrast).abs() / base.contrast.max(1.0)
            + p.gain_tenengrad * tenengrad_drop
    }

    fn noise_direction(&self, timestamp_ns: u64) -> Vector3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.params.seed, timestamp_ns as i64, 0));
        loop {
            let v = Vector3::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            let n: f64 = v.norm();
            if n > 1e-12 {
                return v / n;
            }
        }
    }

    /// Best earlier frame (nearest in space) that closes a loop with the current one.
    fn loop_candidate(&self, position: &Vector3<f64>, metrics: &ImageMetrics) -> Option<&Seen> {
        let threshold = self.params.loop_threshold_pct?;
        let current = self.camera_frames;
        self.history
            .iter()
            .filter(|s| current >= s.camera_index + self.params.loop_min_gap)
            .filter(|s| (s.position - position).norm() <= self.params.loop_radius_m)
            .filter(|s| {
                percent_difference(s.metrics.brightness, metrics.brightness) < threshold
                    && percent_difference(s.metrics.contrast, metrics.contrast) < threshold
                    && percent_difference(s.metrics.tenengrad, metrics.tenengrad) < threshold
            })
            .min_by(|a, b| (a.position - position).norm().total_cmp(&(b.position - position).norm()))
    }

    fn on_frame(&mut self, timestamp_ns: u64, payload: Option<Payload>) -> (Estimate, Vec<String>) {
        let mut events = Vec::new();
        let Some(gt) = self.ground_truth.get(&timestamp_ns).copied() else {
            return (Estimate::no_estimate(timestamp_ns), events);
        };
        let Some(Payload::Image(img)) = payload else {
            return (Estimate::no_estimate(timestamp_ns), events);
        };
        let Ok(metrics) = compute_metrics(&img) else {
            return (Estimate::no_estimate(timestamp_ns), events);
        };
        let base = self.baseline.get(&timestamp_ns).copied().unwrap_or(metrics);
        let p = &self.params;
        let bad = metrics.brightness < p.brightness_low || metrics.brightness > p.brightness_high || metrics.tenengrad < p.tenengrad_min;
        self.bad_streak = if bad { self.bad_streak + 1 } else { 0 };
        if self.bad_streak >= p.lost_after.max(1) {
            self.lost = true;
        }

        let estimate = if self.lost {
            let frozen = self.last_pose.unwrap_or(Pose::identity(timestamp_ns));
            Estimate::from_pose(&Pose { timestamp_ns, ..frozen }, TrackingStatus::Lost)
        } else {
            let q = self.quality_factor(&metrics, &base);
            let step = self.noise_direction(timestamp_ns) * (self.params.sigma_m * q);
            self.drift = self.drift * self.params.drift_decay + step;
            let pose = Pose::new(timestamp_ns, gt.translation + self.drift, gt.rotation);
            self.last_pose = Some(pose);
            Estimate::from_pose(&pose, TrackingStatus::Ok)
        };

        if let Some(seen) = self.loop_candidate(&gt.translation, &metrics) {
            events.push(
                serde_json::json!({ "kind": "loop_closure", "frame_a": seen.timestamp_ns, "frame_b": timestamp_ns }).to_string(),
            );
        }
        if self.params.loop_threshold_pct.is_some() {
            self.history.push(Seen { timestamp_ns, camera_index: self.camera_frames, position: gt.translation, metrics });
        }
        self.camera_frames += 1;
        (estimate, events)
    }
}

enum Brain {
    Oracle { ground_truth: HashMap<u64, Pose>, exit_at: Option<u64> },
    Noisy(Box<NoisyState>),
    Fault { ground_truth: HashMap<u64, Pose>, fault: FaultKind, at: u64 },
}

fn send<W: Write>(out: &mut W, msg: &Message) -> io::Result<()> {
    write_message(out, msg)
}

/// Serves one session on the given streams. Returns how the session ended; the
/// caller turns [`MockExit::Exit`] and [`MockExit::Hang`] into process behavior.
pub fn serve<R: Read, W: Write>(config: &MockConfig, input: R, output: W) -> Result<MockExit, MockError> {
    let mut brain = match &config.behavior {
        MockBehavior::Oracle(p) => {
            let ground_truth = match &p.dataset {
                Some(path) => load_ground_truth(path)?.1,
                None => HashMap::new(),
            };
            Brain::Oracle { ground_truth, exit_at: p.exit_at_frame }
        }
        MockBehavior::Noisy(p) => Brain::Noisy(Box::new(NoisyState::new(p.clone())?)),
        MockBehavior::Fault(p) => Brain::Fault { ground_truth: HashMap::new(), fault: p.fault, at: p.at_frame },
    };
    let delay = Duration::from_millis(config.delay_ms);
    let mut reader = MessageReader::new(input);
    let mut out = BufWriter::new(output);

    let sensors: Vec<SensorSpec> = match reader.read_message()? {
        Some(Message::Init(json)) => {
            let v: serde_json::Value = serde_json::from_str(&json).map_err(|e| MockError::Config(format!("INIT: {e}")))?;
            serde_json::from_value(v["sensors"].clone()).map_err(|e| MockError::Config(format!("INIT sensors: {e}")))?
        }
        Some(other) => return Err(MockError::Unexpected { expected: "INIT", got: other.name() }),
        None => return Ok(MockExit::EndOfInput),
    };
    let kinds: HashMap<u32, SensorKind> = sensors.iter().map(|s| (s.sensor_id, s.kind)).collect();

    match brain {
        Brain::Fault { fault: FaultKind::Garbage, at: 0, .. } => {
            out.write_all(b"this is not a protocol message\n")?;
            out.flush()?;
            return Ok(MockExit::Hang);
        }
        Brain::Fault { fault: FaultKind::BadReady, .. } => {
            out.write_all(&[3, 0, 0, 0, MSG_READY, 0xAB, 0xCD])?;
            out.flush()?;
            return Ok(MockExit::Hang);
        }
        _ => send(&mut out, &Message::Ready)?,
    }

    let mut frame_count = 0u64;
    loop {
        let raw = match reader.read_message()? {
            None => return Ok(MockExit::EndOfInput),
            Some(Message::Shutdown) => return Ok(MockExit::Shutdown),
            Some(Message::Frame(raw)) => raw,
            Some(other) => return Err(MockError::Unexpected { expected: "FRAME or SHUTDOWN", got: other.name() }),
        };
        let index = frame_count;
        frame_count += 1;
        let payload = kinds.get(&raw.sensor_id).and_then(|k| raw.decode(*k).ok());
        let ts = raw.timestamp_ns;

        let (estimate, events) = match &mut brain {
            Brain::Oracle { ground_truth, exit_at } => {
                if *exit_at == Some(index) {
                    return Ok(MockExit::Exit(SCRIPTED_EXIT_CODE));
                }
                (oracle_reply(ground_truth, ts, payload), Vec::new())
            }
            Brain::Noisy(state) => state.on_frame(ts, payload),
            Brain::Fault { ground_truth, fault, at } => {
                if index == *at {
                    return inject(&mut out, *fault, ts);
                }
                (oracle_reply(ground_truth, ts, payload), Vec::new())
            }
        };
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        for e in events {
            send(&mut out, &Message::Event(e))?;
        }
        send(&mut out, &Message::Estimate(estimate))?;
    }
}

fn oracle_reply(ground_truth: &mut HashMap<u64, Pose>, ts: u64, payload: Option<Payload>) -> Estimate {
    if let Some(Payload::Pose(p)) = payload {
        ground_truth.insert(ts, p);
    }
    match ground_truth.get(&ts) {
        Some(p) => Estimate::from_pose(p, TrackingStatus::Ok),
        None => Estimate::no_estimate(ts),
    }
}

fn inject<W: Write>(out: &mut W, fault: FaultKind, ts: u64) -> Result<MockExit, MockError> {
    match fault {
        FaultKind::Truncate => {
            let bytes = Message::Estimate(Estimate::no_estimate(ts)).encode();
            out.write_all(&bytes[..bytes.len() / 2])?;
            out.flush()?;
            Ok(MockExit::Exit(0))
        }
        FaultKind::Oversize => {
            out.write_all(&u32::MAX.to_le_bytes())?;
            out.write_all(&[MSG_ESTIMATE])?;
            out.flush()?;
            Ok(MockExit::Hang)
        }
        FaultKind::UnknownType => {
            out.write_all(&[1, 0, 0, 0, 0x7F])?;
            out.flush()?;
            Ok(MockExit::Hang)
        }
        FaultKind::BadEvent => {
            send(out, &Message::Event("{not json".into()))?;
            send(out, &Message::Estimate(Estimate::no_estimate(ts)))?;
            Ok(MockExit::Hang)
        }
        FaultKind::Garbage => {
            out.write_all(b"garbage in the middle\n")?;
            out.flush()?;
            Ok(MockExit::Hang)
        }
        FaultKind::BadReady => unreachable!("handled at handshake"),
        FaultKind::Hang => Ok(MockExit::Hang),
        FaultKind::Exit => Ok(MockExit::Exit(SCRIPTED_EXIT_CODE)),
    }
}

/// Process entry point for mock binaries: serves stdin/stdout and exits.
pub fn run_process(config_json: &str) -> ! {
    let config = match MockConfig::from_json(config_json) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    };
    let stdin = io::stdin().lock();
    let stdout = io::stdout().lock();
    match serve(&config, stdin, stdout) {
        Ok(MockExit::Shutdown | MockExit::EndOfInput) => std::process::exit(0),
        Ok(MockExit::Exit(code)) => {
            eprintln!("mock: scripted exit");
            std::process::exit(code)
        }
        Ok(MockExit::Hang) => loop {
            std::thread::sleep(Duration::from_secs(3600));
        },
        Err(e) => {
            eprintln!("mock: {e}");
            std::process::exit(1);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exchange(config: &MockConfig, host: Vec<Message>) -> (MockExit, Vec<Message>) {
        let input: Vec<u8> = host.iter().flat_map(|m| m.encode()).collect();
        let mut output = Vec::new();
        let exit = serve(config, input.as_slice(), &mut output).unwrap();
        let mut reader = MessageReader::new(output.as_slice());
        let mut replies = Vec::new();
        while let Ok(Some(m)) = reader.read_message() {
            replies.push(m);
        }
        (exit, replies)
    }

    fn gt_frame(ts: u64) -> Message {
        let f = crate::dataset::Frame::new(9, ts, Payload::Pose(Pose::from_components(ts, [1.0, 2.0, 3.0], [1.0, 0.0, 0.0, 0.0]).unwrap()));
        Message::frame(&f).unwrap()
    }

    #[test]
    fn oracle_learns_forwarded_ground_truth() {
        let sensors = vec![SensorSpec::new(9, SensorKind::GroundTruth, "gt")];
        let host = vec![Message::init(&sensors), gt_frame(5), Message::Shutdown];
        let (exit, replies) = exchange(&MockConfig::oracle(None), host);
        assert_eq!(exit, MockExit::Shutdown);
        assert_eq!(replies[0], Message::Ready);
        let Message::Estimate(e) = &replies[1] else { panic!() };
        assert_eq!(e.status, TrackingStatus::Ok);
        assert_eq!(e.translation, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = MockConfig::fault(FaultKind::UnknownType, 3).with_delay_ms(5);
        let json = c.to_json();
        assert!(json.contains("\"mode\":\"fault\""));
        assert_eq!(MockConfig::from_json(&json).unwrap(), c);
        let n = MockConfig::from_json(r#"{"mode":"noisy","dataset":"x.slmf","sigma_m":0.0}"#).unwrap();
        let MockBehavior::Noisy(p) = n.behavior else { panic!() };
        assert_eq!(p.sigma_m, 0.0);
        assert_eq!(p.lost_after, 3);
    }

    #[test]
    fn scripted_exit_stops_before_reply() {
        let sensors = vec![SensorSpec::new(9, SensorKind::GroundTruth, "gt")];
        let cfg = MockConfig { behavior: MockBehavior::Oracle(OracleParams { dataset: None, exit_at_frame: Some(1) }), delay_ms: 0 };
        let (exit, replies) = exchange(&cfg, vec![Message::init(&sensors), gt_frame(1), gt_frame(2)]);
        assert_eq!(exit, MockExit::Exit(SCRIPTED_EXIT_CODE));
        assert_eq!(replies.len(), 2);
    }
}
