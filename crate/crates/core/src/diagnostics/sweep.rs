use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{has_stuck_pose, score_ate, thread_pool, BenchTarget, DiagnosticsError, StuckCriterion};
use crate::dataset::{extract_ground_truth, read_dataset_file, SensorSpec, Trajectory};
use crate::perturbation::{
    derive_seed, plan_segments, ConfigError, PerturbationContext, PerturbationKindName, PerturbationSpec, Segment, SegmentParams,
    Selector,
};
use crate::runner::{run_dataset, RunControl, RunnerError};

/// When a repetition counts as failed, besides crashes and timeouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepFailureRule {
    /// ATE above `ate_factor × baseline + ate_offset_m` is a failure.
    pub ate_factor: f64,
    pub ate_offset_m: f64,
    pub stuck: Option<StuckCriterion>,
}

impl Default for SweepFailureRule {
    fn default() -> Self {
        SweepFailureRule { ate_factor: 10.0, ate_offset_m: 0.1, stuck: Some(StuckCriterion::default()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub kind: PerturbationKindName,
    pub values: Vec<i64>,
    pub repetitions: u32,
    pub segments: SegmentParams,
    pub base_seed: u64,
    /// Perturbed sensors; `None` means every 8-bit camera.
    pub sensors: Option<Vec<u32>>,
    pub failure: SweepFailureRule,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    kind: String,
    #[serde(default)]
    values: Option<Vec<i64>>,
    #[serde(default)]
    start: Option<i64>,
    #[serde(default)]
    stop: Option<i64>,
    #[serde(default)]
    step: Option<i64>,
    #[serde(default = "five")]
    repetitions: u32,
    #[serde(default)]
    sensors: Option<Vec<u32>>,
    #[serde(default)]
    failure: Option<SweepFailureRule>,
}

fn five() -> u32 {
    5
}

/// Inclusive arithmetic progression; `stop` is included when reached exactly.
pub fn value_range(start: i64, stop: i64, step: i64) -> Result<Vec<i64>, ConfigError> {
    if step == 0 || (stop - start).signum() * step.signum() < 0 {
        return Err(ConfigError::new("sweep.step", format!("step {step} never reaches {stop} from {start}")));
    }
    let mut out = vec![start];
    let mut v = start;
    while (step > 0 && v + step <= stop) || (step < 0 && v + step >= stop) {
        v += step;
        out.push(v);
    }
    Ok(out)
}

/// Identity value plus every multiple of `step` in both directions that stays
/// inside the kind's range, ascending.
pub fn centered_values(kind: PerturbationKindName, step: i64) -> Result<Vec<i64>, ConfigError> {
    if step <= 0 {
        return Err(ConfigError::new("sweep.step", format!("step must be positive, got {step}")));
    }
    let (lo, hi) = kind.range();
    let id = kind.identity_value();
    let below = (id - lo) / step;
    let above = (hi - id) / step;
    Ok((-below..=above).map(|k| id + k * step).collect())
}

impl SweepSettings {
    pub fn new(kind: PerturbationKindName, values: Vec<i64>, base_seed: u64) -> Self {
        SweepSettings {
            kind,
            values,
            repetitions: 5,
            segments: SegmentParams::default(),
            base_seed,
            sensors: None,
            failure: SweepFailureRule::default(),
        }
    }

    /// Parses the `sweep` section. Values come from `values`, from `start`/`stop`/`step`,
    /// or from `step` alone (see [`centered_values`]).
    pub fn from_json(section: &Value, segments: SegmentParams, base_seed: u64) -> Result<Self, ConfigError> {
        let raw: RawSweep = serde_json::from_value(section.clone()).map_err(|e| ConfigError::new("sweep", e.to_string()))?;
        let kind = PerturbationKindName::parse(&raw.kind)
            .ok_or_else(|| ConfigError::new("sweep.kind", format!("unknown perturbation kind '{}'", raw.kind)))?;
        let values = match (raw.values, raw.start, raw.stop, raw.step) {
            (Some(v), None, None, None) => v,
            (None, Some(a), Some(b), Some(s)) => value_range(a, b, s)?,
            (None, None, None, Some(s)) => centered_values(kind, s)?,
            _ => return Err(ConfigError::new("sweep.values", "give values, start/stop/step, or step alone")),
        };
        let s = SweepSettings {
            kind,
            values,
            repetitions: raw.repetitions,
            segments,
            base_seed,
            sensors: raw.sensors,
            failure: raw.failure.unwrap_or_default(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.values.is_empty() {
            return Err(ConfigError::new("sweep.values", "no values"));
        }
        for &v in &self.values {
            self.kind.with_value(v).map_err(|e| e.prefixed("sweep"))?;
        }
        if self.repetitions == 0 {
            return Err(ConfigError::new("sweep.repetitions", "must be at least 1"));
        }
        if self.segments.segment_duration_ns == 0 || !(0.0..=1.0).contains(&self.segments.max_fraction) {
            return Err(ConfigError::new("segments", "invalid segment parameters"));
        }
        let f = &self.failure;
        if !(f.ate_factor.is_finite() && f.ate_factor >= 0.0 && f.ate_offset_m.is_finite() && f.ate_offset_m >= 0.0) {
            return Err(ConfigError::new("sweep.failure", "ate_factor and ate_offset_m must be non-negative"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("sweep settings serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepClass {
    AllSuccess,
    PartialFailure,
    TotalFailure,
}

impl SweepClass {
    pub fn classify(failures: u32, repetitions: u32) -> SweepClass {
        if failures == 0 {
            SweepClass::AllSuccess
        } else if failures < repetitions {
            SweepClass::PartialFailure
        } else {
            SweepClass::TotalFailure
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepClass::AllSuccess => "AllSuccess",
            SweepClass::PartialFailure => "PartialFailure",
            SweepClass::TotalFailure => "TotalFailure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionOutcome {
    pub repetition: u32,
    pub seed: u64,
    pub segments: Vec<Segment>,
    pub ate_rmse_m: Option<f64>,
    /// Why the repetition failed; `None` on success.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: i64,
    /// Over successful repetitions; `None` when all failed.
    pub mean_ate_m: Option<f64>,
    pub failures: u32,
    pub classification: SweepClass,
    pub repetitions: Vec<RepetitionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub settings: SweepSettings,
    pub baseline_ate_m: f64,
    pub ate_bound_m: f64,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Mean ATE is minimal at the identity value and non-decreasing away from it
    /// in both directions (points sorted by value; all-failed points count as +∞).
    pub fn is_u_shaped(&self) -> bool {
        let mut pts: Vec<(i64, f64)> =
            self.points.iter().map(|p| (p.value, p.mean_ate_m.unwrap_or(f64::INFINITY))).collect();
        pts.sort_by_key(|p| p.0);
        let identity = self.settings.kind.identity_value();
        let Some(c) = pts.iter().position(|p| p.0 == identity) else {
            return false;
        };
        pts.windows(2).enumerate().all(|(i, w)| if i < c { w[0].1 >= w[1].1 } else { w[0].1 <= w[1].1 })
    }
}

struct SequenceInfo {
    sensors: Vec<SensorSpec>,
    reference: Trajectory,
    origin_ns: u64,
    duration_ns: u64,
}

fn load_sequence(target: &BenchTarget) -> Result<SequenceInfo, DiagnosticsError> {
    let (sensors, frames) = read_dataset_file(&target.dataset)?;
    let reference = extract_ground_truth(&frames)?;
    let origin_ns = frames.first().map_or(0, |f| f.timestamp_ns);
    let duration_ns = frames.last().map_or(0, |f| f.timestamp_ns) - origin_ns;
    Ok(SequenceInfo { sensors, reference, origin_ns, duration_ns })
}

fn perturbed_sensors(settings: &SweepSettings, sensors: &[SensorSpec]) -> Vec<u32> {
    match &settings.sensors {
        Some(ids) => ids.clone(),
        None => sensors.iter().filter(|s| s.kind.is_intensity_camera()).map(|s| s.sensor_id).collect(),
    }
}

/// Launch failures other than a missing program count against the repetition.
fn is_fatal(e: &RunnerError) -> bool {
    matches!(e, RunnerError::Spawn { .. } | RunnerError::Dataset(_))
}

fn run_repetition(
    target: &BenchTarget,
    seq: &SequenceInfo,
    settings: &SweepSettings,
    sensor_ids: &[u32],
    value: i64,
    repetition: u32,
    ate_bound_m: f64,
) -> Result<RepetitionOutcome, DiagnosticsError> {
    let seed = derive_seed(settings.base_seed, value, repetition);
    let plan = plan_segments(seed, seq.duration_ns, settings.segments).with_origin(seq.origin_ns);
    let segments = plan.segments.clone();
    let spec = PerturbationSpec { kind: settings.kind.with_value(value)?, selector: Selector::sensors(sensor_ids.iter().copied()) };
    let ctx = PerturbationContext::new(vec![spec], Some(plan), &seq.sensors)?;
    let outcome = |ate: Option<f64>, failure: Option<String>| RepetitionOutcome {
        repetition,
        seed,
        segments: segments.clone(),
        ate_rmse_m: ate,
        failure,
    };
    let run = match run_dataset(&target.command, &target.dataset, &ctx, target.session, RunControl::default()) {
        Ok(run) => run,
        Err(e) if is_fatal(&e) => return Err(e.into()),
        Err(e) => return Ok(outcome(None, Some(format!("launch: {e}")))),
    };
    if run.outcome.is_failure() {
        return Ok(outcome(None, Some(format!("{:?}", run.outcome))));
    }
    let ate = match score_ate(&run, &seq.reference, target.max_gap_ns, target.errors.alignment) {
        Ok(a) => a,
        Err(e) => return Ok(outcome(None, Some(format!("ATE: {e}")))),
    };
    if settings.failure.stuck.as_ref().is_some_and(|c| has_stuck_pose(&run, c)) {
        return Ok(outcome(Some(ate), Some("stuck pose".into())));
    }
    if ate > ate_bound_m {
        return Ok(outcome(Some(ate), Some(format!("ATE {ate} m above bound {ate_bound_m} m"))));
    }
    Ok(outcome(Some(ate), None))
}

/// Runs every value × repetition on a pool of `jobs` threads (0 = one per CPU),
/// each as a fresh algorithm process with its own segment plan.
pub fn run_sweep(target: &BenchTarget, settings: &SweepSettings, jobs: usize) -> Result<SweepResult, DiagnosticsError> {
    settings.validate()?;
    let seq = load_sequence(target)?;
    let sensor_ids = perturbed_sensors(settings, &seq.sensors);

    let baseline_run = run_dataset(&target.command, &target.dataset, &PerturbationContext::none(), target.session, RunControl::default())?;
    if baseline_run.outcome.is_failure() {
        return Err(DiagnosticsError::Baseline(format!("{:?}", baseline_run.outcome)));
    }
    let baseline_ate_m = score_ate(&baseline_run, &seq.reference, target.max_gap_ns, target.errors.alignment)
        .map_err(|e| DiagnosticsError::Baseline(e.to_string()))?;
    let ate_bound_m = settings.failure.ate_factor * baseline_ate_m + settings.failure.ate_offset_m;

    let tasks: Vec<(usize, u32)> =
        (0..settings.values.len()).flat_map(|v| (0..settings.repetitions).map(move |r| (v, r))).collect();
    let pool = thread_pool(jobs)?;
    let outcomes: Vec<RepetitionOutcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(v, r)| run_repetition(target, &seq, settings, &sensor_ids, settings.values[v], r, ate_bound_m))
            .collect::<Result<_, _>>()
    })?;

    let reps = settings.repetitions as usize;
    let points = settings
        .values
        .iter()
        .zip(outcomes.chunks(reps))
        .map(|(&value, chunk)| {
            let ok: Vec<f64> = chunk.iter().filter(|o| o.failure.is_none()).filter_map(|o| o.ate_rmse_m).collect();
            let failures = (reps - ok.len()) as u32;
            SweepPoint {
                value,
                mean_ate_m: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
                failures,
                classification: SweepClass::classify(failures, settings.repetitions),
                repetitions: chunk.to_vec(),
            }
        })
        .collect();
    Ok(SweepResult { settings: settings.clone(), baseline_ate_m, ate_bound_m, points })
}
