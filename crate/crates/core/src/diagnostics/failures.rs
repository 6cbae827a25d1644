use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::image_metrics::ImageMetrics;
use crate::perturbation::ConfigError;
use crate::runner::{FrameRecord, RunRecord};
use crate::trajectory_metrics::{ErrorRecord, ErrorSeries};

pub const DEFAULT_RPE_THRESHOLD_M: f64 = 2.0;
pub const DEFAULT_WINDOW_FRAMES: u64 = 200;

/// The estimate moves less than `epsilon_m` over `window_frames` consecutive frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StuckCriterion {
    pub epsilon_m: f64,
    pub window_frames: usize,
}

impl Default for StuckCriterion {
    fn default() -> Self {
        StuckCriterion { epsilon_m: 1e-6, window_frames: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailurePredicate {
    pub rpe_threshold_m: f64,
    pub stuck: Option<StuckCriterion>,
    pub max_frame_time_ns: Option<u64>,
    pub treat_crash_as_failure: bool,
    /// Half-width of the extracted window.
    pub window_frames: u64,
}

impl Default for FailurePredicate {
    fn default() -> Self {
        FailurePredicate {
            rpe_threshold_m: DEFAULT_RPE_THRESHOLD_M,
            stuck: Some(StuckCriterion::default()),
            max_frame_time_ns: None,
            treat_crash_as_failure: true,
            window_frames: DEFAULT_WINDOW_FRAMES,
        }
    }
}

impl FailurePredicate {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rpe_threshold_m.is_finite() && self.rpe_threshold_m > 0.0) {
            return Err(ConfigError::new("failure.rpe_threshold_m", "must be positive"));
        }
        if let Some(s) = self.stuck {
            if !(s.epsilon_m.is_finite() && s.epsilon_m > 0.0) {
                return Err(ConfigError::new("failure.stuck.epsilon_m", "must be positive"));
            }
            if s.window_frames < 2 {
                return Err(ConfigError::new("failure.stuck.window_frames", "must be at least 2"));
            }
        }
        if self.max_frame_time_ns == Some(0) {
            return Err(ConfigError::new("failure.max_frame_time_ns", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Rpe,
    Stuck,
    FrameTime,
    Crash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub index: usize,
    pub seq_index: u64,
    pub timestamp_ns: u64,
    pub ate_residual_m: Option<f64>,
    pub rpe_trans_m: Option<f64>,
    pub processing_time_ns: u64,
    pub metrics: Option<ImageMetrics>,
}

/// A failure episode and the frames around it. Indices address `RunRecord::frames`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOfInterest {
    pub center_index: usize,
    pub center_seq_index: u64,
    pub center_timestamp_ns: u64,
    /// Last triggering frame of the episode.
    pub episode_end_index: usize,
    /// Inclusive window bounds, clipped to the run.
    pub start_index: usize,
    pub end_index: usize,
    /// Predicates that hold at the center frame.
    pub triggers: Vec<Trigger>,
    pub rows: Vec<WindowRow>,
}

/// Whether the estimates of the `window` frames ending at `end` all lie within
/// `epsilon` of the last one.
pub fn is_stuck_at(frames: &[FrameRecord], end: usize, crit: &StuckCriterion) -> bool {
    if end + 1 < crit.window_frames {
        return false;
    }
    let Some(anchor) = frames[end].estimate else {
        return false;
    };
    frames[end + 1 - crit.window_frames..end]
        .iter()
        .all(|f| f.estimate.is_some_and(|p| (p.translation - anchor.translation).norm() <= crit.epsilon_m))
}

/// Whether any frame of the run satisfies the stuck criterion.
pub fn has_stuck_pose(run: &RunRecord, crit: &StuckCriterion) -> bool {
    (0..run.frames.len()).any(|i| is_stuck_at(&run.frames, i, crit))
}

/// Predicates holding at every frame of the run.
pub fn frame_triggers(run: &RunRecord, errors: &ErrorSeries, pred: &FailurePredicate) -> Vec<Vec<Trigger>> {
    let by_ts: HashMap<u64, &ErrorRecord> = errors.records.iter().map(|r| (r.timestamp_ns, r)).collect();
    let n = run.frames.len();
    let mut out = Vec::with_capacity(n);
    for (i, f) in run.frames.iter().enumerate() {
        let mut t = Vec::new();
        if by_ts.get(&f.timestamp_ns).and_then(|r| r.rpe_trans_m).is_some_and(|e| e > pred.rpe_threshold_m) {
            t.push(Trigger::Rpe);
        }
        if pred.stuck.as_ref().is_some_and(|c| is_stuck_at(&run.frames, i, c)) {
            t.push(Trigger::Stuck);
        }
        if pred.max_frame_time_ns.is_some_and(|m| f.processing_time_ns > m) {
            t.push(Trigger::FrameTime);
        }
        if pred.treat_crash_as_failure && run.outcome.is_failure() && i + 1 == n {
            t.push(Trigger::Crash);
        }
        out.push(t);
    }
    out
}

/// One window per maximal run of consecutive triggering frames, centred at the
/// episode's first trigger.
pub fn detect_failures(run: &RunRecord, errors: &ErrorSeries, pred: &FailurePredicate) -> Vec<FrameOfInterest> {
    let triggers = frame_triggers(run, errors, pred);
    let by_ts: HashMap<u64, &ErrorRecord> = errors.records.iter().map(|r| (r.timestamp_ns, r)).collect();
    let n = run.frames.len();
    let w = usize::try_from(pred.window_frames).unwrap_or(usize::MAX);
    let mut windows = Vec::new();
    let mut i = 0;
    while i < n {
        if triggers[i].is_empty() {
            i += 1;
            continue;
        }
        let center = i;
        while i + 1 < n && !triggers[i + 1].is_empty() {
            i += 1;
        }
        let (start, end) = (center.saturating_sub(w), center.saturating_add(w).min(n - 1));
        let rows = (start..=end)
            .map(|k| {
                let f = &run.frames[k];
                let e = by_ts.get(&f.timestamp_ns);
                WindowRow {
                    index: k,
                    seq_index: f.seq_index,
                    timestamp_ns: f.timestamp_ns,
                    ate_residual_m: e.map(|e| e.ate_residual_m),
                    rpe_trans_m: e.and_then(|e| e.rpe_trans_m),
                    processing_time_ns: f.processing_time_ns,
                    metrics: None,
                }
            })
            .collect();
        let c = &run.frames[center];
        windows.push(FrameOfInterest {
            center_index: center,
            center_seq_index: c.seq_index,
            center_timestamp_ns: c.timestamp_ns,
            episode_end_index: i,
            start_index: start,
            end_index: end,
            triggers: triggers[center].clone(),
            rows,
        });
        i += 1;
    }
    windows
}

/// Fills `metrics` on every window row whose timestamp has an entry.
pub fn attach_metrics(windows: &mut [FrameOfInterest], metrics: &HashMap<u64, ImageMetrics>) {
    for w in windows {
        for r in &mut w.rows {
            r.metrics = metrics.get(&r.timestamp_ns).copied();
        }
    }
}
