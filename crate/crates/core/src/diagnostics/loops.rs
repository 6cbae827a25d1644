use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{thread_pool, BenchTarget, DiagnosticsError};
use crate::dataset::{read_dataset_file, ImageBuffer, Payload, SensorSpec};
use crate::image_metrics::{compute_metrics, percent_difference, ImageMetrics};
use crate::perturbation::{apply_kind, ConfigError, PerturbationContext, PerturbationKindName, PerturbationSpec, Selector};
use crate::runner::{run_dataset, FrameRecord, RunControl};

pub const LOOP_EVENT_KIND: &str = "loop_closure";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopKindSetting {
    pub kind: PerturbationKindName,
    /// Signed step added to the identity value at every iteration.
    pub increment: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopSide {
    /// Perturb the window around the earlier frame.
    #[default]
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopThresholdSettings {
    pub kinds: Vec<LoopKindSetting>,
    /// Frames on each side of a pair frame forming its window.
    pub half_window: u64,
    pub perturb: LoopSide,
    /// Camera whose frames the pairs index; `None` picks the first 8-bit camera.
    pub sensor: Option<u32>,
}

impl Default for LoopThresholdSettings {
    fn default() -> Self {
        LoopThresholdSettings {
            kinds: vec![
                LoopKindSetting { kind: PerturbationKindName::Brightness, increment: 25 },
                LoopKindSetting { kind: PerturbationKindName::Contrast, increment: -25 },
                LoopKindSetting { kind: PerturbationKindName::Blur, increment: 1 },
            ],
            half_window: 30,
            perturb: LoopSide::A,
            sensor: None,
        }
    }
}

impl LoopThresholdSettings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.kinds.is_empty() {
            return Err(ConfigError::new("loop.kinds", "no perturbation kinds"));
        }
        for k in &self.kinds {
            if k.increment == 0 {
                return Err(ConfigError::new("loop.kinds", format!("{} increment must be non-zero", k.kind.as_str())));
            }
        }
        Ok(())
    }
}

/// Image metric a perturbation kind is scored against.
pub fn metric_for_kind(kind: PerturbationKindName) -> &'static str {
    match kind {
        PerturbationKindName::Brightness => "brightness",
        PerturbationKindName::Contrast => "contrast",
        PerturbationKindName::Blur => "tenengrad",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPercents {
    pub tenengrad: f64,
    pub brightness: f64,
    pub contrast: f64,
}

impl MetricPercents {
    pub fn between(a: &ImageMetrics, b: &ImageMetrics) -> Self {
        MetricPercents {
            tenengrad: percent_difference(a.tenengrad, b.tenengrad),
            brightness: percent_difference(a.brightness, b.brightness),
            contrast: percent_difference(a.contrast, b.contrast),
        }
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "tenengrad" => Some(self.tenengrad),
            "brightness" => Some(self.brightness),
            "contrast" => Some(self.contrast),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub a: u64,
    pub b: u64,
    pub kind: PerturbationKindName,
    /// Largest perturbation for which the loop was still reported.
    pub last_value: i64,
    /// Camera-frame indices of the linked frames at `last_value` (A side first).
    pub linked: (u64, u64),
    pub percent: MetricPercents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricThreshold {
    pub metric: String,
    pub kind: PerturbationKindName,
    pub increment: i64,
    /// Mean over pairs of the percent difference at the last sustaining value.
    pub percent_threshold: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopThresholdEstimate {
    pub thresholds: Vec<MetricThreshold>,
    pub pairs: Vec<PairResult>,
    /// Pairs that do not loop without perturbation.
    pub rejected_pairs: Vec<(u64, u64)>,
}

struct Camera {
    sensors: Vec<SensorSpec>,
    sensor_id: u32,
    timestamps: Vec<u64>,
    images: Vec<ImageBuffer>,
    index_of: HashMap<u64, u64>,
}

impl Camera {
    fn load(target: &BenchTarget, sensor: Option<u32>) -> Result<Self, DiagnosticsError> {
        let (sensors, frames) = read_dataset_file(&target.dataset)?;
        let sensor_id = match sensor {
            Some(id) => id,
            None => sensors
                .iter()
                .find(|s| s.kind.is_intensity_camera())
                .map(|s| s.sensor_id)
                .ok_or_else(|| ConfigError::new("loop.sensor", "dataset has no 8-bit camera"))?,
        };
        let mut timestamps = Vec::new();
        let mut images = Vec::new();
        for f in frames {
            if f.sensor_id == sensor_id {
                if let Payload::Image(img) = f.payload {
                    timestamps.push(f.timestamp_ns);
                    images.push(img);
                }
            }
        }
        if images.is_empty() {
            return Err(ConfigError::new("loop.sensor", format!("sensor {sensor_id} has no image frames")).into());
        }
        let index_of = timestamps.iter().enumerate().map(|(i, &t)| (t, i as u64)).collect();
        Ok(Camera { sensors, sensor_id, timestamps, images, index_of })
    }

    /// Inclusive index window around `center`, clipped.
    fn window(&self, center: u64, half: u64) -> (u64, u64) {
        (center.saturating_sub(half), center.saturating_add(half).min(self.timestamps.len() as u64 - 1))
    }
}

fn loop_events(frames: &[FrameRecord], cam: &Camera) -> Vec<(u64, u64)> {
    let ts = |v: &serde_json::Value, k: &str| v.get(k).and_then(|x| x.as_u64()).and_then(|t| cam.index_of.get(&t).copied());
    frames
        .iter()
        .flat_map(|f| &f.events)
        .filter(|e| e.kind == LOOP_EVENT_KIND)
        .filter_map(|e| Some((ts(&e.data, "frame_a")?, ts(&e.data, "frame_b")?)))
        .collect()
}

/// First event joining the two windows, oriented (perturbed side, other side).
fn find_link(events: &[(u64, u64)], side: (u64, u64), other: (u64, u64)) -> Option<(u64, u64)> {
    let inside = |i: u64, w: (u64, u64)| w.0 <= i && i <= w.1;
    events.iter().find_map(|&(x, y)| {
        if inside(x, side) && inside(y, other) {
            Some((x, y))
        } else if inside(y, side) && inside(x, other) {
            Some((y, x))
        } else {
            None
        }
    })
}

fn run_events(target: &BenchTarget, cam: &Camera, ctx: &PerturbationContext, until_ts: u64) -> Result<Vec<(u64, u64)>, DiagnosticsError> {
    let mut stop = |r: &FrameRecord| r.timestamp_ns >= until_ts;
    let control = RunControl { start_from: 0, stop: Some(&mut stop) };
    let run = run_dataset(&target.command, &target.dataset, ctx, target.session, control)?;
    Ok(loop_events(&run.frames, cam))
}

fn evaluate_pair(
    target: &BenchTarget,
    cam: &Camera,
    settings: &LoopThresholdSettings,
    (a, b): (u64, u64),
    k: LoopKindSetting,
    baseline_link: (u64, u64),
) -> Result<PairResult, DiagnosticsError> {
    let wa = cam.window(a, settings.half_window);
    let wb = cam.window(b, settings.half_window);
    let (side, other) = match settings.perturb {
        LoopSide::A => (wa, wb),
        LoopSide::B => (wb, wa),
    };
    let until = cam.timestamps[wa.1.max(wb.1) as usize];
    let selector = Selector {
        sensors: [cam.sensor_id].into_iter().collect(),
        frame_ranges: Vec::new(),
        time_ranges: vec![(cam.timestamps[side.0 as usize], cam.timestamps[side.1 as usize] + 1)],
    };
    let (lo, hi) = k.kind.range();
    let mut last_value = k.kind.identity_value();
    let mut link = baseline_link;
    loop {
        let value = last_value + k.increment;
        if value < lo || value > hi {
            break;
        }
        let spec = PerturbationSpec { kind: k.kind.with_value(value)?, selector: selector.clone() };
        let ctx = PerturbationContext::new(vec![spec], None, &cam.sensors)?;
        match find_link(&run_events(target, cam, &ctx, until)?, side, other) {
            Some(l) => {
                last_value = value;
                link = l;
            }
            None => break,
        }
    }
    let perturbed_img = apply_kind(&cam.images[link.0 as usize], k.kind.with_value(last_value)?);
    let m_side = compute_metrics(&perturbed_img).map_err(|e| DiagnosticsError::InsufficientData(e.to_string()))?;
    let m_other = compute_metrics(&cam.images[link.1 as usize]).map_err(|e| DiagnosticsError::InsufficientData(e.to_string()))?;
    let (la, lb) = match settings.perturb {
        LoopSide::A => link,
        LoopSide::B => (link.1, link.0),
    };
    Ok(PairResult { a, b, kind: k.kind, last_value, linked: (la, lb), percent: MetricPercents::between(&m_side, &m_other) })
}

/// For every pair and kind, raises the perturbation on one window by the kind's
/// increment until the algorithm stops reporting a loop between the windows, then
/// averages the metric percent differences of the last linked frames over pairs.
/// `pairs` are camera-frame indices.
pub fn estimate_loop_thresholds(
    target: &BenchTarget,
    pairs: &[(u64, u64)],
    settings: &LoopThresholdSettings,
    jobs: usize,
) -> Result<LoopThresholdEstimate, DiagnosticsError> {
    settings.validate()?;
    if pairs.is_empty() {
        return Err(DiagnosticsError::InvalidPairs { rejected: Vec::new() });
    }
    let cam = Camera::load(target, settings.sensor)?;
    let n = cam.timestamps.len() as u64;
    let baseline = run_events(target, &cam, &PerturbationContext::none(), u64::MAX)?;

    let mut valid = Vec::new();
    let mut rejected = Vec::new();
    for &(a, b) in pairs {
        let (a, b) = (a.min(b), a.max(b));
        if b >= n {
            rejected.push((a, b));
            continue;
        }
        let wa = cam.window(a, settings.half_window);
        let wb = cam.window(b, settings.half_window);
        let (side, other) = match settings.perturb {
            LoopSide::A => (wa, wb),
            LoopSide::B => (wb, wa),
        };
        match find_link(&baseline, side, other) {
            Some(link) => valid.push(((a, b), link)),
            None => rejected.push((a, b)),
        }
    }
    if valid.is_empty() {
        return Err(DiagnosticsError::InvalidPairs { rejected });
    }

    let tasks: Vec<_> = valid.iter().flat_map(|&(p, l)| settings.kinds.iter().map(move |&k| (p, k, l))).collect();
    let pool = thread_pool(jobs)?;
    let results: Vec<PairResult> = pool.install(|| {
        tasks.par_iter().map(|&(p, k, l)| evaluate_pair(target, &cam, settings, p, k, l)).collect::<Result<_, _>>()
    })?;

    let thresholds = settings
        .kinds
        .iter()
        .map(|k| {
            let metric = metric_for_kind(k.kind);
            let vals: Vec<f64> = results.iter().filter(|r| r.kind == k.kind).filter_map(|r| r.percent.get(metric)).collect();
            MetricThreshold {
                metric: metric.to_string(),
                kind: k.kind,
                increment: k.increment,
                percent_threshold: vals.iter().sum::<f64>() / vals.len() as f64,
                pairs: vals.len(),
            }
        })
        .collect();
    Ok(LoopThresholdEstimate { thresholds, pairs: results, rejected_pairs: rejected })
}
