//! Seeded, per-frame image corruption applied on the host side of the runner,
//! outside the algorithm's timed bracket. Datasets on disk are never modified.

mod config;
mod kernels;
mod segments;

pub use config::*;
pub use kernels::*;
pub use segments::*;

use std::borrow::Cow;
use std::fmt;

use crate::dataset::{Frame, ImageBuffer, Payload, SensorSpec};

/// Validation failure naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { field: field.into(), message: message.into() }
    }

    pub(crate) fn prefixed(mut self, prefix: &str) -> Self {
        self.field = if self.field.is_empty() { prefix.to_string() } else { format!("{prefix}.{}", self.field) };
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

pub fn apply_kind(img: &ImageBuffer, kind: PerturbationKind) -> ImageBuffer {
    match kind {
        PerturbationKind::Brightness { delta } => apply_brightness(img, delta),
        PerturbationKind::Contrast { level } => apply_contrast(img, level),
        PerturbationKind::Blur { kernel } => apply_blur(img, kernel),
    }
}

/// Applies every matching spec, in order, to a frame. Frames outside the plan's
/// segments (when a plan is given) or not matched by any selector are returned
/// borrowed and untouched.
pub fn perturb_frame<'a>(frame: &'a Frame, specs: &[PerturbationSpec], plan: Option<&SegmentPlan>) -> Cow<'a, Frame> {
    if let Some(plan) = plan {
        if !plan.covers(frame.timestamp_ns) {
            return Cow::Borrowed(frame);
        }
    }
    let Payload::Image(img) = &frame.payload else {
        return Cow::Borrowed(frame);
    };
    let mut current: Option<ImageBuffer> = None;
    for spec in specs {
        if spec.kind.is_identity() || !spec.selector.matches(frame.sensor_id, frame.seq_index, frame.timestamp_ns) {
            continue;
        }
        let src = current.as_ref().unwrap_or(img);
        current = Some(apply_kind(src, spec.kind));
    }
    match current {
        None => Cow::Borrowed(frame),
        Some(img) => Cow::Owned(Frame {
            sensor_id: frame.sensor_id,
            timestamp_ns: frame.timestamp_ns,
            seq_index: frame.seq_index,
            payload: Payload::Image(img),
        }),
    }
}

/// Specs and optional segment plan, validated against a sensor table once per run.
#[derive(Debug, Clone, Default)]
pub struct PerturbationContext {
    specs: Vec<PerturbationSpec>,
    plan: Option<SegmentPlan>,
}

impl PerturbationContext {
    pub fn none() -> Self {
        Self::default()
    }

    /// Fails when a spec targets a sensor that is missing or not an 8-bit camera.
    pub fn new(specs: Vec<PerturbationSpec>, plan: Option<SegmentPlan>, sensors: &[SensorSpec]) -> Result<Self, ConfigError> {
        for (i, spec) in specs.iter().enumerate() {
            for id in &spec.selector.sensors {
                match sensors.iter().find(|s| s.sensor_id == *id) {
                    None => {
                        return Err(ConfigError::new(
                            format!("perturbations[{i}].sensors"),
                            format!("sensor {id} is not in the dataset"),
                        ))
                    }
                    Some(s) if !s.kind.is_intensity_camera() => {
                        return Err(ConfigError::new(
                            format!("perturbations[{i}].sensors"),
                            format!("sensor {id} ({:?}) is not an 8-bit camera", s.kind),
                        ))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(PerturbationContext { specs, plan })
    }

    pub fn specs(&self) -> &[PerturbationSpec] {
        &self.specs
    }

    pub fn plan(&self) -> Option<&SegmentPlan> {
        self.plan.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn apply<'a>(&self, frame: &'a Frame) -> Cow<'a, Frame> {
        if self.specs.is_empty() {
            return Cow::Borrowed(frame);
        }
        perturb_frame(frame, &self.specs, self.plan.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{SensorKind, Pose};

    fn cam_frame(sensor_id: u32, ts: u64) -> Frame {
        let img = ImageBuffer::new(3, 1, 1, vec![10, 100, 250]).unwrap();
        Frame { sensor_id, timestamp_ns: ts, seq_index: 4, payload: Payload::Image(img) }
    }

    fn spec(kind: PerturbationKind) -> PerturbationSpec {
        PerturbationSpec { kind, selector: Selector::sensors([0]) }
    }

    #[test]
    fn non_matching_sensor_untouched() {
        let f = cam_frame(1, 0);
        let out = perturb_frame(&f, &[spec(PerturbationKind::Brightness { delta: 50 })], None);
        assert!(matches!(out, Cow::Borrowed(_)));
    }

    #[test]
    fn identity_brightness_untouched() {
        let f = cam_frame(0, 0);
        let out = perturb_frame(&f, &[spec(PerturbationKind::Brightness { delta: 0 })], None);
        assert_eq!(*out, f);
    }

    #[test]
    fn matching_frame_inside_segment() {
        let plan = SegmentPlan {
            seed: 0,
            params: SegmentParams::default(),
            origin_ns: 0,
            sequence_duration_ns: 10,
            segments: vec![Segment { start_ns: 5, end_ns: 8 }],
            too_short: false,
            rejection_limit_hit: false,
        };
        let specs = [spec(PerturbationKind::Brightness { delta: 25 })];
        let inside = cam_frame(0, 6);
        let out = perturb_frame(&inside, &specs, Some(&plan));
        let want = apply_brightness(inside.payload.as_image().unwrap(), 25);
        assert_eq!(out.payload, Payload::Image(want));
        assert_eq!(out.seq_index, 4);
        let outside = cam_frame(0, 8);
        assert_eq!(*perturb_frame(&outside, &specs, Some(&plan)), outside);
    }

    #[test]
    fn specs_compose_in_order() {
        let f = cam_frame(0, 0);
        let specs = [spec(PerturbationKind::Brightness { delta: 10 }), spec(PerturbationKind::Contrast { level: -255 })];
        let out = perturb_frame(&f, &specs, None);
        assert_eq!(out.payload.as_image().unwrap().pixels(), &[128, 128, 128]);
    }

    #[test]
    fn context_rejects_non_image_targets() {
        let sensors = [SensorSpec::new(0, SensorKind::CameraGrey, "c"), SensorSpec::new(1, SensorKind::GroundTruth, "gt")];
        let bad = PerturbationSpec { kind: PerturbationKind::Blur { kernel: 3 }, selector: Selector::sensors([1]) };
        assert!(PerturbationContext::new(vec![bad], None, &sensors).is_err());
        let missing = PerturbationSpec { kind: PerturbationKind::Blur { kernel: 3 }, selector: Selector::sensors([9]) };
        assert!(PerturbationContext::new(vec![missing], None, &sensors).is_err());
        let ok = spec(PerturbationKind::Blur { kernel: 3 });
        assert!(PerturbationContext::new(vec![ok], None, &sensors).is_ok());
    }

    #[test]
    fn pose_frames_pass_through() {
        let f = Frame { sensor_id: 0, timestamp_ns: 0, seq_index: 0, payload: Payload::Pose(Pose::identity(0)) };
        assert!(matches!(perturb_frame(&f, &[spec(PerturbationKind::Blur { kernel: 5 })], None), Cow::Borrowed(_)));
    }
}
