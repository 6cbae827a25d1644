//! Deterministic synthetic sequences: a closed planar trajectory with one camera
//! whose images are a pose-dependent window onto a seeded periodic texture.
//!
//! Identical poses give identical images, so every lap of a circle revisits the
//! same views.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_dataset_file, DatasetError, Frame, ImageBuffer, Payload, Pose, SensorKind, SensorSpec};

const TEXTURE_PERIOD: f64 = 512.0;
const PIXELS_PER_METRE: f64 = 100.0;
const WAVES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    FigureEight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub seed: u64,
    pub shape: Shape,
    pub duration_s: f64,
    pub rate_hz: f64,
    /// Time for one full lap.
    pub period_s: f64,
    pub radius_m: f64,
    pub width: u32,
    pub height: u32,
    pub rgb: bool,
    pub start_ns: u64,
    /// Mean grey level of the texture.
    pub mean_level: f64,
    /// Peak deviation from the mean level.
    pub amplitude: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            shape: Shape::Circle,
            duration_s: 10.0,
            rate_hz: 10.0,
            period_s: 10.0,
            radius_m: 2.0,
            width: 160,
            height: 120,
            rgb: false,
            start_ns: 1_000_000_000,
            mean_level: 100.0,
            amplitude: 30.0,
        }
    }
}

pub const CAMERA_ID: u32 = 0;
pub const GROUND_TRUTH_ID: u32 = 1;

impl SynthParams {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::Schema(m.to_string()));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad("duration_s must be positive");
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0 && self.rate_hz <= 1e6) {
            return bad("rate_hz must be in (0, 1e6]");
        }
        if !(self.period_s.is_finite() && self.period_s > 0.0) {
            return bad("period_s must be positive");
        }
        if !(self.radius_m.is_finite() && self.radius_m > 0.0) {
            return bad("radius_m must be positive");
        }
        if self.width < 3 || self.height < 3 {
            return bad("images must be at least 3x3");
        }
        if !(0.0..=255.0).contains(&self.mean_level) || !(0.0..=255.0).contains(&self.amplitude) {
            return bad("mean_level and amplitude must be in [0, 255]");
        }
        Ok(())
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration_s * self.rate_hz + 1e-9).floor() as u64
    }

    pub fn frame_period_ns(&self) -> u64 {
        (1e9 / self.rate_hz).round() as u64
    }

    pub fn sensors(&self) -> Vec<SensorSpec> {
        let kind = if self.rgb { SensorKind::CameraRGB } else { SensorKind::CameraGrey };
        let meta = serde_json::json!({ "width": self.width, "height": self.height, "rate_hz": self.rate_hz });
        vec![
            SensorSpec::new(CAMERA_ID, kind, "camera").with_metadata(meta.to_string()),
            SensorSpec::new(GROUND_TRUTH_ID, SensorKind::GroundTruth, "ground_truth"),
        ]
    }

    /// Position and heading on the trajectory at `t` seconds.
    pub fn pose_at(&self, timestamp_ns: u64, t: f64) -> Pose {
        let w = TAU / self.period_s;
        let r = self.radius_m;
        let (position, velocity) = match self.shape {
            Shape::Circle => (
                Vector3::new(r * (w * t).cos(), r * (w * t).sin(), 0.0),
                Vector3::new(-r * w * (w * t).sin(), r * w * (w * t).cos(), 0.0),
            ),
            Shape::FigureEight => (
                Vector3::new(r * (w * t).sin(), r * (w * t).sin() * (w * t).cos(), 0.0),
                Vector3::new(r * w * (w * t).cos(), r * w * (2.0 * w * t).cos(), 0.0),
            ),
        };
        let yaw = velocity.y.atan2(velocity.x);
        Pose::new(timestamp_ns, position, UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw))
    }
}

struct Texture {
    waves: [(f64, f64, f64); WAVES],
    mean: f64,
    amplitude: f64,
}

impl Texture {
    fn new(seed: u64, mean: f64, amplitude: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = std::array::from_fn(|_| {
            let fx = rng.random_range(-40i32..=40) as f64;
            let fy = rng.random_range(1i32..=40) as f64;
            (fx, fy, rng.random_range(0.0..TAU))
        });
        Texture { waves, mean, amplitude }
    }

    /// `sin(a + b) = sin a cos b + cos a sin b` splits every wave into per-column
    /// and per-row factors.
    fn render(&self, pose: &Pose, width: u32, height: u32, rgb: bool) -> ImageBuffer {
        let (_, _, yaw) = pose.rotation.euler_angles();
        let du = (pose.translation.x * PIXELS_PER_METRE + yaw / PI * 64.0).round();
        let dv = (pose.translation.y * PIXELS_PER_METRE).round();
        let (w, h) = (width as usize, height as usize);
        let mut cols = vec![(0.0, 0.0); WAVES * w];
        let mut rows = vec![(0.0, 0.0); WAVES * h];
        for (k, &(fx, fy, ph)) in self.waves.iter().enumerate() {
            for x in 0..w {
                cols[k * w + x] = (TAU * fx * (x as f64 + du) / TEXTURE_PERIOD + ph).sin_cos();
            }
            for y in 0..h {
                rows[k * h + y] = (TAU * fy * (y as f64 + dv) / TEXTURE_PERIOD).sin_cos();
            }
        }
        let channels = if rgb { 3 } else { 1 };
        let scale = 2.0 * self.amplitude / WAVES as f64;
        let mut pixels = Vec::with_capacity(w * h * channels);
        for y in 0..h {
            for x in 0..w {
                let s: f64 = (0..WAVES)
                    .map(|k| {
                        let (sa, ca) = cols[k * w + x];
                        let (sb, cb) = rows[k * h + y];
                        sa * cb + ca * sb
                    })
                    .sum();
                let g = (self.mean + scale * s).round().clamp(0.0, 255.0) as u8;
                pixels.extend(std::iter::repeat_n(g, channels));
            }
        }
        ImageBuffer::new(width, height, channels as u8, pixels).expect("dimensions validated")
    }
}

/// Ground-truth frame then camera frame at every timestamp.
pub fn synthesize(params: &SynthParams) -> Result<(Vec<SensorSpec>, Vec<Frame>), DatasetError> {
    params.validate()?;
    let texture = Texture::new(params.seed, params.mean_level, params.amplitude);
    let period = params.frame_period_ns();
    let mut frames = Vec::with_capacity(2 * params.frame_count() as usize);
    for i in 0..params.frame_count() {
        let ts = params.start_ns + i * period;
        let pose = params.pose_at(ts, (i * period) as f64 * 1e-9);
        let img = texture.render(&pose, params.width, params.height, params.rgb);
        frames.push(Frame::new(GROUND_TRUTH_ID, ts, Payload::Pose(pose)));
        frames.push(Frame::new(CAMERA_ID, ts, Payload::Image(img)));
    }
    for (i, f) in frames.iter_mut().enumerate() {
        f.seq_index = i as u64;
    }
    Ok((params.sensors(), frames))
}

pub fn write_synthetic(path: impl AsRef<Path>, params: &SynthParams) -> Result<(), DatasetError> {
    let (sensors, frames) = synthesize(params)?;
    write_dataset_file(path, &sensors, &frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_metrics::{compute_metrics, tenengrad};

    #[test]
    fn laps_repeat_images() {
        let p = SynthParams { duration_s: 20.0, ..Default::default() };
        let (_, frames) = synthesize(&p).unwrap();
        assert_eq!(frames.len(), 400);
        let cam: Vec<_> = frames.iter().filter(|f| f.sensor_id == CAMERA_ID).collect();
        let same = (0..100).filter(|&i| cam[i].payload == cam[i + 100].payload).count();
        assert!(same >= 95, "only {same} of 100 views repeat");
    }

    #[test]
    fn images_are_textured_and_near_mean() {
        let (_, frames) = synthesize(&SynthParams::default()).unwrap();
        for f in frames.iter().filter(|f| f.sensor_id == CAMERA_ID) {
            let img = f.payload.as_image().unwrap();
            assert!(tenengrad(img).unwrap() > 0.0);
            let m = compute_metrics(img).unwrap();
            assert!((m.brightness - 100.0).abs() < 15.0, "brightness {}", m.brightness);
        }
    }
}
