use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Quaternions whose norm is within this distance of 1 are kept bit-for-bit.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SensorKind {
    CameraRGB,
    CameraGrey,
    CameraDepth,
    Lidar,
    IMU,
    GroundTruth,
}

impl SensorKind {
    pub const ALL: [SensorKind; 6] = [
        SensorKind::CameraRGB,
        SensorKind::CameraGrey,
        SensorKind::CameraDepth,
        SensorKind::Lidar,
        SensorKind::IMU,
        SensorKind::GroundTruth,
    ];

    pub fn code(self) -> u8 {
        match self {
            SensorKind::CameraRGB => 0,
            SensorKind::CameraGrey => 1,
            SensorKind::CameraDepth => 2,
            SensorKind::Lidar => 3,
            SensorKind::IMU => 4,
            SensorKind::GroundTruth => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Cameras carrying 8-bit intensity images (the only perturbable sensors).
    pub fn is_intensity_camera(self) -> bool {
        matches!(self, SensorKind::CameraRGB | SensorKind::CameraGrey)
    }
}

/// One entry of a dataset's sensor table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub sensor_id: u32,
    pub kind: SensorKind,
    pub name: String,
    /// Opaque JSON text (intrinsics, rates, ...).
    #[serde(default)]
    pub metadata: String,
}

impl SensorSpec {
    pub fn new(sensor_id: u32, kind: SensorKind, name: impl Into<String>) -> Self {
        SensorSpec { sensor_id, kind, name: name.into(), metadata: String::from("{}") }
    }

    pub fn with_metadata(mut self, metadata: impl Into<String>) -> Self {
        self.metadata = metadata.into();
        self
    }
}

/// Checks the sensor-table invariants: unique ids and non-empty names.
pub fn validate_sensors(sensors: &[SensorSpec]) -> Result<(), DatasetError> {
    if sensors.len() > u16::MAX as usize {
        return Err(DatasetError::Schema(format!("{} sensors exceed the u16 table size", sensors.len())));
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in sensors {
        if s.name.is_empty() {
            return Err(DatasetError::Schema(format!("sensor {} has an empty name", s.sensor_id)));
        }
        if !seen.insert(s.sensor_id) {
            return Err(DatasetError::Schema(format!("duplicate sensor id {}", s.sensor_id)));
        }
    }
    Ok(())
}

/// Row-major 8-bit image with 1 (grey) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self, DatasetError> {
        if width == 0 || height == 0 {
            return Err(DatasetError::Schema(format!("image dimensions {width}x{height} must be positive")));
        }
        if channels != 1 && channels != 3 {
            return Err(DatasetError::Schema(format!("unsupported channel count {channels}")));
        }
        let expected = (width as u64) * (height as u64) * (channels as u64);
        if pixels.len() as u64 != expected {
            return Err(DatasetError::Schema(format!(
                "image {width}x{height}x{channels} needs {expected} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(ImageBuffer { width, height, channels, pixels })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self, DatasetError> {
        let n = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; n])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    /// Same geometry, new pixel data. The length must match.
    pub(crate) fn with_pixels(&self, pixels: Vec<u8>) -> ImageBuffer {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        ImageBuffer { width: self.width, height: self.height, channels: self.channels, pixels }
    }
}

/// Single-channel depth image in millimetres.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    depth_mm: Vec<u16>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, depth_mm: Vec<u16>) -> Result<Self, DatasetError> {
        if width == 0 || height == 0 {
            return Err(DatasetError::Schema(format!("depth dimensions {width}x{height} must be positive")));
        }
        if depth_mm.len() as u64 != width as u64 * height as u64 {
            return Err(DatasetError::Schema(format!(
                "depth image {width}x{height} needs {} samples, got {}",
                width as u64 * height as u64,
                depth_mm.len()
            )));
        }
        Ok(DepthImage { width, height, depth_mm })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn depth_mm(&self) -> &[u16] {
        &self.depth_mm
    }
}

/// Points as (x, y, z, intensity); coordinates in metres.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f32; 4]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 4]>) -> Result<Self, DatasetError> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(DatasetError::Schema(format!("point {i} has a non-finite value")));
        }
        Ok(PointCloud { points })
    }

    pub fn points(&self) -> &[[f32; 4]] {
        &self.points
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// rad/s
    pub gyro: [f64; 3],
    /// m/s²
    pub accel: [f64; 3],
}

impl ImuSample {
    pub fn new(gyro: [f64; 3], accel: [f64; 3]) -> Result<Self, DatasetError> {
        if gyro.iter().chain(accel.iter()).any(|v| !v.is_finite()) {
            return Err(DatasetError::Schema("IMU sample has a non-finite value".into()));
        }
        Ok(ImuSample { gyro, accel })
    }
}

/// Timestamped rigid-body pose. The rotation is a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseRepr", try_from = "PoseRepr")]
pub struct Pose {
    pub timestamp_ns: u64,
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(timestamp_ns: u64, translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Pose { timestamp_ns, translation, rotation }
    }

    pub fn identity(timestamp_ns: u64) -> Self {
        Pose::new(timestamp_ns, Vector3::zeros(), UnitQuaternion::identity())
    }

    /// Builds a pose from raw components, normalizing the quaternion (w, x, y, z)
    /// only when its norm is off by more than [`UNIT_NORM_TOLERANCE`].
    pub fn from_components(timestamp_ns: u64, translation: [f64; 3], wxyz: [f64; 4]) -> Result<Self, DatasetError> {
        if translation.iter().chain(wxyz.iter()).any(|v| !v.is_finite()) {
            return Err(DatasetError::Schema("pose has a non-finite value".into()));
        }
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if norm < 1e-12 {
            return Err(DatasetError::Schema("pose quaternion has zero norm".into()));
        }
        let rotation = if (norm - 1.0).abs() <= UNIT_NORM_TOLERANCE {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        Ok(Pose::new(timestamp_ns, Vector3::from(translation), rotation))
    }

    /// (w, x, y, z)
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn isometry(&self) -> nalgebra::Isometry3<f64> {
        nalgebra::Isometry3::from_parts(self.translation.into(), self.rotation)
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    timestamp_ns: u64,
    translation: [f64; 3],
    rotation_wxyz: [f64; 4],
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        PoseRepr { timestamp_ns: p.timestamp_ns, translation: p.translation.into(), rotation_wxyz: p.wxyz() }
    }
}

impl TryFrom<PoseRepr> for Pose {
    type Error = DatasetError;

    fn try_from(r: PoseRepr) -> Result<Self, Self::Error> {
        Pose::from_components(r.timestamp_ns, r.translation, r.rotation_wxyz)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Image(ImageBuffer),
    Depth(DepthImage),
    PointCloud(PointCloud),
    Imu(ImuSample),
    Pose(Pose),
}

impl Payload {
    /// Whether this payload is a legal body for a sensor of `kind`.
    pub fn matches_kind(&self, kind: SensorKind) -> bool {
        match (self, kind) {
            (Payload::Image(img), SensorKind::CameraRGB) => img.channels() == 3,
            (Payload::Image(img), SensorKind::CameraGrey) => img.channels() == 1,
            (Payload::Depth(_), SensorKind::CameraDepth) => true,
            (Payload::PointCloud(_), SensorKind::Lidar) => true,
            (Payload::Imu(_), SensorKind::IMU) => true,
            (Payload::Pose(_), SensorKind::GroundTruth) => true,
            _ => false,
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            Payload::Image(_) => "image",
            Payload::Depth(_) => "depth",
            Payload::PointCloud(_) => "point cloud",
            Payload::Imu(_) => "imu",
            Payload::Pose(_) => "pose",
        }
    }

    pub fn as_image(&self) -> Option<&ImageBuffer> {
        match self {
            Payload::Image(img) => Some(img),
            _ => None,
        }
    }
}

/// One timestamped sensor reading within a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub sensor_id: u32,
    pub timestamp_ns: u64,
    /// Position in the stream, assigned by the reader.
    pub seq_index: u64,
    pub payload: Payload,
}

impl Frame {
    pub fn new(sensor_id: u32, timestamp_ns: u64, payload: Payload) -> Self {
        Frame { sensor_id, timestamp_ns, seq_index: 0, payload }
    }
}
