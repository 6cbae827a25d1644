//! `SLMF` frame-stream format.
//!
//! All multi-byte fields are little-endian:
//!
//! ```text
//! "SLMF" u16 version=1 u16 sensor_count
//! per sensor: u32 id, u8 kind, u16 name_len, name, u32 meta_len, meta
//! per frame until EOF: u32 sensor_id, u64 timestamp_ns, u32 payload_len, payload
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::types::*;
use super::DatasetError;

pub const MAGIC: [u8; 4] = *b"SLMF";
pub const VERSION: u16 = 1;
/// Bytes before the payload in a frame record.
pub const RECORD_HEADER_LEN: u64 = 4 + 8 + 4;

/// Encodes a payload body. The layout depends only on the payload variant.
pub fn encode_payload(payload: &Payload, out: &mut Vec<u8>) {
    match payload {
        Payload::Image(img) => {
            out.extend_from_slice(&img.width().to_le_bytes());
            out.extend_from_slice(&img.height().to_le_bytes());
            out.push(img.channels());
            out.extend_from_slice(img.pixels());
        }
        Payload::Depth(d) => {
            out.extend_from_slice(&d.width().to_le_bytes());
            out.extend_from_slice(&d.height().to_le_bytes());
            out.reserve(d.depth_mm().len() * 2);
            for v in d.depth_mm() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Payload::PointCloud(pc) => {
            out.extend_from_slice(&(pc.points().len() as u32).to_le_bytes());
            out.reserve(pc.points().len() * 16);
            for p in pc.points() {
                for v in p {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Payload::Imu(imu) => {
            for v in imu.gyro.iter().chain(imu.accel.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Payload::Pose(pose) => {
            for v in pose.translation.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in pose.wxyz() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

pub fn encoded_payload_len(payload: &Payload) -> u64 {
    match payload {
        Payload::Image(img) => 9 + img.pixels().len() as u64,
        Payload::Depth(d) => 8 + 2 * d.depth_mm().len() as u64,
        Payload::PointCloud(pc) => 4 + 16 * pc.points().len() as u64,
        Payload::Imu(_) => 48,
        Payload::Pose(_) => 56,
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!("payload too short: need {n} bytes at {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<(), String> {
        if self.pos != self.buf.len() {
            return Err(format!("{} trailing payload bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

/// Decodes a payload body for a sensor of `kind`; `timestamp_ns` is stamped
/// into ground-truth poses.
pub fn decode_payload(kind: SensorKind, timestamp_ns: u64, bytes: &[u8]) -> Result<Payload, DatasetError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let payload = decode_inner(kind, timestamp_ns, &mut c).map_err(DatasetError::Schema)?;
    c.finish().map_err(DatasetError::Schema)?;
    Ok(payload)
}

fn decode_inner(kind: SensorKind, timestamp_ns: u64, c: &mut Cursor<'_>) -> Result<Payload, String> {
    Ok(match kind {
        SensorKind::CameraRGB | SensorKind::CameraGrey => {
            let width = c.u32()?;
            let height = c.u32()?;
            let channels = c.take(1)?[0];
            let want = if kind == SensorKind::CameraRGB { 3 } else { 1 };
            if channels != want {
                return Err(format!("{kind:?} sensor carries a {channels}-channel image"));
            }
            let n = (width as u64)
                .checked_mul(height as u64)
                .and_then(|v| v.checked_mul(channels as u64))
                .filter(|&n| n <= (c.buf.len() - c.pos) as u64)
                .ok_or_else(|| format!("image {width}x{height}x{channels} does not fit the payload"))?;
            let pixels = c.take(n as usize)?.to_vec();
            Payload::Image(ImageBuffer::new(width, height, channels, pixels).map_err(|e| e.to_string())?)
        }
        SensorKind::CameraDepth => {
            let width = c.u32()?;
            let height = c.u32()?;
            let n = (width as u64)
                .checked_mul(height as u64)
                .filter(|&n| n.saturating_mul(2) <= (c.buf.len() - c.pos) as u64)
                .ok_or_else(|| format!("depth image {width}x{height} does not fit the payload"))?;
            let raw = c.take(n as usize * 2)?;
            let depth = raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
            Payload::Depth(DepthImage::new(width, height, depth).map_err(|e| e.to_string())?)
        }
        SensorKind::Lidar => {
            let n = c.u32()? as u64;
            if n.saturating_mul(16) != (c.buf.len() - c.pos) as u64 {
                return Err(format!("point count {n} disagrees with payload length"));
            }
            let raw = c.take(n as usize * 16)?;
            let points = raw
                .chunks_exact(16)
                .map(|p| {
                    let f = |i: usize| f32::from_le_bytes(p[i * 4..i * 4 + 4].try_into().unwrap());
                    [f(0), f(1), f(2), f(3)]
                })
                .collect();
            Payload::PointCloud(PointCloud::new(points).map_err(|e| e.to_string())?)
        }
        SensorKind::IMU => {
            let mut v = [0.0; 6];
            for x in v.iter_mut() {
                *x = c.f64()?;
            }
            Payload::Imu(ImuSample::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]).map_err(|e| e.to_string())?)
        }
        SensorKind::GroundTruth => {
            let mut t = [0.0; 3];
            for x in t.iter_mut() {
                *x = c.f64()?;
            }
            let mut q = [0.0; 4];
            for x in q.iter_mut() {
                *x = c.f64()?;
            }
            Payload::Pose(Pose::from_components(timestamp_ns, t, q).map_err(|e| e.to_string())?)
        }
    })
}

/// Encodes the record body shared by the dataset format and the FRAME wire message:
/// u32 sensor_id, u64 timestamp_ns, u32 payload_len, payload.
pub fn encode_frame_record(frame: &Frame, out: &mut Vec<u8>) -> Result<(), DatasetError> {
    let len = encoded_payload_len(&frame.payload);
    if len > u32::MAX as u64 {
        return Err(DatasetError::Schema(format!("payload of {len} bytes exceeds the u32 length field")));
    }
    out.extend_from_slice(&frame.sensor_id.to_le_bytes());
    out.extend_from_slice(&frame.timestamp_ns.to_le_bytes());
    out.extend_from_slice(&(len as u32).to_le_bytes());
    let start = out.len();
    encode_payload(&frame.payload, out);
    debug_assert_eq!((out.len() - start) as u64, len);
    Ok(())
}

pub fn encode_header(sensors: &[SensorSpec], out: &mut Vec<u8>) -> Result<(), DatasetError> {
    validate_sensors(sensors)?;
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sensors.len() as u16).to_le_bytes());
    for s in sensors {
        let name = s.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(DatasetError::Schema(format!("sensor {} name too long", s.sensor_id)));
        }
        let meta = s.metadata.as_bytes();
        if meta.len() > u32::MAX as usize {
            return Err(DatasetError::Schema(format!("sensor {} metadata too long", s.sensor_id)));
        }
        out.extend_from_slice(&s.sensor_id.to_le_bytes());
        out.push(s.kind.code());
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta);
    }
    Ok(())
}

/// Streaming writer. Validates sensor membership, payload kind and timestamp order
/// frame by frame; nothing is buffered beyond the current record.
pub struct DatasetWriter<W: Write> {
    out: W,
    kinds: HashMap<u32, SensorKind>,
    last_timestamp: Option<u64>,
    frames_written: u64,
    scratch: Vec<u8>,
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut out: W, sensors: &[SensorSpec]) -> Result<Self, DatasetError> {
        let mut header = Vec::new();
        encode_header(sensors, &mut header)?;
        out.write_all(&header)?;
        Ok(DatasetWriter {
            out,
            kinds: sensors.iter().map(|s| (s.sensor_id, s.kind)).collect(),
            last_timestamp: None,
            frames_written: 0,
            scratch: Vec::new(),
        })
    }

    pub fn write_frame(&mut self, frame: &Frame) -> Result<(), DatasetError> {
        let index = self.frames_written;
        let kind = *self
            .kinds
            .get(&frame.sensor_id)
            .ok_or(DatasetError::UnknownSensor { frame_index: index, sensor_id: frame.sensor_id })?;
        if !frame.payload.matches_kind(kind) {
            return Err(DatasetError::Schema(format!(
                "frame {index}: {} payload on {kind:?} sensor {}",
                frame.payload.describe(),
                frame.sensor_id
            )));
        }
        if let Some(prev) = self.last_timestamp {
            if frame.timestamp_ns < prev {
                return Err(DatasetError::TimestampRegression {
                    frame_index: index,
                    previous_ns: prev,
                    timestamp_ns: frame.timestamp_ns,
                });
            }
        }
        self.scratch.clear();
        encode_frame_record(frame, &mut self.scratch)?;
        self.out.write_all(&self.scratch)?;
        self.last_timestamp = Some(frame.timestamp_ns);
        self.frames_written += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> u64 {
        self.frames_written
    }

    pub fn finish(mut self) -> Result<W, DatasetError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Writes a complete dataset to `out`.
pub fn write_dataset<'a, W, I>(out: W, sensors: &[SensorSpec], frames: I) -> Result<W, DatasetError>
where
    W: Write,
    I: IntoIterator<Item = &'a Frame>,
{
    let mut writer = DatasetWriter::new(out, sensors)?;
    for frame in frames {
        writer.write_frame(frame)?;
    }
    writer.finish()
}

pub fn write_dataset_file<'a, I>(path: impl AsRef<Path>, sensors: &[SensorSpec], frames: I) -> Result<(), DatasetError>
where
    I: IntoIterator<Item = &'a Frame>,
{
    let file = File::create(path)?;
    write_dataset(BufWriter::new(file), sensors, frames)?;
    Ok(())
}

/// Reads as many bytes as available up to `buf.len()`; returns the count.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Sequential frame reader; yields frames in file order with `seq_index` 0, 1, 2, ...
/// Stops after the first error.
pub struct DatasetReader<R: Read> {
    input: R,
    sensors: Vec<SensorSpec>,
    kinds: HashMap<u32, SensorKind>,
    offset: u64,
    next_index: u64,
    last_timestamp: Option<u64>,
    done: bool,
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut input: R) -> Result<Self, DatasetError> {
        let mut offset = 0u64;
        let mut fixed = [0u8; 8];
        let n = read_full(&mut input, &mut fixed)?;
        if n < 4 || fixed[..4] != MAGIC {
            return Err(DatasetError::UnsupportedFormat(format!(
                "bad magic {:02X?}",
                &fixed[..n.min(4)]
            )));
        }
        if n < 8 {
            return Err(DatasetError::Corrupt { offset: 0, reason: "truncated header".into() });
        }
        let version = u16::from_le_bytes([fixed[4], fixed[5]]);
        if version != VERSION {
            return Err(DatasetError::UnsupportedFormat(format!("version {version}")));
        }
        let count = u16::from_le_bytes([fixed[6], fixed[7]]);
        offset += 8;

        let mut sensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let entry_start = offset;
            let truncated = || DatasetError::Corrupt { offset: entry_start, reason: "truncated sensor entry".into() };
            let mut head = [0u8; 7];
            if read_full(&mut input, &mut head)? < 7 {
                return Err(truncated());
            }
            let sensor_id = u32::from_le_bytes(head[0..4].try_into().unwrap());
            let kind = SensorKind::from_code(head[4])
                .ok_or_else(|| DatasetError::Schema(format!("sensor {sensor_id} has unknown kind code {}", head[4])))?;
            let name_len = u16::from_le_bytes([head[5], head[6]]) as usize;
            let mut name = vec![0u8; name_len];
            if read_full(&mut input, &mut name)? < name_len {
                return Err(truncated());
            }
            let mut meta_len = [0u8; 4];
            if read_full(&mut input, &mut meta_len)? < 4 {
                return Err(truncated());
            }
            let meta_len = u32::from_le_bytes(meta_len) as u64;
            let mut meta = Vec::new();
            if (&mut input).take(meta_len).read_to_end(&mut meta)? as u64 != meta_len {
                return Err(truncated());
            }
            offset += 7 + name_len as u64 + 4 + meta_len;
            let name = String::from_utf8(name)
                .map_err(|_| DatasetError::Schema(format!("sensor {sensor_id} name is not UTF-8")))?;
            let metadata = String::from_utf8(meta)
                .map_err(|_| DatasetError::Schema(format!("sensor {sensor_id} metadata is not UTF-8")))?;
            sensors.push(SensorSpec { sensor_id, kind, name, metadata });
        }
        validate_sensors(&sensors)?;
        let kinds = sensors.iter().map(|s| (s.sensor_id, s.kind)).collect();
        Ok(DatasetReader { input, sensors, kinds, offset, next_index: 0, last_timestamp: None, done: false })
    }

    pub fn sensors(&self) -> &[SensorSpec] {
        &self.sensors
    }

    /// Byte offset of the next record.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn read_record(&mut self) -> Result<Option<Frame>, DatasetError> {
        let start = self.offset;
        let mut head = [0u8; RECORD_HEADER_LEN as usize];
        let n = read_full(&mut self.input, &mut head)?;
        if n == 0 {
            return Ok(None);
        }
        let corrupt = |reason: &str| DatasetError::Corrupt { offset: start, reason: reason.to_string() };
        if n < head.len() {
            return Err(corrupt("truncated record header"));
        }
        let sensor_id = u32::from_le_bytes(head[0..4].try_into().unwrap());
        let timestamp_ns = u64::from_le_bytes(head[4..12].try_into().unwrap());
        let payload_len = u32::from_le_bytes(head[12..16].try_into().unwrap()) as u64;
        let index = self.next_index;
        let kind = *self
            .kinds
            .get(&sensor_id)
            .ok_or(DatasetError::UnknownSensor { frame_index: index, sensor_id })?;
        let mut body = Vec::new();
        if (&mut self.input).take(payload_len).read_to_end(&mut body)? as u64 != payload_len {
            return Err(corrupt("truncated payload"));
        }
        if let Some(prev) = self.last_timestamp {
            if timestamp_ns < prev {
                return Err(DatasetError::TimestampRegression { frame_index: index, previous_ns: prev, timestamp_ns });
            }
        }
        let payload = decode_payload(kind, timestamp_ns, &body).map_err(|e| match e {
            DatasetError::Schema(msg) => DatasetError::Schema(format!("frame {index} at offset {start}: {msg}")),
            other => other,
        })?;
        self.offset = start + RECORD_HEADER_LEN + payload_len;
        self.last_timestamp = Some(timestamp_ns);
        self.next_index += 1;
        Ok(Some(Frame { sensor_id, timestamp_ns, seq_index: index, payload }))
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<Frame, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_record() {
            Ok(Some(frame)) => Some(Ok(frame)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

impl<R: Read> std::iter::FusedIterator for DatasetReader<R> {}

pub type FileReader = DatasetReader<BufReader<File>>;

/// Opens a dataset file: the sensor table is parsed eagerly, frames lazily.
pub fn open_dataset(path: impl AsRef<Path>) -> Result<FileReader, DatasetError> {
    let file = File::open(path)?;
    DatasetReader::new(BufReader::new(file))
}

/// Reads the whole dataset into memory.
pub fn read_dataset_file(path: impl AsRef<Path>) -> Result<(Vec<SensorSpec>, Vec<Frame>), DatasetError> {
    let reader = open_dataset(path)?;
    let sensors = reader.sensors().to_vec();
    let frames = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((sensors, frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};

    fn grey_sensor() -> SensorSpec {
        SensorSpec::new(0, SensorKind::CameraGrey, "cam0")
    }

    fn tiny_frame(ts: u64) -> Frame {
        Frame::new(0, ts, Payload::Image(ImageBuffer::new(2, 2, 1, vec![1, 2, 3, 4]).unwrap()))
    }

    #[test]
    fn empty_stream_is_header_only() {
        let bytes = write_dataset(Vec::new(), &[grey_sensor()], std::iter::empty()).unwrap();
        assert_eq!(&bytes[..4], b"SLMF");
        // magic + version + count + (id, kind, name_len, "cam0", meta_len, "{}")
        assert_eq!(bytes.len(), 8 + 4 + 1 + 2 + 4 + 4 + 2);
        let reader = DatasetReader::new(bytes.as_slice()).unwrap();
        assert_eq!(reader.sensors().len(), 1);
        assert_eq!(reader.count(), 0);
    }

    #[test]
    fn two_by_two_grey_payload_is_thirteen_bytes() {
        let header = write_dataset(Vec::new(), &[grey_sensor()], std::iter::empty()).unwrap();
        let bytes = write_dataset(Vec::new(), &[grey_sensor()], [&tiny_frame(5)]).unwrap();
        let record = &bytes[header.len()..];
        let payload_len = u32::from_le_bytes(record[12..16].try_into().unwrap());
        assert_eq!(payload_len, 13);
        assert_eq!(record.len(), 16 + 13);
        assert_eq!(&record[16..], &[2, 0, 0, 0, 2, 0, 0, 0, 1, 1, 2, 3, 4]);
    }

    #[test]
    fn bad_magic_is_unsupported() {
        let err = DatasetReader::new(&b"XXXX\x01\x00\x00\x00"[..]).err().unwrap();
        assert!(matches!(err, DatasetError::UnsupportedFormat(_)));
    }

    #[test]
    fn wrong_version_is_unsupported() {
        let err = DatasetReader::new(&b"SLMF\x02\x00\x00\x00"[..]).err().unwrap();
        assert!(matches!(err, DatasetError::UnsupportedFormat(_)));
    }

    #[test]
    fn truncated_payload_reports_record_start() {
        let header_len = write_dataset(Vec::new(), &[grey_sensor()], std::iter::empty()).unwrap().len() as u64;
        let frames = [tiny_frame(0), tiny_frame(1)];
        let bytes = write_dataset(Vec::new(), &[grey_sensor()], frames.iter()).unwrap();
        let second = header_len + 29;
        let cut = &bytes[..(second + 20) as usize];
        let results: Vec<_> = DatasetReader::new(cut).unwrap().collect();
        assert_eq!(results.len(), 2);
        assert!(results[0].is_ok());
        match &results[1] {
            Err(DatasetError::Corrupt { offset, .. }) => assert_eq!(*offset, second),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn payload_kind_mismatch_is_schema_error() {
        // an RGB image record on a grey sensor
        let mut bytes = Vec::new();
        encode_header(&[grey_sensor()], &mut bytes).unwrap();
        let rgb = Frame::new(0, 0, Payload::Image(ImageBuffer::filled(1, 1, 3, 9).unwrap()));
        encode_frame_record(&rgb, &mut bytes).unwrap();
        let err = DatasetReader::new(bytes.as_slice()).unwrap().next().unwrap().unwrap_err();
        assert!(matches!(err, DatasetError::Schema(_)), "{err:?}");
    }

    #[test]
    fn writer_rejects_unknown_sensor_and_regression() {
        let mut w = DatasetWriter::new(Vec::new(), &[grey_sensor()]).unwrap();
        w.write_frame(&tiny_frame(10)).unwrap();
        let mut stranger = tiny_frame(11);
        stranger.sensor_id = 7;
        assert!(matches!(
            w.write_frame(&stranger),
            Err(DatasetError::UnknownSensor { frame_index: 1, sensor_id: 7 })
        ));
        assert!(matches!(w.write_frame(&tiny_frame(9)), Err(DatasetError::TimestampRegression { .. })));
    }

    #[test]
    fn non_finite_point_rejected_on_read() {
        let lidar = SensorSpec::new(3, SensorKind::Lidar, "lidar");
        let mut bytes = Vec::new();
        encode_header(&[lidar], &mut bytes).unwrap();
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        bytes.extend_from_slice(&20u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        for v in [1.0f32, f32::NAN, 0.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let err = DatasetReader::new(bytes.as_slice()).unwrap().next().unwrap().unwrap_err();
        assert!(matches!(err, DatasetError::Schema(_)));
    }

    #[test]
    fn pose_quaternion_normalized_on_ingest() {
        let gt = SensorSpec::new(5, SensorKind::GroundTruth, "gt");
        let mut bytes = Vec::new();
        encode_header(&[gt], &mut bytes).unwrap();
        bytes.extend_from_slice(&5u32.to_le_bytes());
        bytes.extend_from_slice(&42u64.to_le_bytes());
        bytes.extend_from_slice(&56u32.to_le_bytes());
        for v in [1.0f64, 2.0, 3.0, 2.0, 0.0, 0.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let frame = DatasetReader::new(bytes.as_slice()).unwrap().next().unwrap().unwrap();
        let Payload::Pose(p) = frame.payload else { panic!() };
        assert_eq!(p.timestamp_ns, 42);
        assert_eq!(p.wxyz(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.translation, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn pose_roundtrip_is_bit_exact() {
        let q = UnitQuaternion::from_euler_angles(0.3, -1.1, 2.9);
        let pose = Pose::new(7, Vector3::new(0.1, 0.2, 0.3), q);
        let mut buf = Vec::new();
        encode_payload(&Payload::Pose(pose), &mut buf);
        let back = decode_payload(SensorKind::GroundTruth, 7, &buf).unwrap();
        assert_eq!(back, Payload::Pose(pose));
    }
}
