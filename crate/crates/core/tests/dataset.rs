use std::io::Cursor;

use nalgebra::{UnitQuaternion, Vector3};
use posefuzz_core::dataset::*;
use proptest::prelude::*;

fn image(channels: u8) -> impl Strategy<Value = Payload> {
    (1u32..6, 1u32..6).prop_flat_map(move |(w, h)| {
        prop::collection::vec(any::<u8>(), (w * h * channels as u32) as usize)
            .prop_map(move |px| Payload::Image(ImageBuffer::new(w, h, channels, px).unwrap()))
    })
}

fn payload(kind: SensorKind, ts: u64) -> BoxedStrategy<Payload> {
    let finite = -1e6f64..1e6;
    match kind {
        SensorKind::CameraRGB => image(3).boxed(),
        SensorKind::CameraGrey => image(1).boxed(),
        SensorKind::CameraDepth => (1u32..5, 1u32..5)
            .prop_flat_map(|(w, h)| {
                prop::collection::vec(any::<u16>(), (w * h) as usize)
                    .prop_map(move |d| Payload::Depth(DepthImage::new(w, h, d).unwrap()))
            })
            .boxed(),
        SensorKind::Lidar => prop::collection::vec(prop::array::uniform4(-1e4f32..1e4), 0..8)
            .prop_map(|p| Payload::PointCloud(PointCloud::new(p).unwrap()))
            .boxed(),
        SensorKind::IMU => (prop::array::uniform3(finite.clone()), prop::array::uniform3(finite))
            .prop_map(|(g, a)| Payload::Imu(ImuSample::new(g, a).unwrap()))
            .boxed(),
        SensorKind::GroundTruth => (prop::array::uniform3(-1e3f64..1e3), prop::array::uniform3(-3.2f64..3.2))
            .prop_map(move |(t, r)| {
                let q = UnitQuaternion::from_euler_angles(r[0], r[1], r[2]);
                Payload::Pose(Pose::new(ts, Vector3::from(t), q))
            })
            .boxed(),
    }
}

prop_compose! {
    fn sensor_table()(kinds in prop::collection::vec(prop::sample::select(SensorKind::ALL.to_vec()), 1..7),
                      base in 0u32..1000) -> Vec<SensorSpec> {
        kinds.into_iter().enumerate()
            .map(|(i, k)| SensorSpec::new(base + 3 * i as u32, k, format!("s{i}")).with_metadata(format!("{{\"i\":{i}}}")))
            .collect()
    }
}

fn dataset() -> impl Strategy<Value = (Vec<SensorSpec>, Vec<Frame>)> {
    sensor_table().prop_flat_map(|sensors| {
        let n = sensors.len();
        let picks = prop::collection::vec((0..n, 0u64..5_000_000), 0..25);
        (Just(sensors), picks).prop_flat_map(|(sensors, picks)| {
            let mut ts = 1_000u64;
            let frames: Vec<BoxedStrategy<Frame>> = picks
                .iter()
                .enumerate()
                .map(|(seq, &(s, dt))| {
                    ts += dt;
                    let (id, t) = (sensors[s].sensor_id, ts);
                    payload(sensors[s].kind, t)
                        .prop_map(move |p| Frame { sensor_id: id, timestamp_ns: t, seq_index: seq as u64, payload: p })
                        .boxed()
                })
                .collect();
            (Just(sensors), frames)
        })
    })
}

fn encode(sensors: &[SensorSpec], frames: &[Frame]) -> Vec<u8> {
    write_dataset(Vec::new(), sensors, frames).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_exact((sensors, frames) in dataset()) {
        let bytes = encode(&sensors, &frames);
        let reader = DatasetReader::new(Cursor::new(&bytes)).unwrap();
        prop_assert_eq!(reader.sensors(), &sensors[..]);
        let back: Vec<Frame> = reader.collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(&back, &frames);
        prop_assert_eq!(encode(&sensors, &back), bytes);
    }

    #[test]
    fn truncation_never_panics_and_errors_point_inside((sensors, frames) in dataset(), cut in 0.0f64..1.0) {
        let bytes = encode(&sensors, &frames);
        let keep = (bytes.len() as f64 * cut) as usize;
        let Ok(reader) = DatasetReader::new(Cursor::new(&bytes[..keep])) else { return Ok(()) };
        for item in reader {
            if let Err(DatasetError::Corrupt { offset, .. }) = item {
                prop_assert!(offset < keep as u64);
            }
        }
    }

    #[test]
    fn length_is_rigid_invariant(steps in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..40),
                                 rot in prop::array::uniform3(-3.1f64..3.1),
                                 shift in prop::array::uniform3(-100.0f64..100.0)) {
        let mut p = Vector3::zeros();
        let mut poses = Vec::new();
        for (i, s) in steps.iter().enumerate() {
            p += Vector3::from(*s);
            poses.push(Pose::new(i as u64 * 10, p, UnitQuaternion::identity()));
        }
        let q = UnitQuaternion::from_euler_angles(rot[0], rot[1], rot[2]);
        let moved: Vec<Pose> = poses.iter().map(|x| Pose::new(x.timestamp_ns, q * x.translation + Vector3::from(shift), x.rotation)).collect();
        let a = trajectory_length(&Trajectory::new(poses).unwrap());
        let b = trajectory_length(&Trajectory::new(moved).unwrap());
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn equal_timestamps_associate_as_identity(gaps in prop::collection::vec(1u64..1_000_000_000, 1..60)) {
        let mut t = 0;
        let poses: Vec<Pose> = gaps.iter().map(|g| { t += g; Pose::identity(t) }).collect();
        let traj = Trajectory::new(poses).unwrap();
        let pairs = associate(&traj, &traj, u64::MAX).unwrap();
        prop_assert_eq!(pairs, (0..gaps.len()).map(|i| (i, i)).collect::<Vec<_>>());
    }
}

#[test]
fn kind_mismatch_is_rejected() {
    let sensors = vec![SensorSpec::new(0, SensorKind::CameraGrey, "cam")];
    let mut bytes = Vec::new();
    encode_header(&sensors, &mut bytes).unwrap();
    let imu = Frame::new(0, 5, Payload::Imu(ImuSample::new([0.0; 3], [0.0; 3]).unwrap()));
    // bypass the writer's kind check by encoding the record directly
    encode_frame_record(&imu, &mut bytes).unwrap();
    let mut reader = DatasetReader::new(Cursor::new(bytes)).unwrap();
    assert!(matches!(reader.next(), Some(Err(DatasetError::Schema(_)))));
    assert!(reader.next().is_none());
}

#[test]
fn regression_is_reported_with_frame_index() {
    let sensors = vec![SensorSpec::new(7, SensorKind::GroundTruth, "gt")];
    let mut bytes = Vec::new();
    encode_header(&sensors, &mut bytes).unwrap();
    for ts in [10, 20, 15] {
        encode_frame_record(&Frame::new(7, ts, Payload::Pose(Pose::identity(ts))), &mut bytes).unwrap();
    }
    let items: Vec<_> = DatasetReader::new(Cursor::new(bytes)).unwrap().collect();
    assert_eq!(items.len(), 3);
    assert!(matches!(
        items[2],
        Err(DatasetError::TimestampRegression { frame_index: 2, previous_ns: 20, timestamp_ns: 15 })
    ));
}

#[test]
fn ground_truth_extraction_keeps_stream_order() {
    let (_, frames) = posefuzz_core::synth::synthesize(&posefuzz_core::synth::SynthParams::default()).unwrap();
    let gt = extract_ground_truth(&frames).unwrap();
    assert_eq!(gt.len(), 100);
    assert!(gt.poses().windows(2).all(|w| w[0].timestamp_ns < w[1].timestamp_ns));
    assert!((gt.length() - 2.0 * std::f64::consts::PI * 2.0 * 0.99).abs() < 0.01);
}
