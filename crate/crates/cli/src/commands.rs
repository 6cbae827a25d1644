use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use posefuzz_core::dataset::{extract_ground_truth, open_dataset, read_dataset_file, Frame, Payload, SensorSpec};
use posefuzz_core::diagnostics::{
    attach_metrics, correlate, correlation_csv, correlation_summary_csv, detect_failures, estimate_loop_thresholds,
    loop_pairs_csv, loop_threshold_csv, loop_threshold_table, run_sweep, score_series, sweep_csv, window_rows_csv,
    windows_csv, DiagnosisReport, FailurePredicate, FrameOfInterest, LoopKindSetting, LoopSide, LoopThresholdSettings,
    StuckCriterion, SweepSettings,
};
use posefuzz_core::image_metrics::{compute_metrics, ImageMetrics};
use posefuzz_core::perturbation::{plan_segments, PerturbationContext, PerturbationKindName, SegmentConfig, SegmentPlan};
use posefuzz_core::runner::{run_sequence, RunControl, RunRecord, Session};
use posefuzz_core::synth::{write_synthetic, Shape, SynthParams};
use posefuzz_core::trajectory_metrics::{ErrorSeries, ErrorSummary};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::{DiagnoseArgs, FuzzArgs, GlobalArgs, InspectArgs, LoopArgs, RunArgs, ShapeArg, SideArg, SynthArgs, TargetArgs};
use crate::config::{resolve, Overrides, Resolved};
use crate::error::CliError;
use crate::output::OutputDir;

/// Result of a command that completed its own work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// The algorithm under test failed; the reason is printed.
    AlgorithmFailed(String),
}

fn resolve_with(global: &GlobalArgs, target: Option<&TargetArgs>) -> Result<Resolved, CliError> {
    let overrides = Overrides {
        seed: global.seed,
        output_dir: global.output_dir.clone(),
        dataset: target.and_then(|t| t.dataset.clone()),
        algorithm: target.map(|t| t.algorithm.clone()).unwrap_or_default(),
    };
    resolve(global.config.as_deref(), &overrides)
}

#[derive(Debug, Clone, Serialize)]
struct SensorStats {
    sensor_id: u32,
    kind: String,
    name: String,
    metadata: String,
    frames: u64,
    first_timestamp_ns: Option<u64>,
    last_timestamp_ns: Option<u64>,
}

pub fn inspect(args: &InspectArgs) -> Result<Status, CliError> {
    let mut reader = open_dataset(&args.dataset)?;
    let mut stats: BTreeMap<u32, SensorStats> = reader
        .sensors()
        .iter()
        .map(|s| {
            let st = SensorStats {
                sensor_id: s.sensor_id,
                kind: format!("{:?}", s.kind),
                name: s.name.clone(),
                metadata: s.metadata.clone(),
                frames: 0,
                first_timestamp_ns: None,
                last_timestamp_ns: None,
            };
            (s.sensor_id, st)
        })
        .collect();
    let (mut total, mut first, mut last) = (0u64, None, None);
    for frame in reader.by_ref() {
        let frame = frame.map_err(|e| CliError::input(format!("{}: {e} (after {total} valid frames)", args.dataset.display())))?;
        let s = stats.get_mut(&frame.sensor_id).expect("reader validates sensor ids");
        s.frames += 1;
        s.first_timestamp_ns.get_or_insert(frame.timestamp_ns);
        s.last_timestamp_ns = Some(frame.timestamp_ns);
        first.get_or_insert(frame.timestamp_ns);
        last = Some(frame.timestamp_ns);
        total += 1;
    }
    let duration_ns = match (first, last) {
        (Some(a), Some(b)) => b - a,
        _ => 0,
    };
    if args.json {
        let doc = json!({
            "dataset": args.dataset,
            "sensors": stats.values().collect::<Vec<_>>(),
            "frames": total,
            "first_timestamp_ns": first,
            "last_timestamp_ns": last,
            "duration_ns": duration_ns,
            "timestamps_non_decreasing": true,
        });
        println!("{}", serde_json::to_string_pretty(&doc).expect("value serializes"));
    } else {
        println!("dataset: {}", args.dataset.display());
        println!("sensors: {}", stats.len());
        println!("  {:>4}  {:<12} {:<20} {:>8}", "id", "kind", "name", "frames");
        for s in stats.values() {
            println!("  {:>4}  {:<12} {:<20} {:>8}", s.sensor_id, s.kind, s.name, s.frames);
        }
        println!("frames: {total}");
        if let (Some(a), Some(b)) = (first, last) {
            println!("timestamps: {a} .. {b} ns (non-decreasing)");
        }
        println!("duration: {:.3} s", duration_ns as f64 * 1e-9);
    }
    Ok(Status::Ok)
}

pub fn synth(global: &GlobalArgs, args: &SynthArgs) -> Result<Status, CliError> {
    let params = SynthParams {
        seed: global.seed.unwrap_or(0),
        shape: match args.shape {
            ShapeArg::Circle => Shape::Circle,
            ShapeArg::FigureEight => Shape::FigureEight,
        },
        duration_s: args.duration_s,
        rate_hz: args.rate_hz,
        period_s: args.period_s,
        radius_m: args.radius_m,
        width: args.width,
        height: args.height,
        rgb: args.rgb,
        ..SynthParams::default()
    };
    params.validate().map_err(|e| CliError::config(e.to_string()))?;
    write_synthetic(&args.output, &params)?;
    println!("wrote {} ({} camera frames)", args.output.display(), params.frame_count());
    Ok(Status::Ok)
}

/// Image metrics of one frame as it was sent to the algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub timestamp_ns: u64,
    pub sensor_id: u32,
    pub seq_index: u64,
    pub perturbed: bool,
    #[serde(flatten)]
    pub metrics: ImageMetrics,
}

/// Contents of run.json.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: Value,
    pub seed: u64,
    pub dataset: PathBuf,
    pub run: RunRecord,
    pub failed: bool,
    pub failure_reason: Option<String>,
    pub errors: Option<ErrorSeries>,
    /// Why `errors` is missing.
    pub score_error: Option<String>,
    pub metrics_sensor: Option<u32>,
    pub metrics: Vec<MetricsRow>,
    pub segments: Option<SegmentPlan>,
    pub windows: Vec<FrameOfInterest>,
}

impl RunReport {
    pub fn metrics_map(&self) -> HashMap<u64, ImageMetrics> {
        self.metrics
            .iter()
            .filter(|r| Some(r.sensor_id) == self.metrics_sensor)
            .map(|r| (r.timestamp_ns, r.metrics))
            .collect()
    }

    /// The scored series, or an empty one for runs without usable estimates.
    pub fn errors_or_empty(&self) -> ErrorSeries {
        self.errors.clone().unwrap_or(ErrorSeries {
            records: Vec::new(),
            summary: ErrorSummary { ate_rmse_m: f64::NAN, ate_rmse_normalized: None, rpe_trans_rmse_m: f64::NAN, pair_count: 0 },
        })
    }
}

fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("timestamp_ns,sensor_id,seq_index,perturbed,brightness,contrast,tenengrad\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.timestamp_ns, r.sensor_id, r.seq_index, r.perturbed, r.metrics.brightness, r.metrics.contrast, r.metrics.tenengrad
        ));
    }
    out
}

fn segment_plan(resolved: &Resolved, frames: &[Frame]) -> Option<SegmentPlan> {
    let cfg: SegmentConfig = resolved.perturbation.segments?;
    let origin = frames.first().map_or(0, |f| f.timestamp_ns);
    let duration = frames.last().map_or(0, |f| f.timestamp_ns) - origin;
    let seed = cfg.seed.unwrap_or(resolved.seed);
    Some(plan_segments(seed, duration, cfg.params()).with_origin(origin))
}

fn metrics_camera(sensors: &[SensorSpec], requested: Option<u32>) -> Result<Option<u32>, CliError> {
    match requested {
        Some(id) => match sensors.iter().find(|s| s.sensor_id == id) {
            Some(s) if s.kind.is_intensity_camera() => Ok(Some(id)),
            _ => Err(CliError::config(format!("metrics sensor {id} is not an 8-bit camera of the dataset"))),
        },
        None => Ok(sensors.iter().find(|s| s.kind.is_intensity_camera()).map(|s| s.sensor_id)),
    }
}

pub fn run(global: &GlobalArgs, args: &RunArgs) -> Result<Status, CliError> {
    let resolved = resolve_with(global, Some(&args.target))?;
    let dataset = resolved.dataset()?;
    let command = resolved.algorithm()?;
    let (sensors, frames) = read_dataset_file(&dataset)?;
    let plan = segment_plan(&resolved, &frames);
    let ctx = PerturbationContext::new(resolved.perturbation.perturbations.clone(), plan.clone(), &sensors)?;
    let metrics_sensor = metrics_camera(&sensors, args.metrics_sensor)?;
    let failure = resolved.config.failure.unwrap_or_default();
    let out = OutputDir::create(&resolved)?;

    let session = Session::launch(&command, &sensors, resolved.session_options())?;
    let control = RunControl { start_from: args.start_from, stop: None };
    let record = run_sequence(session, frames.iter().cloned().map(Ok), &ctx, control)?;

    let (errors, score_error) = match extract_ground_truth(&frames) {
        Err(e) => (None, Some(e.to_string())),
        Ok(reference) => match score_series(&record, &reference, resolved.config.max_gap_ns, resolved.error_options()) {
            Ok(s) => (Some(s), None),
            Err(e) => (None, Some(e.to_string())),
        },
    };

    let sent_up_to = record.frames.last().map_or(0, |f| f.seq_index);
    let metrics: Vec<MetricsRow> = frames
        .iter()
        .filter(|f| f.seq_index >= args.start_from && f.seq_index <= sent_up_to)
        .filter(|f| sensors.iter().any(|s| s.sensor_id == f.sensor_id && s.kind.is_intensity_camera()))
        .filter_map(|f| {
            let sent = ctx.apply(f);
            let Payload::Image(img) = &sent.payload else { return None };
            let m = compute_metrics(img).ok()?;
            let perturbed = matches!(sent, Cow::Owned(_));
            Some(MetricsRow { timestamp_ns: f.timestamp_ns, sensor_id: f.sensor_id, seq_index: f.seq_index, perturbed, metrics: m })
        })
        .collect();

    let mut report = RunReport {
        config: resolved.echo(),
        seed: resolved.seed,
        dataset,
        run: record,
        failed: false,
        failure_reason: None,
        errors,
        score_error,
        metrics_sensor,
        metrics,
        segments: plan,
        windows: Vec::new(),
    };
    let mut windows = detect_failures(&report.run, &report.errors_or_empty(), &failure);
    attach_metrics(&mut windows, &report.metrics_map());
    report.failure_reason = if report.run.outcome.is_failure() {
        Some(format!("{:?}", report.run.outcome))
    } else if let Some(w) = windows.first() {
        Some(format!("{:?} at frame {}", w.triggers, w.center_seq_index))
    } else {
        None
    };
    report.failed = report.failure_reason.is_some();
    report.windows = windows;

    out.write_json("run.json", &report)?;
    out.write_csv("metrics.csv", &metrics_csv(&report.metrics))?;
    if let Some(e) = &report.errors {
        out.write_csv("errors.csv", &e.to_csv())?;
    }
    if !report.windows.is_empty() {
        out.write_json("windows.json", &json!({ "windows": report.windows }))?;
        out.write_csv("windows.csv", &windows_csv(&report.windows))?;
    }

    println!("frames: {}", report.run.frames.len());
    println!("outcome: {}", serde_json::to_value(&report.run.outcome).expect("outcome serializes")["outcome"]);
    match &report.errors {
        Some(e) => println!("ate_rmse_m: {}\nrpe_trans_rmse_m: {}", e.summary.ate_rmse_m, e.summary.rpe_trans_rmse_m),
        None => println!("not scored: {}", report.score_error.as_deref().unwrap_or("unknown")),
    }
    println!("results: {}", out.path().display());
    Ok(match report.failure_reason {
        Some(r) => Status::AlgorithmFailed(r),
        None => Status::Ok,
    })
}

fn parse_kind(name: &str) -> Result<PerturbationKindName, CliError> {
    PerturbationKindName::parse(name).ok_or_else(|| CliError::config(format!("unknown perturbation kind '{name}'")))
}

pub fn fuzz(global: &GlobalArgs, args: &FuzzArgs) -> Result<Status, CliError> {
    let resolved = resolve_with(global, Some(&args.target))?;
    let target = resolved.target()?;
    let mut section = match &args.kind {
        Some(kind) => {
            let mut s = serde_json::Map::new();
            s.insert("kind".into(), kind.clone().into());
            if !args.values.is_empty() {
                s.insert("values".into(), json!(args.values));
            }
            if let Some(step) = args.step {
                s.insert("step".into(), step.into());
            }
            Value::Object(s)
        }
        None => resolved.perturbation.sweep.clone().ok_or_else(|| CliError::config("sweep: required (or pass --kind)"))?,
    };
    if let (Some(r), Some(obj)) = (args.repetitions, section.as_object_mut()) {
        obj.insert("repetitions".into(), r.into());
    }
    let segments = resolved.perturbation.segments.unwrap_or_default().params();
    let settings = SweepSettings::from_json(&section, segments, resolved.seed)?;
    let out = OutputDir::create(&resolved)?;
    let result = run_sweep(&target, &settings, global.jobs)?;
    out.write_json("sweep.json", &json!({ "sweep": result, "u_shaped": result.is_u_shaped() }))?;
    out.write_csv("sweep.csv", &sweep_csv(&result))?;
    println!("baseline_ate_m: {}", result.baseline_ate_m);
    println!("{:>8} {:>14} {:>9}  class", "value", "mean_ate_m", "failures");
    for p in &result.points {
        let ate = p.mean_ate_m.map_or("-".to_string(), |a| format!("{a:.6}"));
        println!("{:>8} {:>14} {:>5}/{:<3}  {}", p.value, ate, p.failures, p.repetitions.len(), p.classification.as_str());
    }
    println!("results: {}", out.path().display());
    Ok(Status::Ok)
}

pub fn diagnose(global: &GlobalArgs, args: &DiagnoseArgs) -> Result<Status, CliError> {
    let run_path = match &args.run {
        Some(p) => p.clone(),
        None => {
            let dir = match &global.output_dir {
                Some(d) => d.clone(),
                None => resolve_with(global, None)?.output_dir,
            };
            dir.join("run.json")
        }
    };
    let text = std::fs::read_to_string(&run_path).map_err(|e| CliError::input(format!("{}: {e}", run_path.display())))?;
    let report: RunReport =
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: not a run report: {e}", run_path.display())))?;

    let mut global = global.clone();
    if global.config.is_none() {
        global.config = Some(run_path.clone());
    }
    if global.output_dir.is_none() {
        global.output_dir = run_path.parent().map(Path::to_path_buf);
    }
    let resolved = resolve_with(&global, None)?;

    let mut pred = resolved.config.failure.unwrap_or_default();
    if let Some(v) = args.rpe_threshold_m {
        pred.rpe_threshold_m = v;
    }
    if args.no_stuck {
        pred.stuck = None;
    } else if args.stuck_epsilon_m.is_some() || args.stuck_frames.is_some() {
        let base = pred.stuck.unwrap_or_default();
        pred.stuck = Some(StuckCriterion {
            epsilon_m: args.stuck_epsilon_m.unwrap_or(base.epsilon_m),
            window_frames: args.stuck_frames.unwrap_or(base.window_frames),
        });
    }
    if let Some(ms) = args.max_frame_time_ms {
        pred.max_frame_time_ns = Some((ms * 1e6).round() as u64);
    }
    if let Some(w) = args.window_frames {
        pred.window_frames = w;
    }
    validate_predicate(&pred)?;

    let errors = report.errors_or_empty();
    let metrics = report.metrics_map();
    let mut windows = detect_failures(&report.run, &errors, &pred);
    attach_metrics(&mut windows, &metrics);
    let range = if args.correlate_first_window {
        windows.first().map(|w| (w.rows.first().map_or(0, |r| r.timestamp_ns), w.rows.last().map_or(u64::MAX, |r| r.timestamp_ns)))
    } else {
        None
    };
    let (correlation, correlation_note) = match correlate(&errors, &metrics, range) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let out = OutputDir::create(&resolved)?;
    let diag = DiagnosisReport {
        config: resolved.echo(),
        seed: resolved.seed,
        sweep: None,
        windows,
        correlation,
        loop_thresholds: None,
    };
    let mut doc = serde_json::to_value(&diag).expect("report serializes");
    doc["predicate"] = serde_json::to_value(pred).expect("predicate serializes");
    doc["run"] = json!(run_path);
    if let Some(n) = &correlation_note {
        doc["correlation_note"] = n.clone().into();
    }
    out.write_json("diagnosis.json", &doc)?;
    out.write_csv("windows.csv", &windows_csv(&diag.windows))?;
    out.write_csv("window_rows.csv", &window_rows_csv(&diag.windows))?;
    if let Some(c) = &diag.correlation {
        out.write_csv("correlation.csv", &correlation_csv(c))?;
        out.write_csv("correlation_summary.csv", &correlation_summary_csv(c))?;
    }

    println!("failure windows: {}", diag.windows.len());
    for w in &diag.windows {
        println!("  frame {} (seq {}): {:?}, rows {}..={}", w.center_index, w.center_seq_index, w.triggers, w.start_index, w.end_index);
    }
    match (&diag.correlation, &correlation_note) {
        (Some(c), _) => {
            for (name, r) in [("brightness", c.brightness), ("contrast", c.contrast), ("tenengrad", c.tenengrad)] {
                let shown = if r.undefined { "undefined".to_string() } else { format!("{:.4}", r.r) };
                println!("pearson({name}, ate): {shown}");
            }
        }
        (None, Some(n)) => println!("correlation skipped: {n}"),
        (None, None) => {}
    }
    println!("results: {}", out.path().display());
    Ok(Status::Ok)
}

fn validate_predicate(pred: &FailurePredicate) -> Result<(), CliError> {
    Ok(pred.validate()?)
}

/// Accepts a JSON array of `[a, b]` pairs or one whitespace/comma separated pair per line.
pub fn parse_pairs(text: &str) -> Result<Vec<(u64, u64)>, CliError> {
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(text).map_err(|e| CliError::config(format!("pairs: {e}")));
    }
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let bad = || CliError::config(format!("pairs line {}: expected two frame indices, got '{line}'", n + 1));
        let [a, b] = fields.as_slice() else { return Err(bad()) };
        pairs.push((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?));
    }
    Ok(pairs)
}

pub fn loopthresh(global: &GlobalArgs, args: &LoopArgs) -> Result<Status, CliError> {
    let resolved = resolve_with(global, Some(&args.target))?;
    let target = resolved.target()?;
    let text = std::fs::read_to_string(&args.pairs).map_err(|e| CliError::config(format!("{}: {e}", args.pairs.display())))?;
    let pairs = parse_pairs(&text)?;
    if pairs.is_empty() {
        return Err(CliError::config(format!("{}: no pairs", args.pairs.display())));
    }
    let mut settings = resolved.config.loop_closure.clone().unwrap_or_default();
    if let Some(kind) = &args.kind {
        let kind = parse_kind(kind)?;
        let default_inc = LoopThresholdSettings::default().kinds.iter().find(|k| k.kind == kind).map_or(1, |k| k.increment);
        settings.kinds = vec![LoopKindSetting { kind, increment: args.increment.unwrap_or(default_inc) }];
    } else if let Some(inc) = args.increment {
        for k in &mut settings.kinds {
            k.increment = inc;
        }
    }
    if let Some(h) = args.half_window {
        settings.half_window = h;
    }
    if let Some(side) = args.perturb {
        settings.perturb = match side {
            SideArg::A => LoopSide::A,
            SideArg::B => LoopSide::B,
        };
    }
    if args.sensor.is_some() {
        settings.sensor = args.sensor;
    }
    settings.validate()?;
    let out = OutputDir::create(&resolved)?;
    let est = estimate_loop_thresholds(&target, &pairs, &settings, global.jobs)?;
    out.write_json(
        "loop_thresholds.json",
        &json!({ "settings": settings, "thresholds": loop_threshold_table(&est), "estimate": est }),
    )?;
    out.write_csv("loop_thresholds.csv", &loop_threshold_csv(&est))?;
    out.write_csv("loop_pairs.csv", &loop_pairs_csv(&est))?;
    for t in &est.thresholds {
        println!("{}: {:.3} % ({} pairs, {} step {})", t.metric, t.percent_threshold, t.pairs, t.kind.as_str(), t.increment);
    }
    if !est.rejected_pairs.is_empty() {
        println!("rejected pairs (no loop without perturbation): {:?}", est.rejected_pairs);
    }
    println!("results: {}", out.path().display());
    Ok(Status::Ok)
}
