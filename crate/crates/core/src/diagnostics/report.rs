//! CSV renderings of diagnostics tables ('.' decimals, LF endings, shortest
//! round-trip float formatting) and the combined JSON report.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CorrelationTable, FrameOfInterest, LoopThresholdEstimate, SweepResult};

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from("value,mean_ate_m,failures,repetitions,classification\n");
    for p in &result.points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.value,
            opt(p.mean_ate_m),
            p.failures,
            p.repetitions.len(),
            p.classification.as_str()
        ));
    }
    out
}

pub fn windows_csv(windows: &[FrameOfInterest]) -> String {
    let mut out = String::from("center_index,center_seq_index,center_timestamp_ns,episode_end_index,start_index,end_index,triggers\n");
    for w in windows {
        let triggers: Vec<String> = w.triggers.iter().map(|t| serde_json::to_value(t).unwrap().as_str().unwrap().to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            w.center_index,
            w.center_seq_index,
            w.center_timestamp_ns,
            w.episode_end_index,
            w.start_index,
            w.end_index,
            triggers.join("|")
        ));
    }
    out
}

/// One line per frame of every window, keyed by the window's center index.
pub fn window_rows_csv(windows: &[FrameOfInterest]) -> String {
    let mut out = String::from(
        "window_center,index,seq_index,timestamp_ns,ate_residual_m,rpe_trans_m,processing_time_ns,brightness,contrast,tenengrad\n",
    );
    for w in windows {
        for r in &w.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                w.center_index,
                r.index,
                r.seq_index,
                r.timestamp_ns,
                opt(r.ate_residual_m),
                opt(r.rpe_trans_m),
                r.processing_time_ns,
                opt(r.metrics.map(|m| m.brightness)),
                opt(r.metrics.map(|m| m.contrast)),
                opt(r.metrics.map(|m| m.tenengrad)),
            ));
        }
    }
    out
}

pub fn correlation_csv(table: &CorrelationTable) -> String {
    let mut out = String::from("timestamp_ns,error_m,brightness,contrast,tenengrad\n");
    for r in &table.rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.timestamp_ns, r.error_m, r.brightness, r.contrast, r.tenengrad));
    }
    out
}

pub fn correlation_summary_csv(table: &CorrelationTable) -> String {
    let mut out = String::from("metric,pearson_r,undefined\n");
    for (name, c) in [("brightness", table.brightness), ("contrast", table.contrast), ("tenengrad", table.tenengrad)] {
        out.push_str(&format!("{name},{},{}\n", c.r, c.undefined));
    }
    out
}

/// Single row with one percent-threshold column per metric; metrics not
/// estimated are left empty.
pub fn loop_threshold_csv(est: &LoopThresholdEstimate) -> String {
    let get = |m: &str| est.thresholds.iter().find(|t| t.metric == m).map(|t| t.percent_threshold);
    format!("tenengrad,brightness,contrast\n{},{},{}\n", opt(get("tenengrad")), opt(get("brightness")), opt(get("contrast")))
}

pub fn loop_pairs_csv(est: &LoopThresholdEstimate) -> String {
    let mut out = String::from("a,b,kind,last_value,linked_a,linked_b,tenengrad_pct,brightness_pct,contrast_pct\n");
    for p in &est.pairs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.a,
            p.b,
            p.kind.as_str(),
            p.last_value,
            p.linked.0,
            p.linked.1,
            p.percent.tenengrad,
            p.percent.brightness,
            p.percent.contrast
        ));
    }
    out
}

/// Metric name to percent threshold, in table order.
pub fn loop_threshold_table(est: &LoopThresholdEstimate) -> Value {
    let mut obj = serde_json::Map::new();
    for m in ["tenengrad", "brightness", "contrast"] {
        let v = est.thresholds.iter().find(|t| t.metric == m).map(|t| t.percent_threshold);
        obj.insert(m.to_string(), serde_json::to_value(v).unwrap());
    }
    Value::Object(obj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub config: Value,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepResult>,
    pub windows: Vec<FrameOfInterest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loop_thresholds: Option<LoopThresholdEstimate>,
}
