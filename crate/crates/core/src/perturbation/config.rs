use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::segments::SegmentParams;
use super::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKindName {
    Brightness,
    Contrast,
    Blur,
}

impl PerturbationKindName {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "brightness" => Some(Self::Brightness),
            "contrast" => Some(Self::Contrast),
            "blur" => Some(Self::Blur),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Brightness => "brightness",
            Self::Contrast => "contrast",
            Self::Blur => "blur",
        }
    }

    pub fn parameter_name(self) -> &'static str {
        match self {
            Self::Brightness => "delta",
            Self::Contrast => "level",
            Self::Blur => "kernel",
        }
    }

    /// Closed parameter range.
    pub fn range(self) -> (i64, i64) {
        match self {
            Self::Brightness | Self::Contrast => (-255, 255),
            Self::Blur => (1, 10),
        }
    }

    /// Parameter value that leaves images bit-identical.
    pub fn identity_value(self) -> i64 {
        match self {
            Self::Blur => 1,
            _ => 0,
        }
    }

    pub fn with_value(self, value: i64) -> Result<PerturbationKind, ConfigError> {
        let (lo, hi) = self.range();
        if value < lo || value > hi {
            return Err(ConfigError::new(
                self.parameter_name(),
                format!("{} out of range [{lo}, {hi}]: {value}", self.parameter_name()),
            ));
        }
        Ok(match self {
            Self::Brightness => PerturbationKind::Brightness { delta: value as i32 },
            Self::Contrast => PerturbationKind::Contrast { level: value as i32 },
            Self::Blur => PerturbationKind::Blur { kernel: value as u32 },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerturbationKind {
    /// Additive intensity shift.
    Brightness { delta: i32 },
    /// Scaling about mid-grey by `1 + level/255`.
    Contrast { level: i32 },
    /// Box blur with a `kernel × kernel` window.
    Blur { kernel: u32 },
}

impl PerturbationKind {
    pub fn name(&self) -> PerturbationKindName {
        match self {
            Self::Brightness { .. } => PerturbationKindName::Brightness,
            Self::Contrast { .. } => PerturbationKindName::Contrast,
            Self::Blur { .. } => PerturbationKindName::Blur,
        }
    }

    pub fn value(&self) -> i64 {
        match *self {
            Self::Brightness { delta } => delta as i64,
            Self::Contrast { level } => level as i64,
            Self::Blur { kernel } => kernel as i64,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.value() == self.name().identity_value()
    }
}

/// Which frames a perturbation applies to. Empty range lists mean "all".
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selector {
    pub sensors: BTreeSet<u32>,
    /// Inclusive `[first, last]` stream positions.
    pub frame_ranges: Vec<(u64, u64)>,
    /// Half-open `[start_ns, end_ns)` timestamp ranges.
    pub time_ranges: Vec<(u64, u64)>,
}

impl Selector {
    pub fn sensors(ids: impl IntoIterator<Item = u32>) -> Self {
        Selector { sensors: ids.into_iter().collect(), ..Default::default() }
    }

    pub fn matches(&self, sensor_id: u32, seq_index: u64, timestamp_ns: u64) -> bool {
        self.sensors.contains(&sensor_id)
            && (self.frame_ranges.is_empty() || self.frame_ranges.iter().any(|&(a, b)| a <= seq_index && seq_index <= b))
            && (self.time_ranges.is_empty() || self.time_ranges.iter().any(|&(a, b)| a <= timestamp_ns && timestamp_ns < b))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub selector: Selector,
}

/// `segments` section of a campaign file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_duration_s")]
    pub duration_s: f64,
    #[serde(default = "default_max_fraction")]
    pub max_fraction: f64,
}

fn default_duration_s() -> f64 {
    1.0
}

fn default_max_fraction() -> f64 {
    0.10
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig { seed: None, duration_s: default_duration_s(), max_fraction: default_max_fraction() }
    }
}

impl SegmentConfig {
    pub fn params(&self) -> SegmentParams {
        SegmentParams {
            segment_duration_ns: (self.duration_s * 1e9).round() as u64,
            max_fraction: self.max_fraction,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(ConfigError::new("segments.duration_s", "duration_s must be positive"));
        }
        if !(0.0..=1.0).contains(&self.max_fraction) {
            return Err(ConfigError::new("segments.max_fraction", "max_fraction out of range [0, 1]"));
        }
        Ok(())
    }
}

/// Validated `perturbations` / `segments` sections plus the raw `sweep` section,
/// which the diagnostics layer interprets.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationConfig {
    pub perturbations: Vec<PerturbationSpec>,
    pub segments: Option<SegmentConfig>,
    pub sweep: Option<Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: String,
    #[serde(default)]
    delta: Option<i64>,
    #[serde(default)]
    level: Option<i64>,
    #[serde(default)]
    kernel: Option<i64>,
    #[serde(default)]
    parameter: Option<i64>,
    sensors: Vec<u32>,
    #[serde(default)]
    frame_ranges: Vec<(u64, u64)>,
    #[serde(default)]
    time_ranges: Vec<(u64, u64)>,
}

/// Parses a campaign JSON document. Keys other than `perturbations`, `segments`
/// and `sweep` are left to the caller.
pub fn parse_config(json_text: &str) -> Result<PerturbationConfig, ConfigError> {
    let doc: Value = serde_json::from_str(json_text).map_err(|e| ConfigError::new("<document>", e.to_string()))?;
    parse_config_value(&doc)
}

pub fn parse_config_value(doc: &Value) -> Result<PerturbationConfig, ConfigError> {
    let obj = doc.as_object().ok_or_else(|| ConfigError::new("<document>", "expected a JSON object"))?;
    let mut perturbations = Vec::new();
    if let Some(list) = obj.get("perturbations") {
        let list = list
            .as_array()
            .ok_or_else(|| ConfigError::new("perturbations", "expected an array"))?;
        for (i, entry) in list.iter().enumerate() {
            perturbations.push(parse_spec(entry).map_err(|e| e.prefixed(&format!("perturbations[{i}]")))?);
        }
    }
    let segments = match obj.get("segments") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let s: SegmentConfig =
                serde_json::from_value(v.clone()).map_err(|e| ConfigError::new("segments", e.to_string()))?;
            s.validate()?;
            Some(s)
        }
    };
    Ok(PerturbationConfig { perturbations, segments, sweep: obj.get("sweep").cloned().filter(|v| !v.is_null()) })
}

fn parse_spec(entry: &Value) -> Result<PerturbationSpec, ConfigError> {
    let raw: RawSpec = serde_json::from_value(entry.clone()).map_err(|e| ConfigError::new("", e.to_string()))?;
    let name = PerturbationKindName::parse(&raw.kind)
        .ok_or_else(|| ConfigError::new("kind", format!("unknown perturbation kind '{}'", raw.kind)))?;
    let named = match name {
        PerturbationKindName::Brightness => raw.delta,
        PerturbationKindName::Contrast => raw.level,
        PerturbationKindName::Blur => raw.kernel,
    };
    let foreign = [("delta", raw.delta), ("level", raw.level), ("kernel", raw.kernel)]
        .into_iter()
        .find(|&(field, v)| v.is_some() && field != name.parameter_name());
    if let Some((field, _)) = foreign {
        return Err(ConfigError::new(field, format!("{field} is not a parameter of {}", name.as_str())));
    }
    let value = match (named, raw.parameter) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::new("parameter", format!("both parameter and {} given", name.parameter_name())))
        }
        (Some(v), None) | (None, Some(v)) => v,
        (None, None) => {
            return Err(ConfigError::new(name.parameter_name(), format!("missing {}", name.parameter_name())))
        }
    };
    let kind = name.with_value(value)?;
    if raw.sensors.is_empty() {
        return Err(ConfigError::new("sensors", "at least one sensor id required"));
    }
    for &(a, b) in &raw.frame_ranges {
        if a > b {
            return Err(ConfigError::new("frame_ranges", format!("empty frame range [{a}, {b}]")));
        }
    }
    for &(a, b) in &raw.time_ranges {
        if a >= b {
            return Err(ConfigError::new("time_ranges", format!("empty time range [{a}, {b})")));
        }
    }
    Ok(PerturbationSpec {
        kind,
        selector: Selector {
            sensors: raw.sensors.into_iter().collect(),
            frame_ranges: raw.frame_ranges,
            time_ranges: raw.time_ranges,
        },
    })
}

/// Serializes specs back into the campaign schema (used when echoing configs).
pub fn spec_to_json(spec: &PerturbationSpec) -> Value {
    let name = spec.kind.name();
    let mut obj = serde_json::Map::new();
    obj.insert("kind".into(), name.as_str().into());
    obj.insert(name.parameter_name().into(), spec.kind.value().into());
    obj.insert("sensors".into(), spec.selector.sensors.iter().copied().collect::<Vec<_>>().into());
    if !spec.selector.frame_ranges.is_empty() {
        obj.insert("frame_ranges".into(), serde_json::to_value(&spec.selector.frame_ranges).unwrap());
    }
    if !spec.selector.time_ranges.is_empty() {
        obj.insert("time_ranges".into(), serde_json::to_value(&spec.selector.time_ranges).unwrap());
    }
    Value::Object(obj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_brightness_spec() {
        let cfg = parse_config(r#"{"perturbations":[{"kind":"brightness","delta":25,"sensors":[0]}]}"#).unwrap();
        assert_eq!(cfg.perturbations.len(), 1);
        let spec = &cfg.perturbations[0];
        assert_eq!(spec.kind, PerturbationKind::Brightness { delta: 25 });
        assert_eq!(spec.selector, Selector::sensors([0]));
        assert!(cfg.segments.is_none());
    }

    #[test]
    fn delta_out_of_range() {
        let err = parse_config(r#"{"perturbations":[{"kind":"brightness","delta":300,"sensors":[0]}]}"#).unwrap_err();
        assert!(err.to_string().contains("delta out of range"), "{err}");
        assert!(err.field.ends_with("delta"));
    }

    #[test]
    fn blur_kernel_zero_rejected() {
        let err = parse_config(r#"{"perturbations":[{"kind":"blur","kernel":0,"sensors":[0]}]}"#).unwrap_err();
        assert!(err.to_string().contains("kernel out of range"), "{err}");
    }

    #[test]
    fn unknown_kind_rejected() {
        let err = parse_config(r#"{"perturbations":[{"kind":"fog","parameter":3,"sensors":[0]}]}"#).unwrap_err();
        assert!(err.to_string().contains("unknown perturbation kind"));
    }

    #[test]
    fn generic_parameter_key_and_ranges() {
        let cfg = parse_config(
            r#"{"perturbations":[{"kind":"contrast","parameter":-50,"sensors":[1,2],
                "frame_ranges":[[10,20]],"time_ranges":[[0,500]]}],
                "segments":{"seed":4,"duration_s":0.5,"max_fraction":0.2},
                "sweep":{"kind":"contrast"}}"#,
        )
        .unwrap();
        let s = &cfg.perturbations[0];
        assert_eq!(s.kind, PerturbationKind::Contrast { level: -50 });
        assert!(s.selector.matches(2, 15, 100));
        assert!(!s.selector.matches(2, 21, 100));
        assert!(!s.selector.matches(2, 15, 500));
        assert!(!s.selector.matches(0, 15, 100));
        let seg = cfg.segments.unwrap();
        assert_eq!(seg.seed, Some(4));
        assert_eq!(seg.params().segment_duration_ns, 500_000_000);
        assert!(cfg.sweep.is_some());
    }

    #[test]
    fn wrong_parameter_name_rejected() {
        assert!(parse_config(r#"{"perturbations":[{"kind":"blur","delta":3,"sensors":[0]}]}"#).is_err());
        assert!(parse_config(r#"{"perturbations":[{"kind":"blur","sensors":[0]}]}"#).is_err());
        assert!(parse_config(r#"{"perturbations":[{"kind":"blur","kernel":3,"sensors":[]}]}"#).is_err());
        assert!(parse_config(r#"{"segments":{"max_fraction":1.5}}"#).is_err());
        assert!(parse_config("not json").is_err());
    }

    #[test]
    fn echo_roundtrip() {
        let text = r#"{"perturbations":[{"kind":"blur","kernel":4,"sensors":[3],"frame_ranges":[[1,2]]}]}"#;
        let cfg = parse_config(text).unwrap();
        let echoed = serde_json::json!({ "perturbations": [spec_to_json(&cfg.perturbations[0])] });
        assert_eq!(parse_config_value(&echoed).unwrap(), cfg);
    }
}
