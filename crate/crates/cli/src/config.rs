//! Campaign configuration: one JSON file holding everything a run needs.

use std::path::{Path, PathBuf};
use std::time::Duration;

use posefuzz_core::dataset::DEFAULT_MAX_GAP_NS;
use posefuzz_core::diagnostics::{BenchTarget, FailurePredicate, LoopThresholdSettings};
use posefuzz_core::perturbation::{parse_config_value, PerturbationConfig};
use posefuzz_core::runner::{AlgorithmCommand, SessionOptions};
use posefuzz_core::trajectory_metrics::{AlignmentMode, ErrorOptions};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timeouts {
    pub handshake_s: f64,
    pub frame_s: f64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts { handshake_s: 10.0, frame_s: 30.0 }
    }
}

fn default_max_gap() -> u64 {
    DEFAULT_MAX_GAP_NS
}

fn default_rpe_delta() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Program followed by its arguments.
    #[serde(default)]
    pub algorithm: Vec<String>,
    #[serde(default)]
    pub perturbations: Vec<Value>,
    #[serde(default)]
    pub segments: Option<Value>,
    #[serde(default)]
    pub sweep: Option<Value>,
    #[serde(default)]
    pub failure: Option<FailurePredicate>,
    #[serde(default, rename = "loop")]
    pub loop_closure: Option<LoopThresholdSettings>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_max_gap")]
    pub max_gap_ns: u64,
    #[serde(default)]
    pub alignment: AlignmentMode,
    #[serde(default = "default_rpe_delta")]
    pub rpe_delta: usize,
    #[serde(default)]
    pub timeouts: Timeouts,
    #[serde(default)]
    pub send_ground_truth: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty campaign parses")
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub algorithm: Vec<String>,
}

/// A validated campaign with every default filled in and paths made absolute.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: CampaignConfig,
    pub perturbation: PerturbationConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}

/// Reads a campaign file. Output documents written by this tool embed their
/// config under `config` and are accepted as well.
pub fn read_config_file(path: &Path) -> Result<CampaignConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if let Some(inner) = doc.get("config").filter(|v| v.is_object()) {
        doc = inner.clone();
    }
    let mut cfg: CampaignConfig =
        serde_json::from_value(doc).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.dataset = cfg.dataset.map(|d| absolute(base, &d));
    cfg.output_dir = cfg.output_dir.map(|d| absolute(base, &d));
    Ok(cfg)
}

pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Resolved, CliError> {
    let mut config = match file {
        Some(p) => read_config_file(p)?,
        None => CampaignConfig::default(),
    };
    let cwd = std::env::current_dir()?;
    if let Some(d) = &overrides.dataset {
        config.dataset = Some(absolute(&cwd, d));
    }
    if !overrides.algorithm.is_empty() {
        config.algorithm = overrides.algorithm.clone();
    }
    if let Some(o) = &overrides.output_dir {
        config.output_dir = Some(absolute(&cwd, o));
    }
    let output_dir = config.output_dir.clone().unwrap_or_else(|| absolute(&cwd, Path::new("posefuzz-out")));
    config.output_dir = Some(output_dir.clone());
    let seed = overrides.seed.or(config.seed).unwrap_or(0);
    config.seed = Some(seed);

    let mut doc = serde_json::Map::new();
    doc.insert("perturbations".into(), Value::Array(config.perturbations.clone()));
    if let Some(s) = &config.segments {
        doc.insert("segments".into(), s.clone());
    }
    if let Some(s) = &config.sweep {
        doc.insert("sweep".into(), s.clone());
    }
    let perturbation = parse_config_value(&Value::Object(doc))?;
    if let Some(f) = &config.failure {
        f.validate()?;
    }
    if let Some(l) = &config.loop_closure {
        l.validate()?;
    }
    for (name, v) in [("timeouts.handshake_s", config.timeouts.handshake_s), ("timeouts.frame_s", config.timeouts.frame_s)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(CliError::config(format!("{name}: must be positive")));
        }
    }
    if config.rpe_delta == 0 {
        return Err(CliError::config("rpe_delta: must be at least 1"));
    }
    Ok(Resolved { config, perturbation, seed, output_dir })
}

impl Resolved {
    pub fn dataset(&self) -> Result<PathBuf, CliError> {
        let d = self.config.dataset.clone().ok_or_else(|| CliError::config("dataset: required"))?;
        if !d.is_file() {
            return Err(CliError::config(format!("dataset: {} does not exist", d.display())));
        }
        Ok(d)
    }

    pub fn algorithm(&self) -> Result<AlgorithmCommand, CliError> {
        AlgorithmCommand::from_argv(&self.config.algorithm).ok_or_else(|| CliError::config("algorithm: required"))
    }

    pub fn session_options(&self) -> SessionOptions {
        SessionOptions {
            handshake_timeout: Duration::from_secs_f64(self.config.timeouts.handshake_s),
            frame_timeout: Duration::from_secs_f64(self.config.timeouts.frame_s),
            send_ground_truth: self.config.send_ground_truth,
            ..SessionOptions::default()
        }
    }

    pub fn error_options(&self) -> ErrorOptions {
        ErrorOptions { alignment: self.config.alignment, rpe_delta: self.config.rpe_delta }
    }

    pub fn target(&self) -> Result<BenchTarget, CliError> {
        Ok(BenchTarget {
            command: self.algorithm()?,
            dataset: self.dataset()?,
            session: self.session_options(),
            max_gap_ns: self.config.max_gap_ns,
            errors: self.error_options(),
        })
    }

    /// The resolved config as embedded in every output file.
    pub fn echo(&self) -> Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }
}
