//! Output files. Every JSON document carries `config` and `seed`; every CSV starts
//! with a `#` comment line holding the same pair.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Resolved;
use crate::error::CliError;

pub struct OutputDir {
    dir: PathBuf,
    header: Value,
}

impl OutputDir {
    pub fn create(resolved: &Resolved) -> Result<Self, CliError> {
        let dir = resolved.output_dir.clone();
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::config(format!("output_dir {}: {e}", dir.display())))?;
        Ok(OutputDir { dir, header: json!({ "config": resolved.echo(), "seed": resolved.seed }) })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Writes `body` (an object) with `config` and `seed` merged in.
    pub fn write_json(&self, name: &str, body: &impl Serialize) -> Result<PathBuf, CliError> {
        let mut doc = serde_json::to_value(body).map_err(|e| CliError::input(e.to_string()))?;
        let obj = doc.as_object_mut().expect("output documents are objects");
        for (k, v) in self.header.as_object().expect("header is an object") {
            obj.insert(k.clone(), v.clone());
        }
        let text = serde_json::to_string_pretty(&doc).expect("value serializes");
        self.write(name, format!("{text}\n"))
    }

    pub fn write_csv(&self, name: &str, table: &str) -> Result<PathBuf, CliError> {
        self.write(name, format!("# {}\n{table}", self.header))
    }

    fn write(&self, name: &str, text: String) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Parses a CSV written by [`OutputDir::write_csv`], skipping comment lines.
pub fn csv_body(text: &str) -> impl Iterator<Item = &str> {
    text.lines().filter(|l| !l.starts_with('#'))
}
