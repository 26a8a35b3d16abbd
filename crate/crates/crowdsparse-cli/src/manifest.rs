//! Run manifests. Every command records what ran — parameters, seeds, input
//! and output paths, wall clock — as one TOML document in the output
//! directory, so a run can be audited or repeated from the manifest alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crowdsparse::{Error, Result};

#[derive(Serialize)]
struct Document {
    command: String,
    version: String,
    wall_clock_seconds: f64,
    seeds: BTreeMap<String, toml::Value>,
    params: BTreeMap<String, toml::Value>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    results: BTreeMap<String, toml::Value>,
}

pub struct Manifest {
    started: Instant,
    doc: Document,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            started: Instant::now(),
            doc: Document {
                command: command.to_string(),
                version: crowdsparse::VERSION.to_string(),
                wall_clock_seconds: 0.0,
                seeds: BTreeMap::new(),
                params: BTreeMap::new(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                results: BTreeMap::new(),
            },
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.doc.seeds.insert(name.to_string(), int_value(value));
    }

    pub fn param(&mut self, name: &str, value: impl Into<toml::Value>) {
        self.doc.params.insert(name.to_string(), value.into());
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.doc
            .inputs
            .insert(name.to_string(), path.display().to_string());
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.doc
            .outputs
            .insert(name.to_string(), path.display().to_string());
    }

    pub fn result(&mut self, name: &str, value: impl Into<toml::Value>) {
        self.doc.results.insert(name.to_string(), value.into());
    }

    /// Writes `manifest.toml` into `dir` and returns its path.
    pub fn write(mut self, dir: &Path) -> Result<std::path::PathBuf> {
        self.doc.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        let path = dir.join("manifest.toml");
        let text = toml::to_string_pretty(&self.doc)
            .map_err(|e| Error::Invalid(format!("manifest serialization: {e}")))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// TOML integers are signed; seeds above i64::MAX are stored as strings.
fn int_value(v: u64) -> toml::Value {
    match i64::try_from(v) {
        Ok(i) => toml::Value::Integer(i),
        Err(_) => toml::Value::String(v.to_string()),
    }
}

pub fn usize_value(v: usize) -> toml::Value {
    match i64::try_from(v) {
        Ok(i) => toml::Value::Integer(i),
        Err(_) => toml::Value::String(v.to_string()),
    }
}
