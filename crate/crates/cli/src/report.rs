use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Version of the report envelope.
pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Provenance written at the top of every report. Contains nothing that
/// varies between identical invocations.
#[derive(Debug, Default, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    #[serde(rename = "formatVersions")]
    pub format_versions: BTreeMap<&'static str, u32>,
    /// SHA-256 of every input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        let mut format_versions = BTreeMap::new();
        format_versions.insert("report", REPORT_FORMAT_VERSION);
        format_versions.insert("spec", seqcomp::engine::SPEC_FORMAT_VERSION);
        format_versions.insert("task", seqcomp::task::FORMAT_VERSION);
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            args,
            format_versions,
            ..Default::default()
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(bytes)
    }

    pub fn read_json<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> Result<T> {
        let bytes = self.read_input(path)?;
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
    }
}

/// A finished command: its result document and whether every check held.
pub struct Outcome {
    pub result: Value,
    pub passed: bool,
}

impl Outcome {
    pub fn ok<T: Serialize>(result: &T) -> Result<Self> {
        Ok(Self {
            result: serde_json::to_value(result)?,
            passed: true,
        })
    }

    pub fn checked<T: Serialize>(result: &T, passed: bool) -> Result<Self> {
        Ok(Self {
            result: serde_json::to_value(result)?,
            passed,
        })
    }
}

#[derive(Serialize)]
struct Envelope<'a> {
    manifest: &'a RunManifest,
    status: &'static str,
    result: &'a Value,
}

/// Renders the report in the requested format.
pub fn render(manifest: &RunManifest, outcome: &Outcome, format: OutputFormat) -> Result<String> {
    let env = Envelope {
        manifest,
        status: if outcome.passed { "pass" } else { "fail" },
        result: &outcome.result,
    };
    match format {
        OutputFormat::Json => Ok(seqcomp::canonical::to_string(&env)? + "\n"),
        OutputFormat::Csv => {
            let mut rows = Vec::new();
            flatten("", &serde_json::to_value(&env)?, &mut rows);
            let mut out = String::from("key,value\n");
            for (k, v) in rows {
                out.push_str(&csv_field(&k));
                out.push(',');
                out.push_str(&csv_field(&v));
                out.push('\n');
            }
            Ok(out)
        }
    }
}

/// One row per scalar, keyed by its dotted path.
fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                flatten(&join(k), child, rows);
            }
        }
        Value::Array(items) => {
            for (k, child) in items.iter().enumerate() {
                flatten(&join(&k.to_string()), child, rows);
            }
        }
        Value::String(s) => rows.push((prefix.to_string(), s.clone())),
        Value::Null => rows.push((prefix.to_string(), String::new())),
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes a canonical JSON artifact.
pub fn write_json<T: Serialize>(path: &PathBuf, value: &T) -> Result<()> {
    let text = seqcomp::canonical::to_string(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
