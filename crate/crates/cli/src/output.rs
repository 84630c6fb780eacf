use std::fs;
use std::path::Path;

use semcomm::{Outcome, PolicyKind, SessionTranscript};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::CliError;

pub fn transcript_file_name(scenario: usize, policy: PolicyKind, seed: u64) -> String {
    format!("s{scenario:03}_{policy}_seed{seed}.jsonl")
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::Config(format!("bad output path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let io = |e: std::io::Error| CliError::Backend(format!("writing {}: {e}", path.display()));
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Step-vs-distance trace of one sweep cell.
#[derive(Debug, Serialize)]
pub struct Series {
    #[serde(skip)]
    policy: PolicyKind,
    scenario: usize,
    seed: u64,
    outcome: Outcome,
    step: Vec<usize>,
    distance: Vec<f64>,
}

impl Series {
    pub fn new(scenario: usize, seed: u64, t: &SessionTranscript) -> Self {
        Self {
            policy: t.config.policy,
            scenario,
            seed,
            outcome: t.outcome,
            step: t.steps.iter().map(|s| s.step).collect(),
            distance: t.steps.iter().map(|s| s.distance).collect(),
        }
    }
}

pub fn plot_data(policies: &[PolicyKind], threshold: f64, series: &[Series]) -> String {
    let mut by_policy = Map::new();
    for &p in policies {
        let cells: Vec<Value> = series
            .iter()
            .filter(|s| s.policy == p)
            .map(|s| serde_json::to_value(s).expect("plain data serialises"))
            .collect();
        by_policy.insert(p.to_string(), Value::Array(cells));
    }
    let doc = json!({ "threshold": threshold, "policies": by_policy });
    let mut text = serde_json::to_string_pretty(&doc).expect("plain data serialises");
    text.push('\n');
    text
}
