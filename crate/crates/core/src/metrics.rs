//! Wire-size accounting and cross-session summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PolicyKind;
use crate::engine::SessionTranscript;
use crate::jsonl::fixed6;

pub const SUMMARY_CSV_HEADER: &str =
    "policy,scenarios,success_rate,median_steps,mean_steps,mean_final_distance,bytes_semantic_mean,ratio_mean";

/// Largest index that fits the one-byte index field.
pub const MAX_WIRE_INDEX: usize = 254;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("word is {0} bytes, at most 255 fit the length prefix")]
    WordTooLong(usize),
    #[error("index {0} exceeds {MAX_WIRE_INDEX}")]
    IndexTooLarge(usize),
    #[error("payload truncated")]
    Truncated,
    #[error("payload has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("word bytes are not valid UTF-8")]
    InvalidUtf8,
}

/// One step on the wire: `[word_len][word bytes][index]`.
pub fn encode_step(word: &str, index: usize) -> Result<Vec<u8>, WireError> {
    let len = u8::try_from(word.len()).map_err(|_| WireError::WordTooLong(word.len()))?;
    if index > MAX_WIRE_INDEX {
        return Err(WireError::IndexTooLarge(index));
    }
    let mut out = Vec::with_capacity(word.len() + 2);
    out.push(len);
    out.extend_from_slice(word.as_bytes());
    out.push(index as u8);
    Ok(out)
}

pub fn decode_step(bytes: &[u8]) -> Result<(String, usize), WireError> {
    let (&len, rest) = bytes.split_first().ok_or(WireError::Truncated)?;
    let len = usize::from(len);
    if rest.len() < len + 1 {
        return Err(WireError::Truncated);
    }
    if rest.len() > len + 1 {
        return Err(WireError::TrailingBytes(rest.len() - len - 1));
    }
    let word = std::str::from_utf8(&rest[..len]).map_err(|_| WireError::InvalidUtf8)?;
    let index = usize::from(rest[len]);
    if index > MAX_WIRE_INDEX {
        return Err(WireError::IndexTooLarge(index));
    }
    Ok((word.to_owned(), index))
}

/// Encoded size of a step without allocating.
pub fn step_size(word: &str) -> usize {
    word.len() + 2
}

/// Uncompressed RGB size of an `height × width` image.
pub fn raw_image_bytes(height: usize, width: usize) -> usize {
    height * width * 3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub bytes_semantic: usize,
    pub bytes_raw: usize,
    /// `None` when nothing was transmitted.
    pub ratio: Option<f64>,
    pub steps_to_success: BTreeMap<PolicyKind, Option<usize>>,
}

pub fn load_ratio(bytes_raw: usize, bytes_semantic: usize) -> Option<f64> {
    (bytes_semantic > 0).then(|| bytes_raw as f64 / bytes_semantic as f64)
}

/// Semantic payload summed over every transmitted step of `transcripts`,
/// compared against sending one raw `height × width` RGB image.
pub fn load_report(transcripts: &[SessionTranscript], height: usize, width: usize) -> LoadReport {
    let bytes_semantic = transcripts
        .iter()
        .flat_map(|t| &t.steps)
        .map(|s| step_size(&s.word))
        .sum();
    let bytes_raw = raw_image_bytes(height, width);
    let steps_to_success = transcripts
        .iter()
        .map(|t| (t.config.policy, t.steps_to_success))
        .collect();
    LoadReport {
        bytes_semantic,
        bytes_raw,
        ratio: load_ratio(bytes_raw, bytes_semantic),
        steps_to_success,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub scenarios: usize,
    pub success_rate: f64,
    pub median_steps: Option<usize>,
    pub mean_steps: Option<f64>,
    pub mean_final_distance: Option<f64>,
    pub bytes_semantic_mean: f64,
    pub ratio_mean: Option<f64>,
}

/// Lower median: the `(n - 1) / 2`-th order statistic.
pub fn lower_median(values: &[usize]) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    Some(sorted[(sorted.len() - 1) / 2])
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-policy statistics, in [`PolicyKind`] order. Sessions that never
/// crossed the threshold count against the success rate but are left out of
/// the step statistics.
pub fn summarize(
    transcripts: &[SessionTranscript],
    height: usize,
    width: usize,
) -> Vec<PolicySummary> {
    let mut by_policy: BTreeMap<PolicyKind, Vec<&SessionTranscript>> = BTreeMap::new();
    for t in transcripts {
        by_policy.entry(t.config.policy).or_default().push(t);
    }
    let bytes_raw = raw_image_bytes(height, width);
    by_policy
        .into_iter()
        .map(|(policy, ts)| {
            let successes: Vec<usize> = ts.iter().filter_map(|t| t.steps_to_success).collect();
            let bytes: Vec<usize> = ts.iter().map(|t| t.bytes_total()).collect();
            PolicySummary {
                policy,
                scenarios: ts.len(),
                success_rate: successes.len() as f64 / ts.len() as f64,
                median_steps: lower_median(&successes),
                mean_steps: mean(successes.iter().map(|&s| s as f64)),
                mean_final_distance: mean(ts.iter().filter_map(|t| t.final_distance())),
                bytes_semantic_mean: mean(bytes.iter().map(|&b| b as f64)).unwrap_or(0.0),
                ratio_mean: mean(bytes.iter().filter_map(|&b| load_ratio(bytes_raw, b))),
            }
        })
        .collect()
}

impl PolicySummary {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(fixed6).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.policy,
            self.scenarios,
            fixed6(self.success_rate),
            self.median_steps.map(|m| m.to_string()).unwrap_or_default(),
            opt(self.mean_steps),
            opt(self.mean_final_distance),
            fixed6(self.bytes_semantic_mean),
            opt(self.ratio_mean),
        )
    }
}

/// Renders the summary CSV. `failed` lists, per policy, how many sweep cells
/// could not be run; each such policy gets an extra `<policy>#failed` row.
pub fn summary_csv(rows: &[PolicySummary], failed: &BTreeMap<PolicyKind, usize>) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    for (policy, count) in failed.iter().filter(|(_, &c)| c > 0) {
        let _ = writeln!(out, "{policy}#failed,{count},,,,,,");
    }
    out
}
