//! Wire protocol v1 conformance checks against a live endpoint.

use std::fmt;

use super::stub::FIXTURE_IMAGE;
use super::{fold, GatewayClient, GatewayConfig, GatewayError};
use crate::backend::FeatureImage;

/// Caption text the attention checks use.
pub const PROBE_TEXT: &str = "A cat sitting on a mat";

/// A service must score identical images at or below this distance.
pub const IDENTITY_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConformanceReport {
    pub checks: Vec<CheckResult>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn record(&mut self, name: &'static str, result: Result<String, String>) {
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(CheckResult {
            name,
            passed,
            detail,
        });
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{mark}  {:width$}  {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

/// Runs every check against `base_url`. Requests are not retried.
pub fn run(base_url: &str) -> Result<ConformanceReport, GatewayError> {
    let client = GatewayClient::new(GatewayConfig {
        retries: 0,
        ..GatewayConfig::new(base_url)
    })?;
    Ok(run_with(&client))
}

pub fn run_with(client: &GatewayClient) -> ConformanceReport {
    let mut report = ConformanceReport::default();

    report.record(
        "caption schema",
        client
            .remote_caption(FIXTURE_IMAGE)
            .map(|s| format!("{} words", s.len()))
            .map_err(|e| e.to_string()),
    );

    let raw = client.raw_attention(PROBE_TEXT);
    report.record(
        "attention schema",
        match &raw {
            Ok(r) => check_attention_shape(r),
            Err(e) => Err(e.to_string()),
        },
    );
    report.record(
        "attention rows stochastic",
        match &raw {
            Ok(r) => check_attention_rows(r),
            Err(e) => Err(e.to_string()),
        },
    );

    let seed = client.config().seed;
    let first = client.remote_generate(PROBE_TEXT, seed);
    report.record(
        "generate schema",
        match &first {
            Ok(FeatureImage::Encoded {
                bytes,
                width,
                height,
            }) => Ok(format!(
                "{} bytes, {}x{}",
                bytes.len(),
                width.unwrap_or(0),
                height.unwrap_or(0)
            )),
            Ok(FeatureImage::Features(_)) => Err("unexpected feature image".into()),
            Err(e) => Err(e.to_string()),
        },
    );
    let second = client.remote_generate(PROBE_TEXT, seed);
    report.record(
        "generate deterministic",
        match (&first, &second) {
            (Ok(a), Ok(b)) if a == b => Ok(format!("seed {seed}")),
            (Ok(_), Ok(_)) => Err(format!(
                "two calls with seed {seed} returned different images"
            )),
            (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
        },
    );

    let image = match &first {
        Ok(FeatureImage::Encoded { bytes, .. }) => bytes.clone(),
        _ => FIXTURE_IMAGE.to_vec(),
    };
    report.record(
        "distance identity",
        match client.remote_distance(&image, &image) {
            Ok(d) if d <= IDENTITY_TOLERANCE => Ok(format!("lpips {d}")),
            Ok(d) => Err(format!(
                "identical images scored {d} > {IDENTITY_TOLERANCE}"
            )),
            Err(e) => Err(e.to_string()),
        },
    );
    report.record(
        "distance range",
        client
            .remote_distance(&image, FIXTURE_IMAGE)
            .map(|d| format!("lpips {d}"))
            .map_err(|e| e.to_string()),
    );
    report
}

fn check_attention_shape(r: &super::wire::AttentionResponse) -> Result<String, String> {
    let expected = r.layers * r.heads * r.tokens * r.tokens;
    if r.layers == 0 || r.heads == 0 || r.tokens == 0 {
        return Err("layers, heads and tokens must be positive".into());
    }
    if r.weights.len() != expected {
        return Err(format!("{} weights, expected {expected}", r.weights.len()));
    }
    if r.token_to_word.len() != r.tokens {
        return Err(format!(
            "token_to_word has {} entries for {} tokens",
            r.token_to_word.len(),
            r.tokens
        ));
    }
    if let Some(bad) = r.token_to_word.iter().find(|&&w| w < -1) {
        return Err(format!("token_to_word entry {bad} below -1"));
    }
    Ok(format!(
        "{} layers, {} heads, {} tokens",
        r.layers, r.heads, r.tokens
    ))
}

fn check_attention_rows(r: &super::wire::AttentionResponse) -> Result<String, String> {
    check_attention_shape(r)?;
    let t = r.tokens;
    for layer in 0..r.layers {
        for head in 0..r.heads {
            for row in 0..t {
                let start = ((layer * r.heads + head) * t + row) * t;
                let values = &r.weights[start..start + t];
                let sum: f64 = values.iter().map(|&v| f64::from(v)).sum();
                if values.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > fold::ROW_TOLERANCE {
                    return Err(format!(
                        "layer {layer} head {head} row {row} sums to {sum:.6}"
                    ));
                }
            }
        }
    }
    Ok(format!("within {}", fold::ROW_TOLERANCE))
}
