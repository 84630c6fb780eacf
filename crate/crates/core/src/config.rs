use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Success threshold on perceptual distance used when none is configured.
pub const DEFAULT_THRESHOLD: f64 = 0.60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("threshold {0} is outside [0, 1]")]
    Threshold(f64),
    #[error("max_steps must be at least 1")]
    MaxSteps,
    #[error("unknown policy {0:?}; valid policies are: {names}", names = PolicyKind::NAMES.join(", "))]
    UnknownPolicy(String),
}

/// Word selection scheme used by the transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Simulate the receiver for every candidate and send the closest.
    LowestLpips,
    MostAttentive,
    LeastAttentive,
    /// Baseline: send words in sentence order.
    SentenceOrder,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::LowestLpips,
        PolicyKind::MostAttentive,
        PolicyKind::LeastAttentive,
        PolicyKind::SentenceOrder,
    ];

    pub const NAMES: [&'static str; 4] = [
        "lowest-lpips",
        "most-attentive",
        "least-attentive",
        "sentence-order",
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::LowestLpips => Self::NAMES[0],
            PolicyKind::MostAttentive => Self::NAMES[1],
            PolicyKind::LeastAttentive => Self::NAMES[2],
            PolicyKind::SentenceOrder => Self::NAMES[3],
        }
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, PolicyKind::MostAttentive | PolicyKind::LeastAttentive)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ConfigError::UnknownPolicy(s.to_owned()))
    }
}

/// How the receiver orders received words when assembling its prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptOrdering {
    /// Sort by original sentence index (carried on the wire).
    #[default]
    SentencePosition,
    ArrivalOrder,
}

/// How per-layer, per-head attention slices are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    MeanLayersHeads,
}

/// Which directed attention weight scores a candidate against the last sent
/// word.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relatedness {
    /// Mean of both directions.
    #[default]
    Symmetric,
    /// Attention the last sent word pays to the candidate.
    FromLast,
    /// Attention the candidate pays to the last sent word.
    ToLast,
}

/// Step-one behaviour of the least-attentive policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstStepMode {
    /// Least-attentive opens with the least salient word.
    #[default]
    PolicyConsistent,
    /// Both attention policies open with the most salient word.
    AlwaysMostAttentive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub policy: PolicyKind,
    pub threshold: f64,
    /// `None` means the caption length.
    pub max_steps: Option<usize>,
    pub ordering: PromptOrdering,
    pub aggregation: Aggregation,
    pub relatedness: Relatedness,
    pub first_step_mode: FirstStepMode,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::LowestLpips,
            threshold: DEFAULT_THRESHOLD,
            max_steps: None,
            ordering: PromptOrdering::default(),
            aggregation: Aggregation::default(),
            relatedness: Relatedness::default(),
            first_step_mode: FirstStepMode::default(),
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn with_policy(&self, policy: PolicyKind) -> Self {
        Self {
            policy,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ConfigError::Threshold(self.threshold));
        }
        if self.max_steps == Some(0) {
            return Err(ConfigError::MaxSteps);
        }
        Ok(())
    }

    /// Step budget for a caption of `len` words.
    pub fn step_budget(&self, len: usize) -> usize {
        self.max_steps.unwrap_or(len)
    }
}
