//! Word selection policies.
//!
//! Every policy maps a [`TransmissionState`] to the index of the next word.
//! Ties are always broken towards the lowest sentence index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    AttentionTensor, BackendError, Capability, FeatureImage, MissingCapability, Ports, WordMatrix,
};
use crate::config::{Aggregation, FirstStepMode, PolicyKind, Relatedness, SessionConfig};
use crate::text::{Sentence, TransmissionState};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy {policy} needs the {capability} port")]
    CapabilityMissing {
        policy: PolicyKind,
        capability: Capability,
    },
    #[error("policy {0} needs the objective image")]
    TargetMissing(PolicyKind),
    #[error("backend failed while evaluating candidate word {candidate}: {source}")]
    Backend {
        candidate: usize,
        #[source]
        source: BackendError,
    },
    #[error("text encoder failed: {0}")]
    Encoder(#[source] BackendError),
    #[error("attention covers {actual} words but the sentence has {expected}")]
    MatrixSize { expected: usize, actual: usize },
    #[error("word pair ({i}, {j}) is invalid for a sentence of {len} words")]
    IndexOutOfRange { i: usize, j: usize, len: usize },
    #[error("every word has already been sent")]
    NoCandidates,
}

impl PolicyError {
    fn missing(policy: PolicyKind, err: MissingCapability) -> Self {
        PolicyError::CapabilityMissing {
            policy,
            capability: err.0,
        }
    }
}

/// Distance the receiver would reach if `index` were sent next.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    /// Every candidate evaluated, lowest-LPIPS only.
    pub audit: Option<Vec<CandidateScore>>,
}

impl Selection {
    fn plain(index: usize) -> Self {
        Self { index, audit: None }
    }
}

/// What the transmitter knows when choosing words.
#[derive(Debug, Clone)]
pub struct PolicyContext {
    pub target: Option<FeatureImage>,
    pub ports: Ports,
    pub aggregated: Option<WordMatrix>,
    pub config: SessionConfig,
}

impl PolicyContext {
    /// Validates that `ports` support `config.policy` and precomputes the
    /// aggregated attention matrix for the attention policies.
    pub fn prepare(
        sentence: &Sentence,
        target: Option<FeatureImage>,
        ports: Ports,
        config: SessionConfig,
    ) -> Result<Self, PolicyError> {
        let policy = config.policy;
        let mut aggregated = None;
        match policy {
            PolicyKind::LowestLpips => {
                ports
                    .generator()
                    .map_err(|e| PolicyError::missing(policy, e))?;
                ports
                    .metric()
                    .map_err(|e| PolicyError::missing(policy, e))?;
                if target.is_none() {
                    return Err(PolicyError::TargetMissing(policy));
                }
            }
            PolicyKind::MostAttentive | PolicyKind::LeastAttentive => {
                let encoder = ports
                    .text_encoder()
                    .map_err(|e| PolicyError::missing(policy, e))?;
                let tensor = encoder.attention(sentence).map_err(PolicyError::Encoder)?;
                if tensor.len() != sentence.len() {
                    return Err(PolicyError::MatrixSize {
                        expected: sentence.len(),
                        actual: tensor.len(),
                    });
                }
                aggregated = Some(aggregate_attention(&tensor, config.aggregation));
            }
            PolicyKind::SentenceOrder => {}
        }
        Ok(Self {
            target,
            ports,
            aggregated,
            config,
        })
    }

    /// Context for an attention policy from an already aggregated matrix.
    pub fn with_matrix(matrix: WordMatrix, config: SessionConfig) -> Self {
        Self {
            target: None,
            ports: Ports::default(),
            aggregated: Some(matrix),
            config,
        }
    }

    fn matrix(&self, len: usize) -> Result<&WordMatrix, PolicyError> {
        let m = self
            .aggregated
            .as_ref()
            .ok_or(PolicyError::CapabilityMissing {
                policy: self.config.policy,
                capability: Capability::TextEncoder,
            })?;
        if m.len() != len {
            return Err(PolicyError::MatrixSize {
                expected: len,
                actual: m.len(),
            });
        }
        Ok(m)
    }
}

/// Entrywise mean over all (layer, head) slices.
pub fn aggregate_attention(tensor: &AttentionTensor, mode: Aggregation) -> WordMatrix {
    match mode {
        Aggregation::MeanLayersHeads => {
            let n = tensor.len();
            let slices = (tensor.layers() * tensor.heads()) as f64;
            let mut sum = vec![0.0; n * n];
            for layer in 0..tensor.layers() {
                for head in 0..tensor.heads() {
                    for (acc, w) in sum.iter_mut().zip(tensor.slice(layer, head)) {
                        *acc += w;
                    }
                }
            }
            WordMatrix::from_flat(n, sum.into_iter().map(|s| s / slices).collect())
        }
    }
}

/// Mean attention each word receives from the other words.
pub fn word_salience(m: &WordMatrix) -> Vec<f64> {
    let n = m.len();
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|j| (0..n).filter(|&i| i != j).map(|i| m.get(i, j)).sum::<f64>() / (n - 1) as f64)
        .collect()
}

pub fn relatedness(m: &WordMatrix, i: usize, j: usize) -> Result<f64, PolicyError> {
    directed_relatedness(m, i, j, Relatedness::Symmetric)
}

/// Relatedness between the last sent word and a candidate.
pub fn directed_relatedness(
    m: &WordMatrix,
    last: usize,
    candidate: usize,
    mode: Relatedness,
) -> Result<f64, PolicyError> {
    let len = m.len();
    if last == candidate || last >= len || candidate >= len {
        return Err(PolicyError::IndexOutOfRange {
            i: last,
            j: candidate,
            len,
        });
    }
    Ok(match mode {
        Relatedness::Symmetric => (m.get(last, candidate) + m.get(candidate, last)) / 2.0,
        Relatedness::FromLast => m.get(last, candidate),
        Relatedness::ToLast => m.get(candidate, last),
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Extreme {
    Max,
    Min,
}

/// Position of the first extreme score; later equal scores never win.
fn best_position(scores: &[f64], extreme: Extreme) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        let better = match extreme {
            Extreme::Max => s > scores[best],
            Extreme::Min => s < scores[best],
        };
        if better {
            best = k;
        }
    }
    best
}

fn remaining_or_err(state: &TransmissionState) -> Result<Vec<usize>, PolicyError> {
    let remaining = state.remaining();
    if remaining.is_empty() {
        Err(PolicyError::NoCandidates)
    } else {
        Ok(remaining)
    }
}

/// Dispatches on `ctx.config.policy`.
pub fn select(state: &TransmissionState, ctx: &PolicyContext) -> Result<Selection, PolicyError> {
    match ctx.config.policy {
        PolicyKind::LowestLpips => select_lowest_lpips(state, ctx),
        PolicyKind::MostAttentive => select_most_attentive(state, ctx).map(Selection::plain),
        PolicyKind::LeastAttentive => select_least_attentive(state, ctx).map(Selection::plain),
        PolicyKind::SentenceOrder => select_sentence_order(state).map(Selection::plain),
    }
}

/// Greedy step: simulate the receiver for every unsent word and pick the
/// one whose reconstruction is closest to the target.
pub fn select_lowest_lpips(
    state: &TransmissionState,
    ctx: &PolicyContext,
) -> Result<Selection, PolicyError> {
    let policy = PolicyKind::LowestLpips;
    let generator = ctx
        .ports
        .generator()
        .map_err(|e| PolicyError::missing(policy, e))?;
    let metric = ctx
        .ports
        .metric()
        .map_err(|e| PolicyError::missing(policy, e))?;
    let target = ctx
        .target
        .as_ref()
        .ok_or(PolicyError::TargetMissing(policy))?;
    let remaining = remaining_or_err(state)?;

    let mut audit = Vec::with_capacity(remaining.len());
    for &candidate in &remaining {
        let backend = |source| PolicyError::Backend { candidate, source };
        let prompt = state
            .extended(candidate)
            .and_then(|s| s.compose_prompt(ctx.config.ordering))
            .map_err(|e| backend(e.into()))?;
        let image = generator.generate(&prompt).map_err(backend)?;
        let distance = metric.distance(&image, target).map_err(backend)?;
        audit.push(CandidateScore {
            index: candidate,
            distance,
        });
    }
    let distances: Vec<f64> = audit.iter().map(|s| s.distance).collect();
    let index = remaining[best_position(&distances, Extreme::Min)];
    Ok(Selection {
        index,
        audit: Some(audit),
    })
}

fn select_attentive(
    state: &TransmissionState,
    ctx: &PolicyContext,
    extreme: Extreme,
) -> Result<usize, PolicyError> {
    let m = ctx.matrix(state.sentence().len())?;
    let remaining = remaining_or_err(state)?;
    match state.last_sent() {
        None => {
            let opening = if ctx.config.first_step_mode == FirstStepMode::AlwaysMostAttentive {
                Extreme::Max
            } else {
                extreme
            };
            let salience = word_salience(m);
            let scores: Vec<f64> = remaining.iter().map(|&c| salience[c]).collect();
            Ok(remaining[best_position(&scores, opening)])
        }
        Some(last) => {
            let mode = ctx.config.relatedness;
            let scores = remaining
                .iter()
                .map(|&c| directed_relatedness(m, last, c, mode))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(remaining[best_position(&scores, extreme)])
        }
    }
}

/// Opens with the most salient word, then follows the word most related to
/// the last one sent.
pub fn select_most_attentive(
    state: &TransmissionState,
    ctx: &PolicyContext,
) -> Result<usize, PolicyError> {
    select_attentive(state, ctx, Extreme::Max)
}

/// Mirror of [`select_most_attentive`] with minima in place of maxima.
pub fn select_least_attentive(
    state: &TransmissionState,
    ctx: &PolicyContext,
) -> Result<usize, PolicyError> {
    select_attentive(state, ctx, Extreme::Min)
}

pub fn select_sentence_order(state: &TransmissionState) -> Result<usize, PolicyError> {
    remaining_or_err(state).map(|r| r[0])
}
