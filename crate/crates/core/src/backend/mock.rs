//! Deterministic, formula-defined stand-ins for the four model ports.
//!
//! Every pseudo-random quantity comes from one portable scheme: a 64-bit
//! FNV-1a hash of the lowercased word, XORed with a seed, feeds a SplitMix64
//! stream whose outputs map to `[-1, 1)`. Any implementation of the same
//! scheme reproduces the same tensors and features bit for bit.

use serde::{Deserialize, Serialize};

use super::{
    AttentionTensor, BackendError, Captioner, FeatureImage, ImageGenerator, PerceptualMetric,
    TextEncoder,
};
use crate::text::{tokenize, Sentence};

/// Words treated as carrying little image content.
pub const STOP_WORDS: [&str; 12] = [
    "a", "an", "the", "of", "on", "in", "at", "to", "with", "and", "is", "are",
];

/// XORed into the seed for generator feature vectors so they are decoupled
/// from text embeddings.
pub const FEATURE_SALT: u64 = 0x5bd1_e995_0f0f_a5a5;

/// XORed into the seed for attention projection matrices.
pub const PROJECTION_SALT: u64 = 0x2545_f491_4f6c_dd1d;

/// Projection entries are PRNG draws times this gain.
pub const PROJECTION_GAIN: f64 = 1.5;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix64(self.state)
    }

    /// Uniform in `[-1, 1)` with 53 bits of resolution.
    pub fn next_signed_unit(&mut self) -> f64 {
        let unit = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        2.0 * unit - 1.0
    }
}

pub fn is_stop_word(word: &str) -> bool {
    let lower = word.to_lowercase();
    STOP_WORDS.contains(&lower.as_str())
}

/// Unit vector of length `dim` for `word` under `seed`.
pub fn word_vector(word: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = SplitMix64::new(fnv1a64(word.to_lowercase().as_bytes()) ^ seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.next_signed_unit()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockBackendConfig {
    pub embedding_dim: usize,
    pub feature_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub stop_word_weight: f64,
    pub content_word_weight: f64,
    pub seed: u64,
}

impl Default for MockBackendConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 32,
            feature_dim: 64,
            layers: 1,
            heads: 1,
            stop_word_weight: 0.2,
            content_word_weight: 1.0,
            seed: 0,
        }
    }
}

impl MockBackendConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.embedding_dim == 0 || self.feature_dim == 0 || self.layers == 0 || self.heads == 0 {
            return Err("mock dimensions, layers and heads must all be at least 1".into());
        }
        if !(self.stop_word_weight > 0.0 && self.stop_word_weight <= self.content_word_weight) {
            return Err(
                "mock weights must satisfy 0 < stop_word_weight <= content_word_weight".into(),
            );
        }
        Ok(())
    }

    pub fn word_scale(&self, word: &str) -> f64 {
        if is_stop_word(word) {
            self.stop_word_weight
        } else {
            self.content_word_weight
        }
    }
}

/// Scaled word embeddings for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
}

pub fn mock_embed(sentence: &Sentence, cfg: &MockBackendConfig) -> EmbeddingMatrix {
    let (rows, scales) = sentence
        .words()
        .iter()
        .map(|w| {
            let scale = cfg.word_scale(&w.text);
            let row = word_vector(&w.text, cfg.seed, cfg.embedding_dim)
                .into_iter()
                .map(|x| x * scale)
                .collect();
            (row, scale)
        })
        .unzip();
    EmbeddingMatrix {
        dim: cfg.embedding_dim,
        rows,
        scales,
    }
}

/// Shared query/key projection for one (layer, head), row-major `dim × dim`
/// with entries uniform in `[-1.5, 1.5)`.
pub fn projection_matrix(cfg: &MockBackendConfig, layer: usize, head: usize) -> Vec<f64> {
    let slot = ((layer as u64) << 32) | head as u64;
    let mut rng = SplitMix64::new(cfg.seed ^ PROJECTION_SALT ^ mix64(slot));
    (0..cfg.embedding_dim * cfg.embedding_dim)
        .map(|_| rng.next_signed_unit() * PROJECTION_GAIN)
        .collect()
}

/// Numerically stable softmax, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

pub fn mock_attention(sentence: &Sentence, cfg: &MockBackendConfig) -> AttentionTensor {
    mock_attention_with_hook(sentence, cfg, |_, _, _, _| {})
}

/// Like [`mock_attention`], calling `hook(layer, head, row, logits)` on each
/// row of scaled logits right before the softmax.
pub fn mock_attention_with_hook<F>(
    sentence: &Sentence,
    cfg: &MockBackendConfig,
    mut hook: F,
) -> AttentionTensor
where
    F: FnMut(usize, usize, usize, &mut [f64]),
{
    let embeddings = mock_embed(sentence, cfg);
    let d = cfg.embedding_dim;
    let len = sentence.len();
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut weights = Vec::with_capacity(cfg.layers * cfg.heads * len * len);

    for layer in 0..cfg.layers {
        for head in 0..cfg.heads {
            let w = projection_matrix(cfg, layer, head);
            // Q = E·W and K = E·W share the projection.
            let projected: Vec<Vec<f64>> = embeddings
                .rows
                .iter()
                .map(|e| {
                    (0..d)
                        .map(|col| (0..d).map(|k| e[k] * w[k * d + col]).sum())
                        .collect()
                })
                .collect();
            for (r, q) in projected.iter().enumerate() {
                let mut logits: Vec<f64> = projected
                    .iter()
                    .map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt_d)
                    .collect();
                hook(layer, head, r, &mut logits);
                softmax_in_place(&mut logits);
                weights.extend_from_slice(&logits);
            }
        }
    }
    AttentionTensor::new(cfg.layers, cfg.heads, len, weights)
}

/// Sum of scaled feature vectors of the prompt's words; order-invariant bit
/// for bit because words are summed in sorted order.
pub fn mock_generate(prompt: &str, cfg: &MockBackendConfig) -> FeatureImage {
    let mut words: Vec<&str> = prompt.split_whitespace().collect();
    words.sort_unstable();
    let mut features = vec![0.0; cfg.feature_dim];
    for word in words {
        let scale = cfg.word_scale(word);
        let g = word_vector(word, cfg.seed ^ FEATURE_SALT, cfg.feature_dim);
        for (f, x) in features.iter_mut().zip(g) {
            *f += scale * x;
        }
    }
    FeatureImage::Features(features)
}

/// The objective image of a mock scenario, defined by its full caption.
pub fn mock_target(caption: &str, cfg: &MockBackendConfig) -> Result<FeatureImage, BackendError> {
    let sentence = tokenize(caption)?;
    Ok(mock_generate(&sentence.joined(), cfg))
}

pub fn mock_caption(image_id: &str) -> Result<Sentence, BackendError> {
    Ok(tokenize(image_id)?)
}

/// Half of one minus cosine similarity, clamped to `[0, 1]`. A zero vector
/// is maximally far from any non-zero vector.
pub fn mock_distance(x: &FeatureImage, y: &FeatureImage) -> Result<f64, BackendError> {
    let (a, b) = match (x, y) {
        (FeatureImage::Features(a), FeatureImage::Features(b)) => (a, b),
        _ => return Err(BackendError::ModeMismatch),
    };
    if a.len() != b.len() {
        return Err(BackendError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let sa: f64 = a.iter().map(|v| v * v).sum();
    let sb: f64 = b.iter().map(|v| v * v).sum();
    let d = match (sa == 0.0, sb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        (false, false) => {
            // sqrt(s·s) == s exactly, so cosine is exactly ±1 for x and ±x.
            let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
            let cosine = (dot / (sa * sb).sqrt()).clamp(-1.0, 1.0);
            (1.0 - cosine) / 2.0
        }
    };
    Ok(d.clamp(0.0, 1.0))
}

/// All four ports backed by the formulas above.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    cfg: MockBackendConfig,
}

impl MockBackend {
    pub fn new(cfg: MockBackendConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &MockBackendConfig {
        &self.cfg
    }
}

impl Captioner for MockBackend {
    /// The "image" is the UTF-8 caption that defines it.
    fn caption(&self, image: &[u8]) -> Result<Sentence, BackendError> {
        let id = std::str::from_utf8(image)
            .map_err(|_| BackendError::Failed("mock image id is not UTF-8".into()))?;
        mock_caption(id)
    }
}

impl TextEncoder for MockBackend {
    fn attention(&self, sentence: &Sentence) -> Result<AttentionTensor, BackendError> {
        Ok(mock_attention(sentence, &self.cfg))
    }
}

impl ImageGenerator for MockBackend {
    fn generate(&self, prompt: &str) -> Result<FeatureImage, BackendError> {
        Ok(mock_generate(prompt, &self.cfg))
    }
}

impl PerceptualMetric for MockBackend {
    fn distance(&self, a: &FeatureImage, b: &FeatureImage) -> Result<f64, BackendError> {
        mock_distance(a, b)
    }
}
