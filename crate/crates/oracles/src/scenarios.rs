//! Seeded caption generators for statistical properties.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CONTENT_WORDS: [&str; 40] = [
    "cat", "dog", "horse", "bird", "car", "bicycle", "tree", "river", "mountain", "house", "table",
    "chair", "boy", "girl", "man", "woman", "ball", "beach", "street", "window", "red", "green",
    "small", "large", "wooden", "sunny", "old", "young", "running", "sitting", "flying", "holding",
    "eating", "sleeping", "kitchen", "garden", "field", "train", "boat", "city",
];

pub const STOP_WORDS: [&str; 12] = [
    "a", "an", "the", "of", "on", "in", "at", "to", "with", "and", "is", "are",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    /// Fraction of content words per caption.
    pub content_fraction: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            content_fraction: 0.5,
            min_len: 4,
            max_len: 12,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    /// Content words in a caption of `len` words: the rounded fraction,
    /// kept within `1..len` so every caption mixes both kinds.
    pub fn content_count(&self, len: usize) -> usize {
        let target = (self.content_fraction * len as f64).round() as usize;
        target.clamp(1, len.saturating_sub(1).max(1))
    }
}

/// `n` captions with lengths in `spec.min_len..=spec.max_len`, deterministic
/// in `spec.seed`.
pub fn generate_scenarios(spec: &ScenarioSpec, n: usize) -> Vec<String> {
    assert!(n >= 1, "need at least one scenario");
    assert!(spec.min_len >= 1 && spec.min_len <= spec.max_len);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let content = spec.content_count(len);
            let mut words: Vec<&str> = (0..len)
                .map(|i| {
                    if i < content {
                        *CONTENT_WORDS.choose(&mut rng).expect("non-empty")
                    } else {
                        *STOP_WORDS.choose(&mut rng).expect("non-empty")
                    }
                })
                .collect();
            words.shuffle(&mut rng);
            words.join(" ")
        })
        .collect()
}
