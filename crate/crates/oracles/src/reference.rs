//! Direct evaluators of the mock formulas, written from their definitions.

const STOP: [&str; 12] = [
    "a", "an", "the", "of", "on", "in", "at", "to", "with", "and", "is", "are",
];
const FEATURE_SALT: u64 = 0x5bd1_e995_0f0f_a5a5;
const PROJECTION_SALT: u64 = 0x2545_f491_4f6c_dd1d;
const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn fnv(s: &str) -> u64 {
    let mut h: u64 = 14_695_981_039_346_656_037;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(1_099_511_628_211);
    }
    h
}

fn finalize(x: u64) -> u64 {
    let mut z = x;
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `count` draws in `[-1, 1)` from a SplitMix64 stream starting at `state`.
fn draws(state: u64, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    for k in 1..=count as u64 {
        let z = finalize(state.wrapping_add(GOLDEN_GAMMA.wrapping_mul(k)));
        out.push((z >> 11) as f64 * 2f64.powi(-53) * 2.0 - 1.0);
    }
    out
}

fn unit(word: &str, seed: u64, dim: usize) -> Vec<f64> {
    let v = draws(fnv(&word.to_lowercase()) ^ seed, dim);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn scale(word: &str, stop_weight: f64, content_weight: f64) -> f64 {
    if STOP.contains(&word.to_lowercase().as_str()) {
        stop_weight
    } else {
        content_weight
    }
}

pub fn is_stop(word: &str) -> bool {
    STOP.contains(&word.to_lowercase().as_str())
}

/// Mock generator features with default weights (0.2 / 1.0).
pub fn features(prompt: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut words: Vec<&str> = prompt.split_whitespace().collect();
    words.sort();
    let mut acc = vec![0.0; dim];
    for w in words {
        let s = scale(w, 0.2, 1.0);
        for (a, g) in acc.iter_mut().zip(unit(w, seed ^ FEATURE_SALT, dim)) {
            *a += s * g;
        }
    }
    acc
}

pub fn cosine_distance(x: &[f64], y: &[f64]) -> f64 {
    let xx: f64 = x.iter().map(|v| v * v).sum();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    if xx == 0.0 && yy == 0.0 {
        return 0.0;
    }
    if xx == 0.0 || yy == 0.0 {
        return 1.0;
    }
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    ((1.0 - (xy / (xx * yy).sqrt()).clamp(-1.0, 1.0)) / 2.0).clamp(0.0, 1.0)
}

/// Single-layer, single-head mock attention with default weights, as rows.
pub fn attention(words: &[&str], seed: u64, dim: usize) -> Vec<Vec<f64>> {
    let emb: Vec<Vec<f64>> = words
        .iter()
        .map(|w| {
            let s = scale(w, 0.2, 1.0);
            unit(w, seed, dim).into_iter().map(|x| x * s).collect()
        })
        .collect();
    let w: Vec<f64> = draws(seed ^ PROJECTION_SALT ^ finalize(0), dim * dim)
        .into_iter()
        .map(|x| 1.5 * x)
        .collect();
    let proj: Vec<Vec<f64>> = emb
        .iter()
        .map(|e| {
            let mut out = vec![0.0; dim];
            for (k, ek) in e.iter().enumerate() {
                for (col, o) in out.iter_mut().enumerate() {
                    *o += ek * w[k * dim + col];
                }
            }
            out
        })
        .collect();
    let root = (dim as f64).sqrt();
    proj.iter()
        .map(|q| {
            let logits: Vec<f64> = proj
                .iter()
                .map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / root)
                .collect();
            let top = logits.iter().cloned().fold(f64::MIN, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / z).collect()
        })
        .collect()
}
