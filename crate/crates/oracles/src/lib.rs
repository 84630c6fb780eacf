//! Test-only oracles for the semcomm crates.
//!
//! Nothing here calls into `semcomm::policy` or the mock backend's formula
//! code: the greedy search, prompt assembly and mock formulas are written
//! out again from their definitions so the suites compare two independent
//! routes.

pub mod reference;
pub mod scenarios;

use semcomm::{FeatureImage, Ports, PromptOrdering, Sentence};

pub use scenarios::{generate_scenarios, ScenarioSpec};

/// Receiver prompt for a set of sent indices, assembled from scratch.
pub fn oracle_prompt(words: &[String], sent: &[usize], ordering: PromptOrdering) -> String {
    let mut order: Vec<usize> = sent.to_vec();
    if ordering == PromptOrdering::SentencePosition {
        // Insertion sort, deliberately not the library's sort path.
        for i in 1..order.len() {
            let mut j = i;
            while j > 0 && order[j - 1] > order[j] {
                order.swap(j - 1, j);
                j -= 1;
            }
        }
    }
    let mut prompt = String::new();
    for (k, &i) in order.iter().enumerate() {
        if k > 0 {
            prompt.push(' ');
        }
        prompt.push_str(&words[i]);
    }
    prompt
}

/// Exhaustive per-step argmin over the receiver's distance, iterated until
/// every word is sent. Equal distances go to the lower sentence index.
pub fn oracle_greedy(
    target: &FeatureImage,
    caption: &Sentence,
    ports: &Ports,
    ordering: PromptOrdering,
) -> Vec<usize> {
    let generator = ports.generator.as_ref().expect("oracle needs a generator");
    let metric = ports.metric.as_ref().expect("oracle needs a metric");
    let words: Vec<String> = caption.words().iter().map(|w| w.text.clone()).collect();
    let n = words.len();
    let mut sent: Vec<usize> = Vec::new();
    let mut used = vec![false; n];

    while sent.len() < n {
        let mut best: Option<(usize, f64)> = None;
        for candidate in (0..n).filter(|&c| !used[c]) {
            let mut trial = sent.clone();
            trial.push(candidate);
            let prompt = oracle_prompt(&words, &trial, ordering);
            let image = generator.generate(&prompt).expect("generator");
            let d = metric.distance(&image, target).expect("metric");
            match best {
                Some((_, bd)) if d >= bd => {}
                _ => best = Some((candidate, d)),
            }
        }
        let (chosen, _) = best.expect("at least one candidate");
        used[chosen] = true;
        sent.push(chosen);
    }
    sent
}
