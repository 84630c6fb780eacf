//! One communication session: the transmitter picks a word, the receiver
//! regenerates from everything received so far, and the harness (which holds
//! the objective image) measures the distance and decides when to stop.

use std::collections::BTreeMap;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Capability, FeatureImage, Ports};
use crate::config::{ConfigError, PolicyKind, SessionConfig};
use crate::jsonl;
use crate::metrics::{encode_step, WireError};
use crate::policy::{self, CandidateScore, PolicyContext, PolicyError};
use crate::text::{tokenize, Sentence, TextError, TransmissionState};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(#[from] ConfigError),
    #[error("policy {policy} cannot run without the {capability} port")]
    CapabilityMissing {
        policy: PolicyKind,
        capability: Capability,
    },
    #[error("step {step}: {source}")]
    Policy {
        step: usize,
        #[source]
        source: PolicyError,
    },
    #[error("step {step}: {source}")]
    Backend {
        step: usize,
        #[source]
        source: BackendError,
    },
    #[error("step {step}: {source}")]
    Wire {
        step: usize,
        #[source]
        source: WireError,
    },
    #[error("{policy}: {source}")]
    Tagged {
        policy: PolicyKind,
        #[source]
        source: Box<SessionError>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub word: String,
    pub index: usize,
    pub prompt: String,
    pub distance: f64,
    pub bytes_step: usize,
    pub bytes_total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_audit: Option<Vec<CandidateScore>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    /// Distance reached the threshold.
    Success,
    /// Every word was sent without reaching the threshold.
    Exhausted,
    /// The step budget ran out first.
    Budget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionTranscript {
    pub config: SessionConfig,
    pub caption: String,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    pub steps_to_success: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: SessionConfig,
    caption: String,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript is empty")]
    Empty,
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("caption: {0}")]
    Caption(#[from] TextError),
}

impl SessionTranscript {
    pub fn bytes_total(&self) -> usize {
        self.steps.last().map_or(0, |s| s.bytes_total)
    }

    pub fn final_distance(&self) -> Option<f64> {
        self.steps.last().map(|s| s.distance)
    }

    /// Transmission order of sentence indices.
    pub fn sequence(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.index).collect()
    }

    /// Header line with config and caption, then one line per step.
    pub fn to_jsonl(&self) -> String {
        let header = Header {
            config: self.config.clone(),
            caption: self.caption.clone(),
        };
        let mut out = jsonl::to_line(&header).expect("header serializes");
        out.push('\n');
        for step in &self.steps {
            out.push_str(&jsonl::to_line(step).expect("step record serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses [`Self::to_jsonl`] output. The outcome is re-derived from the
    /// threshold, the caption length and the step budget.
    pub fn from_jsonl(text: &str) -> Result<Self, TranscriptError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(TranscriptError::Empty)?;
        let header: Header = serde_json::from_str(first)
            .map_err(|source| TranscriptError::Json { line: 1, source })?;
        let steps = lines
            .map(|(i, l)| {
                serde_json::from_str::<StepRecord>(l).map_err(|source| TranscriptError::Json {
                    line: i + 1,
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let len = tokenize(&header.caption)?.len();
        let outcome = match steps.last() {
            Some(s) if s.distance <= header.config.threshold => Outcome::Success,
            _ if steps.len() >= len => Outcome::Exhausted,
            _ => Outcome::Budget,
        };
        let steps_to_success = (outcome == Outcome::Success).then_some(steps.len());
        Ok(Self {
            config: header.config,
            caption: header.caption,
            steps,
            outcome,
            steps_to_success,
        })
    }
}

fn require(
    policy: PolicyKind,
    slot: Result<impl Sized, crate::backend::MissingCapability>,
) -> Result<(), SessionError> {
    slot.map(|_| ())
        .map_err(|e| SessionError::CapabilityMissing {
            policy,
            capability: e.0,
        })
}

/// Runs one session until the distance reaches `cfg.threshold`, every word
/// has been sent, or the step budget runs out. At least one word is always
/// sent.
pub fn run_session(
    target: &FeatureImage,
    caption: &Sentence,
    ports: &Ports,
    cfg: &SessionConfig,
) -> Result<SessionTranscript, SessionError> {
    cfg.validate()?;
    let policy = cfg.policy;
    // Receiver regeneration and harness scoring need these regardless of
    // what the transmitter caches.
    require(policy, ports.generator())?;
    require(policy, ports.metric())?;
    let generator = ports.generator().expect("checked");
    let metric = ports.metric().expect("checked");

    let ctx = PolicyContext::prepare(caption, Some(target.clone()), ports.clone(), cfg.clone())
        .map_err(|source| match source {
            PolicyError::CapabilityMissing { policy, capability } => {
                SessionError::CapabilityMissing { policy, capability }
            }
            source => SessionError::Policy { step: 1, source },
        })?;

    let budget = cfg.step_budget(caption.len());
    let mut state = TransmissionState::new(caption.clone());
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut bytes_total = 0;
    let mut outcome = Outcome::Exhausted;

    while !state.remaining().is_empty() {
        if state.step() >= budget {
            outcome = Outcome::Budget;
            break;
        }
        let step = state.step() + 1;
        let selection =
            policy::select(&state, &ctx).map_err(|source| SessionError::Policy { step, source })?;
        let index = selection.index;
        state.push(index).map_err(|e| SessionError::Backend {
            step,
            source: e.into(),
        })?;

        let word = caption
            .word(index)
            .expect("selected index is in range")
            .to_owned();
        let bytes_step = encode_step(&word, index)
            .map_err(|source| SessionError::Wire { step, source })?
            .len();
        bytes_total += bytes_step;

        let prompt = state
            .compose_prompt(cfg.ordering)
            .map_err(|e| SessionError::Backend {
                step,
                source: e.into(),
            })?;
        // The greedy transmitter already simulated this exact prompt.
        let audited = selection
            .audit
            .as_ref()
            .and_then(|a| a.iter().find(|c| c.index == index))
            .map(|c| c.distance);
        let distance = match audited {
            Some(d) => d,
            None => {
                let image = generator
                    .generate(&prompt)
                    .map_err(|source| SessionError::Backend { step, source })?;
                metric
                    .distance(&image, target)
                    .map_err(|source| SessionError::Backend { step, source })?
            }
        };

        steps.push(StepRecord {
            step,
            word,
            index,
            prompt,
            distance,
            bytes_step,
            bytes_total,
            candidate_audit: selection.audit,
        });
        if distance <= cfg.threshold {
            outcome = Outcome::Success;
            break;
        }
    }

    let steps_to_success = (outcome == Outcome::Success).then_some(steps.len());
    Ok(SessionTranscript {
        config: cfg.clone(),
        caption: caption.source_text().to_owned(),
        steps,
        outcome,
        steps_to_success,
    })
}

/// Runs every policy on the same scenario. Sessions are independent and run
/// on separate threads.
pub fn run_all_policies(
    target: &FeatureImage,
    caption: &Sentence,
    ports: &Ports,
    base: &SessionConfig,
) -> Result<BTreeMap<PolicyKind, SessionTranscript>, SessionError> {
    for policy in PolicyKind::ALL {
        require(policy, ports.text_encoder())?;
    }
    let results: Vec<(PolicyKind, Result<SessionTranscript, SessionError>)> =
        thread::scope(|scope| {
            let handles: Vec<_> = PolicyKind::ALL
                .into_iter()
                .map(|policy| {
                    let cfg = base.with_policy(policy);
                    (
                        policy,
                        scope.spawn(move || run_session(target, caption, ports, &cfg)),
                    )
                })
                .collect();
            handles
                .into_iter()
                .map(|(p, h)| (p, h.join().expect("session thread panicked")))
                .collect()
        });
    results
        .into_iter()
        .map(|(policy, r)| {
            r.map(|t| (policy, t))
                .map_err(|source| SessionError::Tagged {
                    policy,
                    source: Box::new(source),
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{mock_target, MockBackendConfig};
    use crate::backend::{ImageGenerator, PerceptualMetric};
    use crate::config::PromptOrdering;
    use std::sync::Arc;

    fn mock_world(caption: &str) -> (FeatureImage, Sentence, Ports) {
        let cfg = MockBackendConfig::default();
        (
            mock_target(caption, &cfg).unwrap(),
            tokenize(caption).unwrap(),
            Ports::mock(cfg),
        )
    }

    /// Generator whose image is the prompt's word count, and a metric that
    /// maps word count to a fixed distance table.
    struct TableWorld(Vec<f64>);

    impl ImageGenerator for TableWorld {
        fn generate(&self, prompt: &str) -> Result<FeatureImage, BackendError> {
            Ok(FeatureImage::Features(vec![
                prompt.split_whitespace().count() as f64,
            ]))
        }
    }

    impl PerceptualMetric for TableWorld {
        fn distance(&self, a: &FeatureImage, _: &FeatureImage) -> Result<f64, BackendError> {
            let words = a.features().unwrap()[0] as usize;
            Ok(self.0[words - 1])
        }
    }

    fn table_ports(table: Vec<f64>) -> Ports {
        let world = Arc::new(TableWorld(table));
        Ports {
            generator: Some(world.clone()),
            metric: Some(world),
            ..Ports::default()
        }
    }

    #[test]
    fn crossing_at_first_step_halts() {
        let ports = table_ports(vec![0.55, 0.1]);
        let caption = tokenize("red car").unwrap();
        let cfg = SessionConfig {
            policy: PolicyKind::SentenceOrder,
            ..Default::default()
        };
        let t = run_session(&FeatureImage::Features(vec![0.0]), &caption, &ports, &cfg).unwrap();
        assert_eq!(t.outcome, Outcome::Success);
        assert_eq!(t.steps_to_success, Some(1));
        assert_eq!(t.steps.len(), 1);
    }

    #[test]
    fn outcomes_exhausted_and_budget() {
        let caption = tokenize("a b c").unwrap();
        let target = FeatureImage::Features(vec![0.0]);
        let cfg = SessionConfig {
            policy: PolicyKind::SentenceOrder,
            ..Default::default()
        };
        let t = run_session(&target, &caption, &table_ports(vec![0.9; 3]), &cfg).unwrap();
        assert_eq!(t.outcome, Outcome::Exhausted);
        assert_eq!(t.steps_to_success, None);
        assert_eq!(t.steps.len(), 3);

        let limited = SessionConfig {
            max_steps: Some(2),
            ..cfg
        };
        let t = run_session(&target, &caption, &table_ports(vec![0.9; 3]), &limited).unwrap();
        assert_eq!(t.outcome, Outcome::Budget);
        assert_eq!(t.steps.len(), 2);
    }

    #[test]
    fn zero_threshold_succeeds_on_last_word() {
        let (target, caption, ports) = mock_world("a cat on a mat");
        for policy in PolicyKind::ALL {
            let cfg = SessionConfig {
                policy,
                threshold: 0.0,
                ..Default::default()
            };
            let t = run_session(&target, &caption, &ports, &cfg).unwrap();
            assert_eq!(t.outcome, Outcome::Success, "{policy}");
            assert_eq!(t.steps_to_success, Some(5));
            let last = t.steps.last().unwrap();
            assert!(last.distance <= 1e-12, "{policy}: {}", last.distance);
        }
    }

    #[test]
    fn negative_threshold_rejected() {
        let (target, caption, ports) = mock_world("a cat");
        let cfg = SessionConfig {
            threshold: -0.1,
            ..Default::default()
        };
        assert!(matches!(
            run_session(&target, &caption, &ports, &cfg),
            Err(SessionError::Config(ConfigError::Threshold(_)))
        ));
    }

    #[test]
    fn missing_encoder_is_reported() {
        let ports = table_ports(vec![0.9, 0.9]);
        let caption = tokenize("red car").unwrap();
        let cfg = SessionConfig {
            policy: PolicyKind::MostAttentive,
            ..Default::default()
        };
        let err =
            run_session(&FeatureImage::Features(vec![0.0]), &caption, &ports, &cfg).unwrap_err();
        assert!(matches!(
            err,
            SessionError::CapabilityMissing {
                capability: Capability::TextEncoder,
                ..
            }
        ));
    }

    #[test]
    fn records_are_prefix_consistent() {
        let (target, caption, ports) = mock_world("the small dog runs across a green park");
        for ordering in [
            PromptOrdering::SentencePosition,
            PromptOrdering::ArrivalOrder,
        ] {
            let cfg = SessionConfig {
                policy: PolicyKind::MostAttentive,
                threshold: 0.0,
                ordering,
                ..Default::default()
            };
            let t = run_session(&target, &caption, &ports, &cfg).unwrap();
            let mut total = 0;
            for (k, rec) in t.steps.iter().enumerate() {
                let st = TransmissionState::with_sent(caption.clone(), t.sequence()[..=k].to_vec())
                    .unwrap();
                assert_eq!(rec.prompt, st.compose_prompt(ordering).unwrap());
                assert_eq!(rec.step, k + 1);
                total += rec.bytes_step;
                assert_eq!(rec.bytes_total, total);
            }
        }
    }

    #[test]
    fn greedy_audit_matches_recorded_distance() {
        let (target, caption, ports) = mock_world("a cat on a mat");
        let cfg = SessionConfig {
            threshold: 0.0,
            ..Default::default()
        };
        let t = run_session(&target, &caption, &ports, &cfg).unwrap();
        for rec in &t.steps {
            let audit = rec.candidate_audit.as_ref().unwrap();
            let min = audit
                .iter()
                .map(|c| c.distance)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(rec.distance, min);
            // The receiver's own regeneration agrees with the prediction.
            let image = ports.generator().unwrap().generate(&rec.prompt).unwrap();
            assert_eq!(
                ports.metric().unwrap().distance(&image, &target).unwrap(),
                rec.distance
            );
        }
    }

    #[test]
    fn jsonl_round_trip_and_replay() {
        let (target, caption, ports) = mock_world("A cat, on a mat.");
        let cfg = SessionConfig {
            threshold: 0.05,
            ..Default::default()
        };
        let a = run_session(&target, &caption, &ports, &cfg).unwrap();
        let b = run_session(&target, &caption, &ports, &cfg).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());

        let text = a.to_jsonl();
        let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(header["caption"], "A cat, on a mat.");
        assert_eq!(header["config"]["threshold"].to_string(), "0.05");
        let first: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        let keys: Vec<&str> = first
            .as_object()
            .unwrap()
            .keys()
            .map(String::as_str)
            .collect();
        assert_eq!(
            keys,
            [
                "step",
                "word",
                "index",
                "prompt",
                "distance",
                "bytes_step",
                "bytes_total",
                "candidate_audit"
            ]
        );
        assert!(text.lines().nth(1).unwrap().contains(r#""distance":0."#));

        let parsed = SessionTranscript::from_jsonl(&text).unwrap();
        assert_eq!(parsed.outcome, a.outcome);
        assert_eq!(parsed.steps_to_success, a.steps_to_success);
        assert_eq!(parsed.sequence(), a.sequence());
        assert_eq!(parsed.to_jsonl(), text);
    }

    #[test]
    fn all_policies_share_scenario() {
        let (target, caption, ports) = mock_world("a dog with a red ball on the grass");
        let base = SessionConfig::default();
        let all = run_all_policies(&target, &caption, &ports, &base).unwrap();
        assert_eq!(all.len(), 4);
        for (policy, t) in &all {
            assert_eq!(t.config.policy, *policy);
            assert_eq!(t.caption, caption.source_text());
            assert_eq!(t.config.threshold, base.threshold);
        }
    }

    #[test]
    fn all_policies_need_encoder() {
        let ports = table_ports(vec![0.9]);
        let err = run_all_policies(
            &FeatureImage::Features(vec![0.0]),
            &tokenize("x").unwrap(),
            &ports,
            &SessionConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SessionError::CapabilityMissing { .. }));
    }
}
