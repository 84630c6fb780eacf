//! Sequential semantic communication over generative models.
//!
//! A transmitter holds an objective image and its caption and sends the
//! caption one word per step. The receiver regenerates an image from the
//! words received so far. A session ends once the perceptual distance to the
//! objective image drops to a threshold. Word order is chosen by a policy:
//! greedy lowest-distance search over a simulated receiver, attention-based
//! ranking from the receiver's language model, or sentence order.
//!
//! Model capabilities are [`backend::Ports`]; the crate ships deterministic
//! mock ports and a client for a remote inference service.

pub mod backend;
pub mod config;
pub mod engine;
pub mod gateway;
pub mod jsonl;
pub mod metrics;
pub mod policy;
pub mod text;

pub use backend::{AttentionTensor, FeatureImage, MockBackendConfig, Ports, WordMatrix};
pub use config::{PolicyKind, PromptOrdering, SessionConfig};
pub use engine::{
    run_all_policies, run_session, Outcome, SessionError, SessionTranscript, StepRecord,
};
pub use text::{tokenize, Sentence, TransmissionState, WordToken};
