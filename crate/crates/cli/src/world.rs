//! Backend wiring for one experiment.

use std::fs;
use std::sync::Arc;

use semcomm::backend::mock::mock_target;
use semcomm::backend::{BackendError, FeatureImage, ImageGenerator};
use semcomm::gateway::GatewayClient;
use semcomm::{
    run_session, tokenize, MockBackendConfig, PolicyKind, Ports, Sentence, SessionConfig,
    SessionError, SessionTranscript,
};

use crate::config::{BackendKind, ExperimentConfig, Scenario};
use crate::CliError;

/// A scenario ready to run: its caption and, for the gateway, the objective
/// image bytes.
pub struct Prepared {
    sentence: Sentence,
    image: Option<Vec<u8>>,
}

enum Backend {
    Mock(MockBackendConfig),
    Gateway(Arc<GatewayClient>),
}

pub struct World {
    backend: Backend,
    scenarios: Vec<Scenario>,
    session: SessionConfig,
}

/// Generation through a shared client with a per-cell seed.
struct SeededGenerator {
    client: Arc<GatewayClient>,
    seed: u64,
}

impl ImageGenerator for SeededGenerator {
    fn generate(&self, prompt: &str) -> Result<FeatureImage, BackendError> {
        Ok(self.client.remote_generate(prompt, self.seed)?)
    }
}

fn session_error(e: SessionError) -> CliError {
    match e {
        SessionError::Config(_) | SessionError::CapabilityMissing { .. } => {
            CliError::Config(e.to_string())
        }
        e => CliError::Backend(e.to_string()),
    }
}

impl World {
    pub fn connect(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let backend = match cfg.backend {
            BackendKind::Mock => Backend::Mock(cfg.mock.clone().unwrap_or_default()),
            BackendKind::Gateway => {
                let gw = cfg.gateway.clone().unwrap_or_default();
                Backend::Gateway(Arc::new(
                    GatewayClient::new(gw).map_err(|e| CliError::Config(e.to_string()))?,
                ))
            }
        };
        Ok(Self {
            backend,
            scenarios: cfg.scenarios.clone(),
            session: cfg.session.clone(),
        })
    }

    /// Captions every scenario once. The gateway captioner sees the image;
    /// mock captions are given.
    pub fn prepare_all(&self) -> Vec<Result<Prepared, CliError>> {
        self.scenarios.iter().map(|s| self.prepare(s)).collect()
    }

    fn prepare(&self, scenario: &Scenario) -> Result<Prepared, CliError> {
        match (scenario, &self.backend) {
            (Scenario::Caption { caption }, Backend::Mock(_)) => Ok(Prepared {
                sentence: tokenize(caption).map_err(|e| CliError::Config(e.to_string()))?,
                image: None,
            }),
            (Scenario::Image { image_path }, Backend::Gateway(client)) => {
                let bytes = fs::read(image_path).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {e}", image_path.display()))
                })?;
                let sentence = client
                    .remote_caption(&bytes)
                    .map_err(|e| CliError::Backend(format!("caption: {e}")))?;
                Ok(Prepared {
                    sentence,
                    image: Some(bytes),
                })
            }
            _ => Err(CliError::Config(
                "scenario kind does not match the backend".into(),
            )),
        }
    }

    /// One session. `seed` drives both the session record and the backend.
    pub fn run_cell(
        &self,
        prepared: &Prepared,
        policy: PolicyKind,
        seed: u64,
    ) -> Result<SessionTranscript, CliError> {
        let session = SessionConfig {
            policy,
            seed,
            ..self.session.clone()
        };
        let (target, ports) = match &self.backend {
            Backend::Mock(mock) => {
                let mock = mock.with_seed(seed);
                let target = mock_target(prepared.sentence.source_text(), &mock)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                (target, Ports::mock(mock))
            }
            Backend::Gateway(client) => {
                let bytes = prepared.image.clone().unwrap_or_default();
                let ports = Ports {
                    generator: Some(Arc::new(SeededGenerator {
                        client: client.clone(),
                        seed,
                    })),
                    ..Ports::full_shared(client.clone())
                };
                (FeatureImage::encoded(bytes), ports)
            }
        };
        run_session(&target, &prepared.sentence, &ports, &session).map_err(session_error)
    }
}
