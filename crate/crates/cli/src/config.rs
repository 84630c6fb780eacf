//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use semcomm::gateway::GatewayConfig;
use semcomm::{MockBackendConfig, SessionConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Mock,
    Gateway,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Scenario {
    Caption { caption: String },
    Image { image_path: PathBuf },
}

fn default_dims() -> [usize; 2] {
    [512, 512]
}

/// One file fully determines an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub backend: BackendKind,
    #[serde(default)]
    pub gateway: Option<GatewayConfig>,
    #[serde(default)]
    pub mock: Option<MockBackendConfig>,
    #[serde(default)]
    pub session: SessionConfig,
    pub scenarios: Vec<Scenario>,
    pub output_dir: PathBuf,
    /// Height and width of the raw image baseline in load accounting.
    #[serde(default = "default_dims")]
    pub image_dims: [usize; 2],
}

impl ExperimentConfig {
    /// Reads and validates `path`. Relative image paths and output
    /// directories resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut cfg.scenarios {
            if let Scenario::Image { image_path } = s {
                if image_path.is_relative() {
                    *image_path = base.join(&*image_path);
                }
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.scenarios.is_empty() {
            return bad("scenarios is empty".into());
        }
        if self.image_dims.contains(&0) {
            return bad("image_dims must be positive".into());
        }
        self.session
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        match self.backend {
            BackendKind::Mock => {
                let mock = self.mock.as_ref().ok_or_else(|| {
                    CliError::Config("backend \"mock\" needs a \"mock\" section".into())
                })?;
                mock.validate().map_err(CliError::Config)?;
                for (i, s) in self.scenarios.iter().enumerate() {
                    match s {
                        Scenario::Caption { caption } => {
                            semcomm::tokenize(caption)
                                .map_err(|e| CliError::Config(format!("scenario {i}: {e}")))?;
                        }
                        Scenario::Image { .. } => {
                            return bad(format!("scenario {i}: the mock backend takes captions"));
                        }
                    }
                }
            }
            BackendKind::Gateway => {
                let gw = self.gateway.as_ref().ok_or_else(|| {
                    CliError::Config("backend \"gateway\" needs a \"gateway\" section".into())
                })?;
                gw.validate().map_err(|e| CliError::Config(e.to_string()))?;
                for (i, s) in self.scenarios.iter().enumerate() {
                    match s {
                        Scenario::Image { image_path } => {
                            if !image_path.is_file() {
                                return bad(format!(
                                    "scenario {i}: no image at {}",
                                    image_path.display()
                                ));
                            }
                        }
                        Scenario::Caption { .. } => {
                            return bad(format!(
                                "scenario {i}: the gateway backend takes image paths"
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
