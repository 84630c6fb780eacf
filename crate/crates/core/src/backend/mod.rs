//! Model capabilities as ports.
//!
//! A transmitter that caches the receiver's whole pipeline holds every port;
//! one that only caches the receiver's language model holds just the text
//! encoder. [`Ports`] models both with optional slots.

pub mod mock;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::gateway::GatewayError;
use crate::text::{Sentence, TextError};

pub use mock::{MockBackend, MockBackendConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capability {
    Captioner,
    TextEncoder,
    Generator,
    PerceptualMetric,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::Captioner => "captioner",
            Capability::TextEncoder => "text encoder",
            Capability::Generator => "image generator",
            Capability::PerceptualMetric => "perceptual metric",
        })
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("feature dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("mock metric received a gateway-encoded image")]
    ModeMismatch,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{0}")]
    Failed(String),
}

/// A generated or objective image.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureImage {
    /// Mock mode: a feature vector standing in for pixels.
    Features(Vec<f64>),
    /// Gateway mode: encoded image bytes, kept opaque.
    Encoded {
        bytes: Vec<u8>,
        width: Option<u32>,
        height: Option<u32>,
    },
}

impl FeatureImage {
    pub fn features(&self) -> Option<&[f64]> {
        match self {
            FeatureImage::Features(f) => Some(f),
            FeatureImage::Encoded { .. } => None,
        }
    }

    pub fn encoded(bytes: Vec<u8>) -> Self {
        FeatureImage::Encoded {
            bytes,
            width: None,
            height: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("attention row (layer {layer}, head {head}, row {row}) is not stochastic: sum {sum}")]
pub struct NonStochasticRow {
    pub layer: usize,
    pub head: usize,
    pub row: usize,
    pub sum: f64,
}

/// Per-layer, per-head `len × len` attention weights, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    layers: usize,
    heads: usize,
    len: usize,
    weights: Vec<f64>,
}

impl AttentionTensor {
    /// Panics if `weights` does not have `layers * heads * len * len` entries.
    pub fn new(layers: usize, heads: usize, len: usize, weights: Vec<f64>) -> Self {
        assert!(
            layers >= 1 && heads >= 1,
            "attention tensor needs at least one slice"
        );
        assert_eq!(
            weights.len(),
            layers * heads * len * len,
            "attention tensor shape"
        );
        Self {
            layers,
            heads,
            len,
            weights,
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn slice(&self, layer: usize, head: usize) -> &[f64] {
        let n = self.len * self.len;
        let start = (layer * self.heads + head) * n;
        &self.weights[start..start + n]
    }

    pub fn get(&self, layer: usize, head: usize, row: usize, col: usize) -> f64 {
        self.slice(layer, head)[row * self.len + col]
    }

    /// Checks that every entry is non-negative and every row sums to one
    /// within `tol`.
    pub fn check_stochastic(&self, tol: f64) -> Result<(), NonStochasticRow> {
        for layer in 0..self.layers {
            for head in 0..self.heads {
                let slice = self.slice(layer, head);
                for (row, values) in slice.chunks(self.len.max(1)).enumerate() {
                    let sum: f64 = values.iter().sum();
                    if values.iter().any(|&v| v < 0.0 || !v.is_finite()) || (sum - 1.0).abs() > tol
                    {
                        return Err(NonStochasticRow {
                            layer,
                            head,
                            row,
                            sum,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Dense square matrix over word positions.
#[derive(Debug, Clone, PartialEq)]
pub struct WordMatrix {
    len: usize,
    data: Vec<f64>,
}

impl WordMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let len = rows.len();
        assert!(rows.iter().all(|r| r.len() == len), "matrix must be square");
        Self {
            len,
            data: rows.concat(),
        }
    }

    pub fn from_flat(len: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), len * len, "matrix must be square");
        Self { len, data }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.len + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.len..(row + 1) * self.len]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.len.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }
}

pub trait Captioner: Send + Sync {
    fn caption(&self, image: &[u8]) -> Result<Sentence, BackendError>;
}

pub trait TextEncoder: Send + Sync {
    fn attention(&self, sentence: &Sentence) -> Result<AttentionTensor, BackendError>;
}

pub trait ImageGenerator: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<FeatureImage, BackendError>;
}

pub trait PerceptualMetric: Send + Sync {
    /// Distance in `[0, 1]`, zero for perceptually identical images.
    fn distance(&self, a: &FeatureImage, b: &FeatureImage) -> Result<f64, BackendError>;
}

#[derive(Debug, Error)]
#[error("{0} port is not available")]
pub struct MissingCapability(pub Capability);

/// The capability bundle a participant holds.
#[derive(Clone, Default)]
pub struct Ports {
    pub captioner: Option<Arc<dyn Captioner>>,
    pub text_encoder: Option<Arc<dyn TextEncoder>>,
    pub generator: Option<Arc<dyn ImageGenerator>>,
    pub metric: Option<Arc<dyn PerceptualMetric>>,
}

impl fmt::Debug for Ports {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ports")
            .field("captioner", &self.captioner.is_some())
            .field("text_encoder", &self.text_encoder.is_some())
            .field("generator", &self.generator.is_some())
            .field("metric", &self.metric.is_some())
            .finish()
    }
}

impl Ports {
    /// Fills every slot with the same backend.
    pub fn full<B>(backend: B) -> Self
    where
        B: Captioner + TextEncoder + ImageGenerator + PerceptualMetric + 'static,
    {
        Self::full_shared(Arc::new(backend))
    }

    /// Like [`Ports::full`] for a backend that is already shared.
    pub fn full_shared<B>(backend: Arc<B>) -> Self
    where
        B: Captioner + TextEncoder + ImageGenerator + PerceptualMetric + 'static,
    {
        Self {
            captioner: Some(backend.clone()),
            text_encoder: Some(backend.clone()),
            generator: Some(backend.clone()),
            metric: Some(backend),
        }
    }

    pub fn mock(cfg: MockBackendConfig) -> Self {
        Self::full(MockBackend::new(cfg))
    }

    pub fn captioner(&self) -> Result<&dyn Captioner, MissingCapability> {
        self.captioner
            .as_deref()
            .ok_or(MissingCapability(Capability::Captioner))
    }

    pub fn text_encoder(&self) -> Result<&dyn TextEncoder, MissingCapability> {
        self.text_encoder
            .as_deref()
            .ok_or(MissingCapability(Capability::TextEncoder))
    }

    pub fn generator(&self) -> Result<&dyn ImageGenerator, MissingCapability> {
        self.generator
            .as_deref()
            .ok_or(MissingCapability(Capability::Generator))
    }

    pub fn metric(&self) -> Result<&dyn PerceptualMetric, MissingCapability> {
        self.metric
            .as_deref()
            .ok_or(MissingCapability(Capability::PerceptualMetric))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_indexing() {
        let t = AttentionTensor::new(1, 2, 2, vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0, 0.25, 0.75]);
        assert_eq!(t.get(0, 1, 1, 0), 0.25);
        assert_eq!(t.slice(0, 0), &[1.0, 0.0, 0.5, 0.5]);
        t.check_stochastic(1e-6).unwrap();
    }

    #[test]
    fn non_stochastic_row_is_located() {
        let t = AttentionTensor::new(1, 1, 2, vec![0.5, 0.5, 0.7, 0.7]);
        let err = t.check_stochastic(1e-4).unwrap_err();
        assert_eq!((err.layer, err.head, err.row), (0, 0, 1));
    }

    #[test]
    fn partial_ports_report_missing_capability() {
        let full = Ports::mock(MockBackendConfig::default());
        let encoder_only = Ports {
            text_encoder: full.text_encoder.clone(),
            ..Ports::default()
        };
        assert!(encoder_only.text_encoder().is_ok());
        let err = encoder_only.generator().err().unwrap();
        assert_eq!(err.0, Capability::Generator);
    }
}
