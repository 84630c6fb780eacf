//! Ports implemented against a remote inference service over wire protocol
//! v1 (JSON over HTTP, images as base64 PNG).

pub mod conformance;
pub mod fold;
pub mod stub;
pub mod wire;

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    AttentionTensor, BackendError, Captioner, FeatureImage, ImageGenerator, PerceptualMetric,
    TextEncoder,
};
use crate::text::{tokenize, Sentence, TextError};
use wire::*;

pub use fold::fold_attention;

/// How far outside `[0, 1]` a reported distance may fall and still be clamped.
pub const METRIC_CLAMP_TOLERANCE: f64 = 1e-3;

const MAX_RESPONSE_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {code}: {message}")]
    HttpStatus { code: u16, message: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("attention row (layer {layer}, head {head}, row {row}) sums to {sum}")]
    InvalidTensor {
        layer: usize,
        head: usize,
        row: usize,
        sum: f64,
    },
    #[error("perceptual distance {0} is outside [0, 1]")]
    InvalidMetric(f64),
    #[error("image payload is empty")]
    EmptyImage,
    #[error("caption: {0}")]
    Caption(#[from] TextError),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid gateway config: {0}")]
    Config(String),
}

impl GatewayError {
    fn retryable(&self) -> bool {
        match self {
            GatewayError::Timeout | GatewayError::Transport(_) => true,
            GatewayError::HttpStatus { code, .. } => *code >= 500 || *code == 429,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewayConfig {
    pub base_url: String,
    pub timeout_secs: f64,
    pub retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff_secs: f64,
    /// Forwarded to every generation request.
    pub seed: u64,
    pub max_in_flight: usize,
    pub max_words: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            timeout_secs: 120.0,
            retries: 2,
            backoff_secs: 1.0,
            seed: 0,
            max_in_flight: 4,
            max_words: 32,
        }
    }
}

impl GatewayConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.base_url.is_empty() {
            return Err(GatewayError::Config("base_url is empty".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(GatewayError::Config("timeout must be positive".into()));
        }
        if !(self.backoff_secs >= 0.0 && self.backoff_secs.is_finite()) {
            return Err(GatewayError::Config("backoff must be non-negative".into()));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config(
                "max_in_flight must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub fn encode_image(bytes: &[u8]) -> String {
    BASE64.encode(bytes)
}

pub fn decode_image(b64: &str) -> Result<Vec<u8>, GatewayError> {
    BASE64
        .decode(b64)
        .map_err(|e| GatewayError::MalformedResponse(format!("image_b64: {e}")))
}

/// Blocking client for wire protocol v1.
#[derive(Debug)]
pub struct GatewayClient {
    cfg: GatewayConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl GatewayClient {
    pub fn new(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        let in_flight = InFlight::new(cfg.max_in_flight);
        Ok(Self {
            cfg,
            agent,
            in_flight,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn attempt<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        url: &str,
        body: &Req,
    ) -> Result<Resp, GatewayError> {
        let _permit = self.in_flight.acquire();
        let mut response = self
            .agent
            .post(url)
            .send_json(body)
            .map_err(transport_error)?;
        let status = response.status().as_u16();
        let bytes = response
            .body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_to_vec()
            .map_err(transport_error)?;
        if !(200..300).contains(&status) {
            let message = serde_json::from_slice::<ErrorBody>(&bytes)
                .map(|b| b.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
            return Err(GatewayError::HttpStatus {
                code: status,
                message,
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| GatewayError::MalformedResponse(e.to_string()))
    }

    /// POSTs `body`, retrying timeouts, transport failures and 5xx/429
    /// responses up to `retries` times with doubling backoff.
    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, GatewayError> {
        let url = self.url(path);
        let mut delay = Duration::from_secs_f64(self.cfg.backoff_secs);
        let mut attempt = 0;
        loop {
            match self.attempt(&url, body) {
                Err(e) if e.retryable() && attempt < self.cfg.retries => {
                    attempt += 1;
                    thread::sleep(delay);
                    delay *= 2;
                }
                other => return other,
            }
        }
    }

    pub fn remote_caption(&self, image: &[u8]) -> Result<Sentence, GatewayError> {
        if image.is_empty() {
            return Err(GatewayError::EmptyImage);
        }
        let req = CaptionRequest {
            image_b64: encode_image(image),
            max_words: self.cfg.max_words,
        };
        let resp: CaptionResponse = self.post(CAPTION_PATH, &req)?;
        Ok(tokenize(&resp.caption)?)
    }

    /// Word-level attention for `sentence`, folded from the service's
    /// subword attention.
    pub fn remote_attention(&self, sentence: &Sentence) -> Result<AttentionTensor, GatewayError> {
        let req = AttentionRequest {
            text: sentence.joined(),
        };
        let resp: AttentionResponse = self.post(ATTENTION_PATH, &req)?;
        let weights: Vec<f64> = resp.weights.iter().map(|&w| f64::from(w)).collect();
        fold_attention(
            resp.layers,
            resp.heads,
            resp.tokens,
            &weights,
            &resp.token_to_word,
            sentence.len(),
        )
    }

    /// Raw token-level attention, unfolded.
    pub fn raw_attention(&self, text: &str) -> Result<AttentionResponse, GatewayError> {
        self.post(
            ATTENTION_PATH,
            &AttentionRequest {
                text: text.to_owned(),
            },
        )
    }

    pub fn remote_generate(&self, prompt: &str, seed: u64) -> Result<FeatureImage, GatewayError> {
        let req = GenerateRequest {
            prompt: prompt.to_owned(),
            seed,
        };
        let resp: GenerateResponse = self.post(GENERATE_PATH, &req)?;
        let bytes = decode_image(&resp.image_b64)?;
        if bytes.is_empty() {
            return Err(GatewayError::MalformedResponse(
                "generated image is empty".into(),
            ));
        }
        Ok(FeatureImage::Encoded {
            bytes,
            width: Some(resp.width),
            height: Some(resp.height),
        })
    }

    /// Perceptual distance; values within `METRIC_CLAMP_TOLERANCE` of
    /// `[0, 1]` are clamped.
    pub fn remote_distance(&self, a: &[u8], b: &[u8]) -> Result<f64, GatewayError> {
        if a.is_empty() || b.is_empty() {
            return Err(GatewayError::EmptyImage);
        }
        let req = DistanceRequest {
            image_a_b64: encode_image(a),
            image_b_b64: encode_image(b),
        };
        let resp: DistanceResponse = self.post(DISTANCE_PATH, &req)?;
        check_metric(resp.lpips)
    }
}

pub fn check_metric(value: f64) -> Result<f64, GatewayError> {
    let lo = -METRIC_CLAMP_TOLERANCE;
    let hi = 1.0 + METRIC_CLAMP_TOLERANCE;
    if value.is_finite() && (lo..=hi).contains(&value) {
        Ok(value.clamp(0.0, 1.0))
    } else {
        Err(GatewayError::InvalidMetric(value))
    }
}

fn transport_error(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Timeout(_) => GatewayError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => GatewayError::Timeout,
        other => GatewayError::Transport(other.to_string()),
    }
}

fn encoded_bytes(image: &FeatureImage) -> Result<&[u8], BackendError> {
    match image {
        FeatureImage::Encoded { bytes, .. } => Ok(bytes),
        FeatureImage::Features(_) => Err(BackendError::ModeMismatch),
    }
}

impl Captioner for GatewayClient {
    fn caption(&self, image: &[u8]) -> Result<Sentence, BackendError> {
        Ok(self.remote_caption(image)?)
    }
}

impl TextEncoder for GatewayClient {
    fn attention(&self, sentence: &Sentence) -> Result<AttentionTensor, BackendError> {
        Ok(self.remote_attention(sentence)?)
    }
}

impl ImageGenerator for GatewayClient {
    fn generate(&self, prompt: &str) -> Result<FeatureImage, BackendError> {
        Ok(self.remote_generate(prompt, self.cfg.seed)?)
    }
}

impl PerceptualMetric for GatewayClient {
    fn distance(&self, a: &FeatureImage, b: &FeatureImage) -> Result<f64, BackendError> {
        Ok(self.remote_distance(encoded_bytes(a)?, encoded_bytes(b)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_clamping() {
        assert_eq!(check_metric(0.3).unwrap(), 0.3);
        assert_eq!(check_metric(1.0005).unwrap(), 1.0);
        assert_eq!(check_metric(-0.0009).unwrap(), 0.0);
        assert!(matches!(
            check_metric(1.2),
            Err(GatewayError::InvalidMetric(_))
        ));
        assert!(matches!(
            check_metric(-0.01),
            Err(GatewayError::InvalidMetric(_))
        ));
        assert!(check_metric(f64::NAN).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GatewayConfig::default().validate().is_err());
        GatewayConfig::new("http://localhost:1").validate().unwrap();
        let bad = GatewayConfig {
            timeout_secs: 0.0,
            ..GatewayConfig::new("http://x")
        };
        assert!(bad.validate().is_err());
        let parsed: Result<GatewayConfig, _> =
            serde_json::from_str(r#"{"base_url": "x", "retry": 3}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn empty_image_rejected_before_request() {
        // Unroutable address: any request attempt would fail differently.
        let client = GatewayClient::new(GatewayConfig::new("http://127.0.0.1:9")).unwrap();
        assert!(matches!(
            client.remote_caption(&[]),
            Err(GatewayError::EmptyImage)
        ));
    }

    #[test]
    fn in_flight_bound_blocks() {
        let gate = InFlight::new(1);
        let first = gate.acquire();
        assert_eq!(*gate.free.lock().unwrap(), 0);
        drop(first);
        assert_eq!(*gate.free.lock().unwrap(), 1);
    }
}
