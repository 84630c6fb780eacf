//! Request and response bodies of wire protocol v1.

use serde::{Deserialize, Serialize};

pub const CAPTION_PATH: &str = "/v1/caption";
pub const ATTENTION_PATH: &str = "/v1/attention";
pub const GENERATE_PATH: &str = "/v1/generate";
pub const DISTANCE_PATH: &str = "/v1/distance";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub image_b64: String,
    pub max_words: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionResponse {
    pub layers: usize,
    pub heads: usize,
    pub tokens: usize,
    /// `layers · heads · tokens · tokens` values, row-major.
    pub weights: Vec<f32>,
    /// Word index per token, `-1` for special tokens.
    pub token_to_word: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image_b64: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRequest {
    pub image_a_b64: String,
    pub image_b_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceResponse {
    pub lpips: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
