//! Line-delimited JSON messages exchanged with a provider process.
//!
//! Every message is one UTF-8 JSON object per line, tagged by `"type"`.
//! Tensors travel inline as base64 of their SALT encoding.
//!
//! ```text
//! -> {"type":"init","image":"img.ppm","classes":["cat","dog"],"layer":8,"head":10,"grid":24}
//! <- {"type":"ready","k":2,"grid":24}
//! -> {"type":"salience","active_b64":"<SALT uint8 P x P, 1 = active>"}
//! <- {"type":"tensors","attention_b64":"<SALT f32 K x P x P>","gradient_b64":"..."}
//! -> {"type":"shutdown"}                      (process exits with status 0)
//! <- {"type":"error","message":"..."}         (on any failure)
//! ```
//!
//! Similarity-oracle processes answer `oracle_init` with `oracle_ready` and
//! `score` (an RGB image as SALT uint8 `H x W x 3`) with `scores`, one raw
//! similarity per requested class name.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::salt::{SaltData, SaltTensor};
use super::{ProviderError, ProviderInit, SalienceResponse};
use crate::image::RgbImage;
use crate::salience::{ActivePatchSet, AttentionStack, GradientStack};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Init(ProviderInit),
    Salience { active_b64: String },
    OracleInit,
    Score { image_b64: String, classes: Vec<String> },
    Shutdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reply {
    Ready {
        k: usize,
        grid: usize,
        /// Per-class prompt token indices, reported for auditability.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spans: Option<Vec<Vec<usize>>>,
    },
    Tensors {
        attention_b64: String,
        gradient_b64: String,
    },
    OracleReady {
        /// Square input side the oracle expects, if any.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        input_size: Option<u32>,
    },
    Scores {
        scores: Vec<f64>,
    },
    Error {
        message: String,
    },
}

impl Request {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

impl Reply {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("reply serializes")
    }

    pub fn parse(line: &str) -> Result<Self, ProviderError> {
        serde_json::from_str(line.trim_end()).map_err(|e| ProviderError::Malformed {
            line: line.trim_end().chars().take(200).collect(),
            reason: e.to_string(),
        })
    }
}

pub fn encode_b64(tensor: &SaltTensor) -> String {
    STANDARD.encode(tensor.encode())
}

pub fn decode_b64(text: &str) -> Result<SaltTensor, ProviderError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| ProviderError::Protocol(format!("invalid base64: {e}")))?;
    Ok(SaltTensor::decode(&bytes)?)
}

pub fn encode_active(active: &ActivePatchSet) -> String {
    let p = active.grid();
    encode_b64(&SaltTensor::new(vec![p, p], SaltData::U8(active.to_bytes())).expect("grid shape"))
}

pub fn decode_active(text: &str) -> Result<ActivePatchSet, ProviderError> {
    let tensor = decode_b64(text)?;
    match (tensor.dims(), tensor.data()) {
        ([p, q], SaltData::U8(bytes)) if p == q => ActivePatchSet::from_bytes(*p as usize, bytes)
            .ok_or_else(|| ProviderError::Protocol("active mask entries must be 0 or 1".into())),
        (dims, _) => Err(ProviderError::Protocol(format!(
            "active mask must be uint8 P x P, got {:?} {dims:?}",
            tensor.dtype()
        ))),
    }
}

pub fn encode_response(response: &SalienceResponse) -> Reply {
    Reply::Tensors {
        attention_b64: encode_b64(&SaltTensor::from_stack(&response.attention)),
        gradient_b64: encode_b64(&SaltTensor::from_stack(&response.gradient)),
    }
}

pub fn decode_response(attention_b64: &str, gradient_b64: &str) -> Result<SalienceResponse, ProviderError> {
    let attention = decode_b64(attention_b64)?.into_stack()?;
    let gradient = decode_b64(gradient_b64)?.into_stack()?;
    Ok(SalienceResponse {
        attention: AttentionStack::new(attention)
            .map_err(|e| ProviderError::InvalidTensor(format!("attention: {e}")))?,
        gradient: GradientStack::new(gradient).map_err(|e| ProviderError::InvalidTensor(format!("gradient: {e}")))?,
    })
}

pub fn encode_image(image: &RgbImage) -> String {
    let dims = vec![image.height(), image.width(), 3];
    encode_b64(&SaltTensor::new(dims, SaltData::U8(image.as_bytes().to_vec())).expect("image shape"))
}

pub fn decode_image(text: &str) -> Result<RgbImage, ProviderError> {
    let tensor = decode_b64(text)?;
    match (tensor.dims(), tensor.data()) {
        ([h, w, 3], SaltData::U8(bytes)) => RgbImage::from_raw(*w as usize, *h as usize, bytes.clone())
            .ok_or_else(|| ProviderError::Protocol("image payload size mismatch".into())),
        (dims, _) => Err(ProviderError::Protocol(format!(
            "image must be uint8 H x W x 3, got {dims:?}"
        ))),
    }
}
