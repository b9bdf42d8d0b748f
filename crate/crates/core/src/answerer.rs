//! Frozen question answerers.
//!
//! [`OracleAnswerer`] simulates a video QA model from per-instance evidence
//! metadata; [`RemoteAnswerer`] speaks the JSON wire protocol to an external
//! server (`POST /v1/answer`).

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::rng::derive_seed;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnswerError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("server returned HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no oracle metadata for instance `{0}`")]
    UnknownInstance(String),
}

impl AnswerError {
    /// Transport-level failures that a retry may fix.
    pub fn is_retriable(&self) -> bool {
        match self {
            Self::Transport(_) | Self::Timeout => true,
            Self::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameEncoding {
    #[serde(rename = "image/jpeg")]
    ImageJpeg,
    #[serde(rename = "features/f32")]
    FeaturesF32,
}

/// One frame on the wire: base64 image bytes or a float feature row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FramePayload {
    Image(String),
    Features(Vec<f32>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub instance_id: String,
    pub question: String,
    pub frame_indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<FramePayload>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_encoding: Option<FrameEncoding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
}

impl AnswerRequest {
    pub fn new(
        instance_id: impl Into<String>,
        question: impl Into<String>,
        frame_indices: Vec<usize>,
    ) -> Self {
        Self {
            instance_id: instance_id.into(),
            question: question.into(),
            frame_indices,
            frames: None,
            frame_encoding: None,
            options: None,
        }
    }

    pub fn validate(&self) -> Result<(), AnswerError> {
        if self.frame_indices.is_empty() {
            return Err(AnswerError::InvalidRequest("no frames selected".into()));
        }
        if self.frame_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AnswerError::InvalidRequest(
                "frame indices must be strictly increasing".into(),
            ));
        }
        if let Some(frames) = &self.frames {
            if frames.len() != self.frame_indices.len() {
                return Err(AnswerError::InvalidRequest(format!(
                    "{} frame payloads for {} indices",
                    frames.len(),
                    self.frame_indices.len()
                )));
            }
            if self.frame_encoding.is_none() {
                return Err(AnswerError::InvalidRequest(
                    "frames given without frame_encoding".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub answer: String,
    pub model: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

/// A frozen answerer. Implementations must be safe to call concurrently.
pub trait Answerer: Send + Sync {
    fn answer(&self, request: &AnswerRequest) -> Result<String, AnswerError>;

    fn name(&self) -> &str;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub evidence: BTreeSet<usize>,
    pub distractor: BTreeSet<usize>,
    pub correct_answer: String,
    pub wrong_answer: String,
    pub tau_e: f64,
    pub tau_d: f64,
}

impl OracleSpec {
    pub fn validate(&self) -> Result<(), String> {
        if let Some(i) = self.evidence.intersection(&self.distractor).next() {
            return Err(format!("frame {i} is both evidence and distractor"));
        }
        if self.correct_answer == self.wrong_answer {
            return Err("correct and wrong answers must differ".into());
        }
        if !(self.tau_e > 0.0 && self.tau_e <= 1.0) {
            return Err(format!("tau_e must lie in (0, 1], got {}", self.tau_e));
        }
        if !(0.0..=1.0).contains(&self.tau_d) {
            return Err(format!("tau_d must lie in [0, 1], got {}", self.tau_d));
        }
        Ok(())
    }

    /// Fraction of evidence frames selected; 1 when there is no evidence.
    pub fn coverage(&self, selected: &[usize]) -> f64 {
        if self.evidence.is_empty() {
            return 1.0;
        }
        let hit = selected
            .iter()
            .filter(|i| self.evidence.contains(i))
            .count();
        hit as f64 / self.evidence.len() as f64
    }

    /// Fraction of the selection that is distractor; 0 for an empty selection.
    pub fn distraction(&self, selected: &[usize]) -> f64 {
        if selected.is_empty() {
            return 0.0;
        }
        let hit = selected
            .iter()
            .filter(|i| self.distractor.contains(i))
            .count();
        hit as f64 / selected.len() as f64
    }

    pub fn is_correct(&self, selected: &[usize]) -> bool {
        self.coverage(selected) >= self.tau_e && self.distraction(selected) <= self.tau_d
    }
}

/// Correct answer iff evidence coverage reaches `tau_e` and the distractor
/// share stays within `tau_d`.
pub fn oracle_answer(request: &AnswerRequest, spec: &OracleSpec) -> String {
    if spec.is_correct(&request.frame_indices) {
        spec.correct_answer.clone()
    } else {
        spec.wrong_answer.clone()
    }
}

/// Simulated answerer over a registry of per-instance oracle specs.
///
/// With `noise > 0` each (instance, selection) pair has its answer swapped
/// with that probability, decided by a hash so repeated calls agree.
#[derive(Clone, Debug, Default)]
pub struct OracleAnswerer {
    specs: HashMap<String, OracleSpec>,
    noise: f64,
    seed: u64,
}

impl OracleAnswerer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_noise(mut self, noise: f64, seed: u64) -> Self {
        self.noise = noise.clamp(0.0, 1.0);
        self.seed = seed;
        self
    }

    pub fn register(&mut self, instance_id: impl Into<String>, spec: OracleSpec) {
        self.specs.insert(instance_id.into(), spec);
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    fn flipped(&self, request: &AnswerRequest) -> bool {
        if self.noise <= 0.0 {
            return false;
        }
        let mask_hash = request
            .frame_indices
            .iter()
            .fold(0u64, |h, &i| derive_seed(h, "oracle-mask", i as u64));
        let h = derive_seed(self.seed ^ mask_hash, &request.instance_id, 0);
        let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
        unit < self.noise
    }
}

impl Answerer for OracleAnswerer {
    fn answer(&self, request: &AnswerRequest) -> Result<String, AnswerError> {
        request.validate()?;
        let spec = self
            .specs
            .get(&request.instance_id)
            .ok_or_else(|| AnswerError::UnknownInstance(request.instance_id.clone()))?;
        let correct = spec.is_correct(&request.frame_indices) != self.flipped(request);
        Ok(if correct {
            spec.correct_answer.clone()
        } else {
            spec.wrong_answer.clone()
        })
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteConfig {
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_ms: 200,
        }
    }
}

/// Client for an answer server. Retries transport failures and 5xx
/// responses with exponential backoff.
pub struct RemoteAnswerer {
    url: String,
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteAnswerer {
    /// `endpoint` is a base URL such as `http://127.0.0.1:8080`.
    pub fn new(endpoint: &str, config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: format!("{}/v1/answer", endpoint.trim_end_matches('/')),
            config,
            agent,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, request: &AnswerRequest) -> Result<String, AnswerError> {
        let mut response = self
            .agent
            .post(&self.url)
            .send_json(request)
            .map_err(map_ureq)?;
        let status = response.status().as_u16();
        let mut body = String::new();
        response
            .body_mut()
            .as_reader()
            .read_to_string(&mut body)
            .map_err(|e| AnswerError::Transport(e.to_string()))?;
        if status != 200 {
            let message = serde_json::from_str::<ErrorResponse>(&body)
                .map(|e| e.error)
                .unwrap_or(body);
            return Err(AnswerError::Http { status, message });
        }
        let parsed: AnswerResponse =
            serde_json::from_str(&body).map_err(|e| AnswerError::Malformed(e.to_string()))?;
        Ok(parsed.answer)
    }
}

fn map_ureq(e: ureq::Error) -> AnswerError {
    match e {
        ureq::Error::Timeout(_) => AnswerError::Timeout,
        ureq::Error::Json(e) => AnswerError::InvalidRequest(e.to_string()),
        other => AnswerError::Transport(other.to_string()),
    }
}

impl Answerer for RemoteAnswerer {
    fn answer(&self, request: &AnswerRequest) -> Result<String, AnswerError> {
        request.validate()?;
        let mut delay = self.config.backoff_ms;
        let mut tries = 0;
        loop {
            match self.attempt(request) {
                Err(e) if e.is_retriable() && tries < self.config.max_retries => {
                    log::debug!("retrying {} after {e}", self.url);
                    thread::sleep(Duration::from_millis(delay));
                    delay = delay.saturating_mul(2);
                    tries += 1;
                }
                other => return other,
            }
        }
    }

    fn name(&self) -> &str {
        "remote"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(evidence: &[usize], distractor: &[usize], tau_d: f64) -> OracleSpec {
        OracleSpec {
            evidence: evidence.iter().copied().collect(),
            distractor: distractor.iter().copied().collect(),
            correct_answer: "a dog".into(),
            wrong_answer: "a cat".into(),
            tau_e: 1.0,
            tau_d,
        }
    }

    fn req(indices: &[usize]) -> AnswerRequest {
        AnswerRequest::new("v0", "what animal?", indices.to_vec())
    }

    #[test]
    fn oracle_examples() {
        let s = spec(&[3, 17], &[], 0.5);
        assert_eq!(oracle_answer(&req(&[3, 17, 20]), &s), "a dog");
        assert_eq!(oracle_answer(&req(&[3]), &s), "a cat");

        let distractors: Vec<usize> = (20..28).collect();
        let s = spec(&[3, 17], &distractors, 0.2);
        let all: Vec<usize> = (0..32).collect();
        assert_eq!(s.distraction(&all), 0.25);
        assert_eq!(oracle_answer(&req(&all), &s), "a cat");
    }

    #[test]
    fn spec_validation() {
        assert!(spec(&[1], &[2], 0.1).validate().is_ok());
        assert!(spec(&[1], &[1], 0.1).validate().is_err());
        let mut s = spec(&[1], &[2], 0.1);
        s.wrong_answer = s.correct_answer.clone();
        assert!(s.validate().is_err());
        s = spec(&[1], &[2], 1.5);
        assert!(s.validate().is_err());
    }

    #[test]
    fn request_validation() {
        assert!(req(&[1, 2]).validate().is_ok());
        assert!(req(&[]).validate().is_err());
        assert!(req(&[2, 2]).validate().is_err());
        assert!(req(&[3, 1]).validate().is_err());
    }

    #[test]
    fn registry_answers_and_unknown_ids() {
        let mut o = OracleAnswerer::new();
        o.register("v0", spec(&[1], &[], 0.0));
        assert_eq!(o.answer(&req(&[1])).unwrap(), "a dog");
        assert_eq!(o.answer(&req(&[0])).unwrap(), "a cat");
        let other = AnswerRequest::new("v9", "q", vec![0]);
        assert_eq!(
            o.answer(&other),
            Err(AnswerError::UnknownInstance("v9".into()))
        );
    }

    #[test]
    fn noise_is_deterministic_and_roughly_calibrated() {
        let mut o = OracleAnswerer::new().with_noise(0.3, 7);
        o.register("v0", spec(&[0], &[], 1.0));
        let mut flips = 0;
        for i in 1..2001 {
            let r = req(&[0, i]);
            let a = o.answer(&r).unwrap();
            assert_eq!(a, o.answer(&r).unwrap());
            flips += usize::from(a == "a cat");
        }
        let rate = flips as f64 / 2000.0;
        assert!((rate - 0.3).abs() < 0.05, "{rate}");
    }

    #[test]
    fn wire_format_field_names() {
        let mut r = req(&[1, 5]);
        r.frames = Some(vec![
            FramePayload::Features(vec![0.5, 1.0]),
            FramePayload::Image("AAEC".into()),
        ]);
        r.frame_encoding = Some(FrameEncoding::FeaturesF32);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["instance_id"], "v0");
        assert_eq!(v["frame_indices"], serde_json::json!([1, 5]));
        assert_eq!(v["frame_encoding"], "features/f32");
        assert_eq!(v["frames"][0], serde_json::json!([0.5, 1.0]));
        assert_eq!(v["frames"][1], "AAEC");
        assert!(v.get("options").is_none());
        let back: AnswerRequest = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn retriable_classification() {
        assert!(AnswerError::Timeout.is_retriable());
        assert!(AnswerError::Transport("reset".into()).is_retriable());
        assert!(AnswerError::Http {
            status: 503,
            message: String::new()
        }
        .is_retriable());
        assert!(!AnswerError::Http {
            status: 413,
            message: String::new()
        }
        .is_retriable());
        assert!(!AnswerError::Malformed("x".into()).is_retriable());
    }
}
