//! Interfaces for every external capability the engine delegates: text and
//! image generation, speech, transcription, knowledge lookup, weather and ETA.
//!
//! [`mock`] holds the deterministic implementations used by default and in
//! every test. The optional `live` feature adds HTTP adapters.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geo::{GeoPoint, Route};
use crate::poi::PoiCandidate;
use crate::simulator::SpeedProfile;

#[cfg(feature = "live")]
pub mod live;
pub mod mock;
pub mod templates;

pub use mock::{
    Gazetteer, MockEta, MockImage, MockKnowledge, MockSpeech, MockText, MockTranscribe,
    MockWeather,
};
pub use templates::TemplateSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider unavailable for request {request_id}: {reason}")]
    Unavailable { request_id: String, reason: String },
    #[error("no templates for role {0}")]
    UnknownRole(TextRole),
    #[error("no template for {role} / {kind} / {type_tag}")]
    TemplateMissing {
        role: TextRole,
        kind: String,
        type_tag: String,
    },
    #[error("template placeholder {{{0}}} has no value")]
    MissingVar(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
}

impl ProviderError {
    /// Transport-level failures are worth retrying; template problems are not.
    pub fn is_retriable(&self) -> bool {
        matches!(self, ProviderError::Unavailable { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextRole {
    Prompt,
    Orientation,
    Approach,
    Introduction,
    Narration,
    Transition,
    Reflection,
    Answer,
    Feature,
}

impl TextRole {
    pub const ALL: [TextRole; 9] = [
        TextRole::Prompt,
        TextRole::Orientation,
        TextRole::Approach,
        TextRole::Introduction,
        TextRole::Narration,
        TextRole::Transition,
        TextRole::Reflection,
        TextRole::Answer,
        TextRole::Feature,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TextRole::Prompt => "prompt",
            TextRole::Orientation => "orientation",
            TextRole::Approach => "approach",
            TextRole::Introduction => "introduction",
            TextRole::Narration => "narration",
            TextRole::Transition => "transition",
            TextRole::Reflection => "reflection",
            TextRole::Answer => "answer",
            TextRole::Feature => "feature",
        }
    }

    pub fn parse(s: &str) -> Option<TextRole> {
        TextRole::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for TextRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRequest {
    pub request_id: String,
    pub role: TextRole,
    /// Strategy slug for prompts, theme slug for story segments.
    pub kind: String,
    pub type_tag: String,
    pub vars: BTreeMap<String, String>,
    #[serde(default)]
    pub style_preamble: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextResponse {
    pub text: String,
    /// Set when no template matched the POI type and a generic one was used.
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub request_id: String,
    pub description: String,
    pub character: String,
    pub poi_name: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResponse {
    /// Content-addressed path or URL.
    pub image_ref: String,
    #[serde(skip)]
    pub bytes: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechResponse {
    pub audio_ref: String,
    pub duration_s: f64,
}

/// A knowledge snippet with the id of the source it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub source_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weather {
    Clear,
    Rain,
    Snow,
    Cloudy,
    #[default]
    Unknown,
}

pub trait TextProvider: Send + Sync {
    fn generate(&self, request: &TextRequest) -> Result<TextResponse, ProviderError>;
}

pub trait ImageProvider: Send + Sync {
    fn render(&self, request: &ImageRequest) -> Result<ImageResponse, ProviderError>;
}

pub trait SpeechProvider: Send + Sync {
    fn synthesize(&self, text: &str) -> Result<SpeechResponse, ProviderError>;
}

pub trait TranscribeProvider: Send + Sync {
    fn transcribe(&self, audio_ref: &str) -> Result<String, ProviderError>;
}

pub trait KnowledgeProvider: Send + Sync {
    fn facts(&self, poi: &PoiCandidate) -> Result<Vec<Fact>, ProviderError>;
}

pub trait WeatherProvider: Send + Sync {
    fn current(&self, at: &GeoPoint) -> Result<Weather, ProviderError>;
}

pub trait EtaProvider: Send + Sync {
    fn eta_seconds(&self, route: &Route, profile: &SpeedProfile) -> Result<f64, ProviderError>;
}

/// One handle per capability. Cheap to clone.
#[derive(Clone)]
pub struct Providers {
    pub text: Arc<dyn TextProvider>,
    pub image: Arc<dyn ImageProvider>,
    pub speech: Arc<dyn SpeechProvider>,
    pub transcribe: Arc<dyn TranscribeProvider>,
    pub knowledge: Arc<dyn KnowledgeProvider>,
    pub weather: Arc<dyn WeatherProvider>,
    pub eta: Arc<dyn EtaProvider>,
}

impl fmt::Debug for Providers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Providers { .. }")
    }
}

impl Providers {
    /// Mock providers backed by the built-in template set and gazetteer.
    pub fn mock() -> Self {
        Self::mock_with(TemplateSet::builtin(), Gazetteer::builtin(), Weather::Clear)
    }

    pub fn mock_with(templates: TemplateSet, gazetteer: Gazetteer, weather: Weather) -> Self {
        Self {
            text: Arc::new(MockText::new(templates)),
            image: Arc::new(MockImage),
            speech: Arc::new(MockSpeech::default()),
            transcribe: Arc::new(MockTranscribe::default()),
            knowledge: Arc::new(MockKnowledge::new(gazetteer)),
            weather: Arc::new(MockWeather(weather)),
            eta: Arc::new(MockEta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Text,
    Image,
    Speech,
    Transcribe,
    Knowledge,
    Weather,
    Eta,
}

/// Result of an asynchronous provider call re-entering a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderResult {
    pub request_id: String,
    pub payload: ProviderPayload,
    #[serde(default)]
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderPayload {
    Text { text: String },
    Image { image_ref: String },
    Speech { audio_ref: String, duration_s: f64 },
    Transcript { text: String },
    Facts { facts: Vec<Fact> },
    Weather { weather: Weather },
    Eta { seconds: f64 },
}

impl ProviderPayload {
    pub fn kind(&self) -> ProviderKind {
        match self {
            ProviderPayload::Text { .. } => ProviderKind::Text,
            ProviderPayload::Image { .. } => ProviderKind::Image,
            ProviderPayload::Speech { .. } => ProviderKind::Speech,
            ProviderPayload::Transcript { .. } => ProviderKind::Transcribe,
            ProviderPayload::Facts { .. } => ProviderKind::Knowledge,
            ProviderPayload::Weather { .. } => ProviderKind::Weather,
            ProviderPayload::Eta { .. } => ProviderKind::Eta,
        }
    }
}

/// Platform-independent 64-bit digest of the given parts.
pub fn stable_hash(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

/// Derives a per-call seed from a session seed and a call label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    stable_hash(&[&seed.to_string(), label])
}
