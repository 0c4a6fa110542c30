//! HTTP adapters. Every capability is a JSON POST to `{base_url}/{capability}`
//! on a gateway that fronts the actual model and data services.

use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    EtaProvider, Fact, ImageProvider, ImageRequest, ImageResponse, KnowledgeProvider,
    ProviderError, Providers, SpeechProvider, SpeechResponse, TextProvider, TextRequest,
    TextResponse, TranscribeProvider, Weather, WeatherProvider,
};
use crate::geo::{GeoPoint, Route};
use crate::poi::PoiCandidate;
use crate::simulator::SpeedProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    pub base_url: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    20.0
}

impl LiveConfig {
    /// Reads `SCENIC_LIVE_URL` and, optionally, `SCENIC_LIVE_KEY`.
    pub fn from_env() -> Option<Self> {
        let base_url = std::env::var("SCENIC_LIVE_URL").ok()?;
        Some(Self {
            base_url,
            api_key: std::env::var("SCENIC_LIVE_KEY").ok(),
            timeout_s: default_timeout(),
        })
    }
}

pub struct HttpGateway {
    agent: ureq::Agent,
    config: LiveConfig,
}

impl HttpGateway {
    pub fn new(config: LiveConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .build()
            .into();
        Self { agent, config }
    }

    fn call<B: Serialize, T: DeserializeOwned>(&self, path: &str, id: &str, body: &B) -> Result<T, ProviderError> {
        let url = format!("{}/{path}", self.config.base_url.trim_end_matches('/'));
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| ProviderError::Unavailable {
            request_id: id.to_string(),
            reason: e.to_string(),
        })?;
        resp.body_mut()
            .read_json::<T>()
            .map_err(|e| ProviderError::Malformed(e.to_string()))
    }
}

impl TextProvider for HttpGateway {
    fn generate(&self, request: &TextRequest) -> Result<TextResponse, ProviderError> {
        self.call("text", &request.request_id, request)
    }
}

impl ImageProvider for HttpGateway {
    fn render(&self, request: &ImageRequest) -> Result<ImageResponse, ProviderError> {
        self.call("image", &request.request_id, request)
    }
}

impl SpeechProvider for HttpGateway {
    fn synthesize(&self, text: &str) -> Result<SpeechResponse, ProviderError> {
        self.call("speech", "speech", &json!({ "text": text }))
    }
}

#[derive(Deserialize)]
struct Transcript {
    text: String,
}

impl TranscribeProvider for HttpGateway {
    fn transcribe(&self, audio_ref: &str) -> Result<String, ProviderError> {
        let t: Transcript = self.call("transcribe", audio_ref, &json!({ "audio_ref": audio_ref }))?;
        Ok(t.text)
    }
}

impl KnowledgeProvider for HttpGateway {
    fn facts(&self, poi: &PoiCandidate) -> Result<Vec<Fact>, ProviderError> {
        self.call("knowledge", &poi.id, poi)
    }
}

#[derive(Deserialize)]
struct WeatherReply {
    weather: Weather,
}

impl WeatherProvider for HttpGateway {
    fn current(&self, at: &GeoPoint) -> Result<Weather, ProviderError> {
        let w: WeatherReply = self.call("weather", "weather", at)?;
        Ok(w.weather)
    }
}

#[derive(Deserialize)]
struct EtaReply {
    eta_seconds: f64,
}

impl EtaProvider for HttpGateway {
    fn eta_seconds(&self, route: &Route, profile: &SpeedProfile) -> Result<f64, ProviderError> {
        let body = json!({ "points": route.points(), "profile": profile });
        let r: EtaReply = self.call("eta", "eta", &body)?;
        if r.eta_seconds.is_finite() && r.eta_seconds >= 0.0 {
            Ok(r.eta_seconds)
        } else {
            Err(ProviderError::Malformed(format!("eta {}", r.eta_seconds)))
        }
    }
}

impl Providers {
    pub fn live(config: LiveConfig) -> Self {
        let gw = Arc::new(HttpGateway::new(config));
        Self {
            text: gw.clone(),
            image: gw.clone(),
            speech: gw.clone(),
            transcribe: gw.clone(),
            knowledge: gw.clone(),
            weather: gw.clone(),
            eta: gw,
        }
    }
}
