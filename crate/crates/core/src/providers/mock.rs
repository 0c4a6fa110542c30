//! Deterministic provider implementations. Outputs depend only on fixtures
//! and request fields.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::templates::{render, TemplateSet};
use super::{
    stable_hash, EtaProvider, Fact, ImageProvider, ImageRequest, ImageResponse,
    KnowledgeProvider, ProviderError, SpeechProvider, SpeechResponse, TextProvider, TextRequest,
    TextResponse, TextRole, TranscribeProvider, Weather, WeatherProvider,
};
use crate::geo::{GeoPoint, Route};
use crate::poi::PoiCandidate;
use crate::simulator::SpeedProfile;

#[derive(Debug, Clone)]
pub struct MockText {
    templates: TemplateSet,
}

impl MockText {
    pub fn new(templates: TemplateSet) -> Self {
        Self { templates }
    }

    fn pick<'a>(variants: &'a [String], key: &str, seed: u64) -> &'a str {
        let base = stable_hash(&[key]);
        let idx = base.wrapping_add(seed) % variants.len() as u64;
        &variants[idx as usize]
    }
}

impl TextProvider for MockText {
    fn generate(&self, req: &TextRequest) -> Result<TextResponse, ProviderError> {
        let resolved = self.templates.resolve(req.role, &req.kind, &req.type_tag)?;
        let template = Self::pick(resolved.variants, &resolved.key, req.seed);
        let mut vars = req.vars.clone();
        if template.contains("{feature}") && !vars.contains_key("feature") {
            let feature = self
                .templates
                .resolve(TextRole::Feature, "*", &req.type_tag)
                .ok()
                .filter(|r| !r.generic)
                .map(|r| Self::pick(r.variants, &r.key, req.seed).to_string())
                .unwrap_or_else(|| "something interesting".to_string());
            vars.insert("feature".into(), feature);
        }
        Ok(TextResponse {
            text: render(template, &vars)?,
            fallback: resolved.generic,
        })
    }
}

fn hex16(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..8])
}

/// Procedural placeholder cards naming the character and the place.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockImage;

impl MockImage {
    pub fn svg(req: &ImageRequest) -> String {
        let hue = stable_hash(&[&req.seed.to_string(), &req.poi_name]) % 360;
        format!(
            concat!(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"320\" height=\"200\">",
                "<rect width=\"320\" height=\"200\" fill=\"hsl({hue},60%,80%)\"/>",
                "<text x=\"16\" y=\"80\" font-size=\"20\">{c}</text>",
                "<text x=\"16\" y=\"120\" font-size=\"16\">{p}</text>",
                "</svg>"
            ),
            hue = hue,
            c = xml_escape(&req.character),
            p = xml_escape(&req.poi_name),
        )
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl ImageProvider for MockImage {
    fn render(&self, req: &ImageRequest) -> Result<ImageResponse, ProviderError> {
        let svg = Self::svg(req);
        Ok(ImageResponse {
            image_ref: format!("img/{}.svg", hex16(&[&svg, &req.description])),
            bytes: Some(svg.into_bytes()),
        })
    }
}

/// Speech whose duration grows with word count.
#[derive(Debug, Clone, Copy)]
pub struct MockSpeech {
    pub base_s: f64,
    pub per_word_s: f64,
}

impl Default for MockSpeech {
    fn default() -> Self {
        Self {
            base_s: 1.0,
            per_word_s: 0.4,
        }
    }
}

impl SpeechProvider for MockSpeech {
    fn synthesize(&self, text: &str) -> Result<SpeechResponse, ProviderError> {
        let words = text.split_whitespace().count() as f64;
        Ok(SpeechResponse {
            audio_ref: format!("audio/{}.wav", hex16(&[text])),
            duration_s: self.base_s + self.per_word_s * words,
        })
    }
}

/// Audio refs of the form `transcript:<text>` transcribe to their text.
#[derive(Debug, Clone, Default)]
pub struct MockTranscribe {
    pub known: BTreeMap<String, String>,
}

impl TranscribeProvider for MockTranscribe {
    fn transcribe(&self, audio_ref: &str) -> Result<String, ProviderError> {
        if let Some(t) = audio_ref.strip_prefix("transcript:") {
            return Ok(t.to_string());
        }
        self.known
            .get(audio_ref)
            .cloned()
            .ok_or_else(|| ProviderError::Unavailable {
                request_id: audio_ref.to_string(),
                reason: "no transcript for audio".into(),
            })
    }
}

/// Local fact store keyed by POI id or `type:<tag>`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gazetteer {
    entries: BTreeMap<String, Vec<Fact>>,
}

const BUILTIN_GAZETTEER: &str = include_str!("../../assets/gazetteer.json");

impl Gazetteer {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_GAZETTEER).expect("built-in gazetteer parses")
    }

    pub fn from_json(src: &str) -> Result<Self, serde_json::Error> {
        Ok(Self {
            entries: serde_json::from_str(src)?,
        })
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::from_json(&src).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Adds entries from `other`, replacing keys present in both.
    pub fn merge(&mut self, other: Gazetteer) {
        self.entries.extend(other.entries);
    }

    pub fn lookup(&self, poi: &PoiCandidate) -> Vec<Fact> {
        self.entries
            .get(&poi.id)
            .or_else(|| {
                self.entries
                    .get(&format!("type:{}", poi.type_tag.to_lowercase()))
            })
            .cloned()
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockKnowledge {
    gazetteer: Gazetteer,
}

impl MockKnowledge {
    pub fn new(gazetteer: Gazetteer) -> Self {
        Self { gazetteer }
    }
}

impl KnowledgeProvider for MockKnowledge {
    fn facts(&self, poi: &PoiCandidate) -> Result<Vec<Fact>, ProviderError> {
        Ok(self.gazetteer.lookup(poi))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MockWeather(pub Weather);

impl WeatherProvider for MockWeather {
    fn current(&self, _at: &GeoPoint) -> Result<Weather, ProviderError> {
        Ok(self.0)
    }
}

/// Length over cruise speed plus every stop duration.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockEta;

impl EtaProvider for MockEta {
    fn eta_seconds(&self, route: &Route, profile: &SpeedProfile) -> Result<f64, ProviderError> {
        if !(profile.cruise_speed > 0.0) {
            return Err(ProviderError::Malformed(format!(
                "cruise speed {} must be positive",
                profile.cruise_speed
            )));
        }
        let length = route.length();
        if length == 0.0 {
            return Ok(0.0);
        }
        let stops: f64 = profile.stops.iter().map(|s| s.duration_s).sum();
        Ok(length / profile.cruise_speed + stops)
    }
}
