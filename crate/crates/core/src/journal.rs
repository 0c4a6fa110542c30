//! Append-only JSONL journey logs: one header line, then one entry per
//! accepted event and per effect.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geo::Route;
use crate::orchestrator::{Effect, OrchestratorConfig, TimedEvent};
use crate::poi::SelectedPoi;
use crate::providers::Weather;
use crate::story::{Character, StoryTheme};
use crate::strategy::DevelopmentalGoal;

pub const LOG_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GalleryItem {
    pub poi_id: String,
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReflectionSummary {
    pub locations_interacted: u32,
    pub prompts_answered: BTreeMap<DevelopmentalGoal, u32>,
    pub prompts_unanswered: u32,
    pub gallery: Vec<GalleryItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Simulated,
    ExternalPositions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JourneyHeader {
    pub version: String,
    pub session_id: String,
    pub created_at: String,
    pub mode: SessionMode,
    pub route: Route,
    pub plan: Vec<SelectedPoi>,
    pub theme: StoryTheme,
    pub character: Character,
    pub seed: u64,
    pub weather: Weather,
    pub eta_seconds: f64,
    pub config: OrchestratorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub ts: f64,
    pub kind: String,
    pub payload: Value,
}

impl LogEntry {
    pub fn event(seq: u64, event: &TimedEvent) -> Self {
        Self {
            seq,
            ts: event.at,
            kind: "event".into(),
            payload: serde_json::to_value(event).expect("event serializes"),
        }
    }

    pub fn effect(seq: u64, ts: f64, effect: &Effect) -> Self {
        let mut v = serde_json::to_value(effect).expect("effect serializes");
        let payload = v
            .get_mut("payload")
            .map(Value::take)
            .unwrap_or(Value::Null);
        Self {
            seq,
            ts,
            kind: effect.kind().into(),
            payload,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("entry serializes")
    }
}

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("session {0} not found")]
    NotFound(String),
    #[error("session {0} already exists")]
    AlreadyExists(String),
    #[error("invalid session id {0:?}")]
    InvalidId(String),
    #[error("unsupported log version {found}, expected {LOG_VERSION}")]
    UnsupportedVersion { found: String },
    #[error("log is corrupt after seq {last_good_seq:?} (line {line}): {reason}")]
    Integrity {
        last_good_seq: Option<u64>,
        line: usize,
        reason: String,
    },
    #[error("entry seq {found} does not follow {expected}")]
    SeqGap { expected: u64, found: u64 },
}

/// Destination for journal entries as they are produced.
pub trait LogSink: Send {
    fn append(&mut self, entry: &LogEntry) -> Result<(), JournalError>;
}

/// Keeps entries in memory; used by tests and replay comparisons.
#[derive(Debug, Default, Clone)]
pub struct MemoryLog {
    pub entries: Vec<LogEntry>,
}

impl LogSink for MemoryLog {
    fn append(&mut self, entry: &LogEntry) -> Result<(), JournalError> {
        check_seq(self.entries.last().map(|e| e.seq), entry.seq)?;
        self.entries.push(entry.clone());
        Ok(())
    }
}

fn check_seq(last: Option<u64>, found: u64) -> Result<(), JournalError> {
    let expected = last.map_or(0, |s| s + 1);
    if found == expected {
        Ok(())
    } else {
        Err(JournalError::SeqGap { expected, found })
    }
}

/// File-backed sink. Every append is flushed and synced before returning.
#[derive(Debug)]
pub struct JourneyWriter {
    path: PathBuf,
    file: File,
    last_seq: Option<u64>,
}

impl JourneyWriter {
    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl LogSink for JourneyWriter {
    fn append(&mut self, entry: &LogEntry) -> Result<(), JournalError> {
        check_seq(self.last_seq, entry.seq)?;
        write_line(&mut self.file, &self.path, &entry.to_line())?;
        self.last_seq = Some(entry.seq);
        Ok(())
    }
}

fn write_line(file: &mut File, path: &Path, line: &str) -> Result<(), JournalError> {
    let io = |source| JournalError::Io {
        path: path.to_path_buf(),
        source,
    };
    file.write_all(line.as_bytes()).map_err(io)?;
    file.write_all(b"\n").map_err(io)?;
    file.flush().map_err(io)?;
    file.sync_data().map_err(io)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JourneyLog {
    pub header: JourneyHeader,
    pub entries: Vec<LogEntry>,
}

impl JourneyLog {
    pub fn parse(src: &str) -> Result<JourneyLog, JournalError> {
        let mut lines = src.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((_, first)) = lines.next() else {
            return Err(JournalError::Integrity {
                last_good_seq: None,
                line: 1,
                reason: "empty log".into(),
            });
        };
        let raw: Value = serde_json::from_str(first).map_err(|e| JournalError::Integrity {
            last_good_seq: None,
            line: 1,
            reason: format!("header: {e}"),
        })?;
        let version = raw.get("version").and_then(Value::as_str).unwrap_or("");
        if version != LOG_VERSION {
            return Err(JournalError::UnsupportedVersion {
                found: version.to_string(),
            });
        }
        let header: JourneyHeader =
            serde_json::from_value(raw).map_err(|e| JournalError::Integrity {
                last_good_seq: None,
                line: 1,
                reason: format!("header: {e}"),
            })?;
        let mut entries: Vec<LogEntry> = Vec::new();
        for (i, line) in lines {
            let last_good_seq = entries.last().map(|e| e.seq);
            let entry: LogEntry = serde_json::from_str(line).map_err(|e| JournalError::Integrity {
                last_good_seq,
                line: i + 1,
                reason: e.to_string(),
            })?;
            check_seq(last_good_seq, entry.seq).map_err(|e| JournalError::Integrity {
                last_good_seq,
                line: i + 1,
                reason: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(JourneyLog { header, entries })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&e.to_line());
            out.push('\n');
        }
        out
    }

    /// The logged final summary, if the session completed.
    pub fn final_summary(&self) -> Option<ReflectionSummary> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.kind == "reflection")
            .and_then(|e| serde_json::from_value(e.payload.clone()).ok())
    }
}

/// Directory of `<session_id>.jsonl` files.
#[derive(Debug, Clone)]
pub struct JourneyStore {
    dir: PathBuf,
}

pub fn valid_session_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl JourneyStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, session_id: &str) -> Result<PathBuf, JournalError> {
        if !valid_session_id(session_id) {
            return Err(JournalError::InvalidId(session_id.to_string()));
        }
        Ok(self.dir.join(format!("{session_id}.jsonl")))
    }

    pub fn create(&self, header: &JourneyHeader) -> Result<JourneyWriter, JournalError> {
        let path = self.path_for(&header.session_id)?;
        fs::create_dir_all(&self.dir).map_err(|source| JournalError::Io {
            path: self.dir.clone(),
            source,
        })?;
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|source| {
                if source.kind() == std::io::ErrorKind::AlreadyExists {
                    JournalError::AlreadyExists(header.session_id.clone())
                } else {
                    JournalError::Io {
                        path: path.clone(),
                        source,
                    }
                }
            })?;
        let line = serde_json::to_string(header).expect("header serializes");
        write_line(&mut file, &path, &line)?;
        Ok(JourneyWriter {
            path,
            file,
            last_seq: None,
        })
    }

    pub fn load(&self, session_id: &str) -> Result<JourneyLog, JournalError> {
        let path = self.path_for(session_id)?;
        load_file(&path).map_err(|e| match e {
            JournalError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                JournalError::NotFound(session_id.to_string())
            }
            other => other,
        })
    }

    pub fn list(&self) -> Result<Vec<String>, JournalError> {
        let rd = match fs::read_dir(&self.dir) {
            Ok(rd) => rd,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => {
                return Err(JournalError::Io {
                    path: self.dir.clone(),
                    source,
                })
            }
        };
        let mut ids: Vec<String> = rd
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".jsonl").map(str::to_string)
            })
            .filter(|id| valid_session_id(id))
            .collect();
        ids.sort();
        Ok(ids)
    }
}

pub fn load_file(path: &Path) -> Result<JourneyLog, JournalError> {
    let file = File::open(path).map_err(|source| JournalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut src = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| JournalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        src.push_str(&line);
        src.push('\n');
    }
    JourneyLog::parse(&src)
}

/// Recomputes the reflection summary from the journal entries alone.
pub fn summarize(entries: &[LogEntry]) -> ReflectionSummary {
    let mut answered: BTreeMap<DevelopmentalGoal, u32> =
        DevelopmentalGoal::ALL.into_iter().map(|g| (g, 0)).collect();
    let mut unanswered = 0;
    let mut interacted = BTreeSet::new();
    let mut gallery: Vec<GalleryItem> = Vec::new();
    for e in entries {
        match e.kind.as_str() {
            "answer_ack" => {
                if let Some(g) = e
                    .payload
                    .get("goal")
                    .and_then(|g| serde_json::from_value::<DevelopmentalGoal>(g.clone()).ok())
                {
                    *answered.entry(g).or_default() += 1;
                }
            }
            "note" => {
                if e.payload.get("code").and_then(Value::as_str) == Some("prompt_unanswered") {
                    unanswered += 1;
                }
            }
            "segment" => {
                if e.payload.get("kind").and_then(Value::as_str) != Some("introduction") {
                    continue;
                }
                let Some(poi) = e.payload.get("poi_id").and_then(Value::as_str) else {
                    continue;
                };
                interacted.insert(poi.to_string());
                if let Some(img) = e.payload.get("image_ref").and_then(Value::as_str) {
                    if !gallery.iter().any(|g| g.poi_id == poi) {
                        gallery.push(GalleryItem {
                            poi_id: poi.to_string(),
                            image_ref: img.to_string(),
                        });
                    }
                }
            }
            _ => {}
        }
    }
    ReflectionSummary {
        locations_interacted: interacted.len() as u32,
        prompts_answered: answered,
        prompts_unanswered: unanswered,
        gallery,
    }
}

fn field<'a>(v: &'a Value, key: &str) -> &'a str {
    v.get(key).and_then(Value::as_str).unwrap_or("")
}

/// Plain-text rendering of what was said, in order.
pub fn render_transcript(log: &JourneyLog) -> String {
    let mut out = format!(
        "Session {} ({} theme, {})\n",
        log.header.session_id,
        log.header.theme.label(),
        log.header.character.display_name()
    );
    let who = log.header.character.display_name();
    for e in &log.entries {
        let p = &e.payload;
        let line = match e.kind.as_str() {
            "segment" => format!("{who} [{}]: {}", field(p, "kind"), field(p, "text")),
            "prompt" => {
                let mut s = format!("{who} asks: {}", field(p, "text"));
                if let Some(choices) = p.get("choices").and_then(Value::as_array) {
                    for c in choices {
                        s.push_str(&format!("\n      {}) {}", field(c, "label"), field(c, "text")));
                    }
                }
                s
            }
            "hint_image" => format!("(hint picture {})", field(p, "image_ref")),
            "event" => match field(p, "type") {
                "answer_received" => format!("Child: {}", field(p, "transcript")),
                "child_question" => format!("Child asks: {}", field(p, "transcript")),
                _ => continue,
            },
            "qa_answer" => format!("{who} answers: {}", field(p, "answer")),
            "note" if field(p, "code") == "prompt_unanswered" => {
                format!("(question {} left unanswered)", field(p, "prompt_id"))
            }
            "reflection" => {
                let total: u64 = p
                    .get("prompts_answered")
                    .and_then(Value::as_object)
                    .map_or(0, |m| m.values().filter_map(Value::as_u64).sum());
                format!(
                    "(journey complete: {} places, {} answers)",
                    p.get("locations_interacted").and_then(Value::as_u64).unwrap_or(0),
                    total
                )
            }
            _ => continue,
        };
        out.push_str(&format!("[{:>7.1}s] {line}\n", e.ts));
    }
    out
}
