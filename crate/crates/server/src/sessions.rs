//! Live session registry: one runtime per session behind a mutex, a journal
//! mirror for streaming, and a background driver task.

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::{watch, Notify};

use scenic_core::formats::{load_pois, load_route, route_to_geojson, FormatError};
use scenic_core::journal::{
    JournalError, JourneyHeader, JourneyStore, JourneyWriter, LogEntry, LogSink, ReflectionSummary,
    SessionMode,
};
use scenic_core::orchestrator::SessionEvent;
use scenic_core::poi::SelectionConfig;
use scenic_core::providers::Providers;
use scenic_core::runtime::{RuntimeError, SessionRuntime};
use scenic_core::session::{build_header, runtime_for, JourneyParams, SetupError, SharedLog};
use scenic_core::simulator::{generate_trace, AnswerScript, Playback, SpeedProfile, Stop};
use scenic_core::story::{Character, StoryTheme};

use crate::ApiError;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub sessions_dir: PathBuf,
    pub fixtures_dir: PathBuf,
    /// Simulated sessions run this many times faster than real time; `None`
    /// runs them on the virtual clock, as fast as possible.
    pub sim_speedup: Option<f64>,
    pub sample_hz: f64,
}

impl ServerConfig {
    pub fn new(sessions_dir: impl Into<PathBuf>, fixtures_dir: impl Into<PathBuf>) -> Self {
        Self {
            sessions_dir: sessions_dir.into(),
            fixtures_dir: fixtures_dir.into(),
            sim_speedup: None,
            sample_hz: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub route: String,
    pub pois: String,
    pub theme: String,
    pub character: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub answers: Option<String>,
    #[serde(default)]
    pub speed: Option<f64>,
    #[serde(default)]
    pub stops: Vec<Stop>,
    #[serde(default)]
    pub jitter_seed: Option<u64>,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

fn default_mode() -> String {
    "simulated".into()
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanItem {
    pub id: String,
    pub name: String,
    #[serde(rename = "type")]
    pub type_tag: String,
    pub lat: f64,
    pub lon: f64,
    pub offset_m: f64,
    pub trigger_offset_m: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub route_ref: String,
    pub poi_ref: String,
    pub theme: StoryTheme,
    pub character: Character,
    pub character_name: String,
    pub seed: u64,
    pub mode: SessionMode,
    pub state: String,
    pub created_at: String,
    pub eta_seconds: f64,
    pub route_length_m: f64,
    pub route: Value,
    pub plan: Vec<PlanItem>,
    pub last_seq: Option<u64>,
}

/// Writes to the journal file first, then to the in-memory mirror.
struct TeeSink {
    file: JourneyWriter,
    mirror: SharedLog,
}

impl LogSink for TeeSink {
    fn append(&mut self, entry: &LogEntry) -> Result<(), JournalError> {
        self.file.append(entry)?;
        self.mirror.append(entry)
    }
}

struct Live {
    runtime: Option<SessionRuntime>,
    playback: Option<Playback>,
    failed: Option<String>,
}

pub struct SessionHandle {
    pub header: JourneyHeader,
    route_ref: String,
    poi_ref: String,
    live: Mutex<Live>,
    log: SharedLog,
    notify: watch::Sender<usize>,
    wake: Notify,
    started: Instant,
    speedup: Option<f64>,
}

impl SessionHandle {
    pub fn log(&self) -> &SharedLog {
        &self.log
    }

    pub fn subscribe(&self) -> watch::Receiver<usize> {
        self.notify.subscribe()
    }

    /// True once no further entries can appear.
    pub fn finished(&self) -> bool {
        let live = self.live.lock().expect("session lock");
        match &live.runtime {
            Some(rt) => rt.is_completed() || live.failed.is_some(),
            None => true,
        }
    }

    pub fn state_name(&self) -> String {
        let live = self.live.lock().expect("session lock");
        match &live.runtime {
            Some(rt) => rt.state_name().to_string(),
            None => state_from_log(&self.log.snapshot()),
        }
    }

    fn publish(&self) {
        self.notify.send_replace(self.log.len());
    }

    /// Session time for externally triggered events.
    fn now(&self, rt: &SessionRuntime) -> f64 {
        let t = match (self.header.mode, self.speedup) {
            (SessionMode::ExternalPositions, _) => self.started.elapsed().as_secs_f64(),
            (SessionMode::Simulated, Some(k)) => self.started.elapsed().as_secs_f64() * k,
            (SessionMode::Simulated, None) => rt.last_time(),
        };
        t.max(rt.last_time())
    }

    pub fn descriptor(&self) -> SessionDescriptor {
        let h = &self.header;
        SessionDescriptor {
            session_id: h.session_id.clone(),
            route_ref: self.route_ref.clone(),
            poi_ref: self.poi_ref.clone(),
            theme: h.theme,
            character: h.character,
            character_name: h.character.display_name().to_string(),
            seed: h.seed,
            mode: h.mode,
            state: self.state_name(),
            created_at: h.created_at.clone(),
            eta_seconds: h.eta_seconds,
            route_length_m: h.route.length(),
            route: route_to_geojson(&h.route),
            plan: h
                .plan
                .iter()
                .map(|p| PlanItem {
                    id: p.candidate.id.clone(),
                    name: p.candidate.name.clone(),
                    type_tag: p.candidate.type_tag.clone(),
                    lat: p.candidate.point.lat,
                    lon: p.candidate.point.lon,
                    offset_m: p.offset,
                    trigger_offset_m: p.trigger_offset,
                })
                .collect(),
            last_seq: self.log.snapshot().last().map(|e| e.seq),
        }
    }

    /// Applies an externally submitted event at the current session time.
    pub fn submit(&self, build: impl FnOnce(&SessionRuntime) -> Result<SessionEvent, ApiError>) -> Result<Vec<LogEntry>, ApiError> {
        let mut live = self.live.lock().expect("session lock");
        let Some(rt) = live.runtime.as_mut() else {
            return Err(ApiError::Conflict("session is not active".into()));
        };
        if rt.is_completed() {
            return Err(ApiError::Conflict("session is completed".into()));
        }
        let event = build(rt)?;
        let at = self.now(rt);
        let out = rt.apply(at, event).map_err(ApiError::from_runtime)?;
        drop(live);
        self.publish();
        self.wake.notify_one();
        Ok(out)
    }

    pub fn reflection(&self) -> Result<ReflectionSummary, ApiError> {
        let live = self.live.lock().expect("session lock");
        if let Some(rt) = &live.runtime {
            return match rt.machine().summary() {
                Some(s) if matches!(rt.state_name(), "reflecting" | "completed") => Ok(s.clone()),
                _ => Err(ApiError::Conflict(format!(
                    "reflection is not available in state {}",
                    rt.state_name()
                ))),
            };
        }
        drop(live);
        let entries = self.log.snapshot();
        entries
            .iter()
            .rev()
            .find(|e| e.kind == "reflection")
            .and_then(|e| serde_json::from_value(e.payload.clone()).ok())
            .ok_or_else(|| ApiError::Conflict("journey did not reach its reflection".into()))
    }
}

fn state_from_log(entries: &[LogEntry]) -> String {
    entries
        .iter()
        .rev()
        .find(|e| e.kind == "state_change")
        .and_then(|e| e.payload.get("to").and_then(Value::as_str))
        .unwrap_or("created")
        .to_string()
}

pub struct Registry {
    pub config: ServerConfig,
    store: JourneyStore,
    providers: Providers,
    sessions: Mutex<HashMap<String, Arc<SessionHandle>>>,
    idempotency: Mutex<HashMap<String, String>>,
}

fn resolve_asset(dir: &Path, rel: &str) -> Result<PathBuf, ApiError> {
    let p = Path::new(rel);
    if rel.is_empty() || p.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(ApiError::Validation(format!("asset reference {rel:?} must be a relative file name")));
    }
    let full = dir.join(p);
    if !full.is_file() {
        return Err(ApiError::NotFound(format!("asset {rel} not found")));
    }
    Ok(full)
}

fn input_error(e: FormatError) -> ApiError {
    ApiError::Validation(e.to_string())
}

impl Registry {
    pub fn new(config: ServerConfig, providers: Providers) -> Self {
        Self {
            store: JourneyStore::new(&config.sessions_dir),
            config,
            providers,
            sessions: Mutex::new(HashMap::new()),
            idempotency: Mutex::new(HashMap::new()),
        }
    }

    /// Live session, or one loaded read-only from the journal directory.
    pub fn get(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        if let Some(h) = self.sessions.lock().expect("registry lock").get(id) {
            return Ok(h.clone());
        }
        let log = self.store.load(id).map_err(|e| match e {
            JournalError::NotFound(_) | JournalError::InvalidId(_) => {
                ApiError::NotFound(format!("session {id} not found"))
            }
            other => ApiError::Internal(other.to_string()),
        })?;
        let (notify, _) = watch::channel(log.entries.len());
        let handle = Arc::new(SessionHandle {
            header: log.header,
            route_ref: String::new(),
            poi_ref: String::new(),
            live: Mutex::new(Live {
                runtime: None,
                playback: None,
                failed: None,
            }),
            log: SharedLog::from_entries(log.entries),
            notify,
            wake: Notify::new(),
            started: Instant::now(),
            speedup: None,
        });
        self.sessions
            .lock()
            .expect("registry lock")
            .insert(id.to_string(), handle.clone());
        Ok(handle)
    }

    /// Returns the descriptor and whether a new session was created.
    pub fn create(self: &Arc<Self>, req: CreateSession) -> Result<(SessionDescriptor, bool), ApiError> {
        if let Some(key) = &req.idempotency_key {
            let existing = self.idempotency.lock().expect("registry lock").get(key).cloned();
            if let Some(id) = existing {
                return Ok((self.get(&id)?.descriptor(), false));
            }
        }
        let theme: StoryTheme = req.theme.parse().map_err(|e: scenic_core::story::ParseChoiceError| ApiError::Validation(e.to_string()))?;
        let character: Character = req.character.parse().map_err(|e: scenic_core::story::ParseChoiceError| ApiError::Validation(e.to_string()))?;
        let mode = match req.mode.as_str() {
            "simulated" => SessionMode::Simulated,
            "external_positions" | "external-positions" => SessionMode::ExternalPositions,
            other => return Err(ApiError::Validation(format!("unknown mode {other:?}"))),
        };
        let speed = req.speed.unwrap_or(10.0);
        let profile = SpeedProfile {
            cruise_speed: speed,
            stops: req.stops.clone(),
            jitter_seed: req.jitter_seed,
        };
        let fixtures = &self.config.fixtures_dir;
        let route = load_route(&resolve_asset(fixtures, &req.route)?).map_err(input_error)?;
        let pois = load_pois(&resolve_asset(fixtures, &req.pois)?).map_err(input_error)?;
        let script = match &req.answers {
            Some(a) => {
                let path = resolve_asset(fixtures, a)?;
                let src = std::fs::read_to_string(&path).map_err(|e| ApiError::Internal(e.to_string()))?;
                AnswerScript::parse(&src).map_err(|e| ApiError::Validation(e.to_string()))?
            }
            None => AnswerScript::default(),
        };
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let mut params = JourneyParams::new(&session_id, theme, character, req.seed);
        params.mode = mode;
        let header = build_header(
            route,
            &pois,
            &SelectionConfig::default(),
            &params,
            &profile,
            &self.providers,
            chrono::Utc::now().to_rfc3339(),
        )
        .map_err(|e| match e {
            SetupError::Eta(p) => ApiError::Internal(p.to_string()),
            other => ApiError::Validation(other.to_string()),
        })?;
        let writer = self
            .store
            .create(&header)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        let mirror = SharedLog::default();
        let sink = TeeSink {
            file: writer,
            mirror: mirror.clone(),
        };
        let runtime = runtime_for(&header, self.providers.clone(), Box::new(sink)).with_script(script);
        let playback = if mode == SessionMode::Simulated {
            let trace = generate_trace(&header.route, &profile, self.config.sample_hz)
                .map_err(|e| ApiError::Validation(e.to_string()))?;
            Some(Playback::new(trace, &runtime).map_err(|e| ApiError::Internal(e.to_string()))?)
        } else {
            None
        };
        let (notify, _) = watch::channel(0);
        let handle = Arc::new(SessionHandle {
            header,
            route_ref: req.route.clone(),
            poi_ref: req.pois.clone(),
            live: Mutex::new(Live {
                runtime: Some(runtime),
                playback,
                failed: None,
            }),
            log: mirror,
            notify,
            wake: Notify::new(),
            started: Instant::now(),
            speedup: self.config.sim_speedup,
        });
        self.sessions
            .lock()
            .expect("registry lock")
            .insert(session_id.clone(), handle.clone());
        if let Some(key) = &req.idempotency_key {
            self.idempotency
                .lock()
                .expect("registry lock")
                .insert(key.clone(), session_id.clone());
        }
        if mode == SessionMode::ExternalPositions {
            start_external(&handle)?;
        }
        let descriptor = handle.descriptor();
        match mode {
            SessionMode::Simulated => tokio::spawn(drive_simulation(handle)),
            SessionMode::ExternalPositions => tokio::spawn(drive_timers(handle)),
        };
        Ok((descriptor, true))
    }
}

fn start_external(handle: &SessionHandle) -> Result<(), ApiError> {
    let mut live = handle.live.lock().expect("session lock");
    let rt = live.runtime.as_mut().expect("live runtime");
    rt.apply(0.0, SessionEvent::Start).map_err(ApiError::from_runtime)?;
    drop(live);
    handle.publish();
    Ok(())
}

fn fail(handle: &SessionHandle, err: String) {
    tracing::error!(session = %handle.header.session_id, "session stopped: {err}");
    handle.live.lock().expect("session lock").failed = Some(err);
    handle.publish();
}

async fn drive_simulation(handle: Arc<SessionHandle>) {
    loop {
        let next = {
            let live = handle.live.lock().expect("session lock");
            match (&live.playback, &live.runtime) {
                (Some(pb), Some(rt)) => pb.next_at(rt),
                _ => None,
            }
        };
        let Some(t) = next else {
            handle.publish();
            break;
        };
        match handle.speedup {
            Some(k) if k > 0.0 => {
                let due = handle.started + Duration::from_secs_f64(t.max(0.0) / k);
                tokio::time::sleep_until(due.into()).await;
            }
            _ => tokio::task::yield_now().await,
        }
        let result = {
            let mut live = handle.live.lock().expect("session lock");
            let Live {
                runtime, playback, ..
            } = &mut *live;
            match (playback.as_mut(), runtime.as_mut()) {
                (Some(pb), Some(rt)) => pb.step(rt).map_err(|e| e.to_string()),
                _ => Ok(false),
            }
        };
        match result {
            Ok(_) => handle.publish(),
            Err(e) => {
                fail(&handle, e);
                break;
            }
        }
    }
}

/// Fires speech-finished and silence timers for externally driven sessions.
async fn drive_timers(handle: Arc<SessionHandle>) {
    loop {
        let next = {
            let live = handle.live.lock().expect("session lock");
            match &live.runtime {
                Some(rt) if !rt.is_completed() && live.failed.is_none() => Some(rt.next_timer_at()),
                _ => None,
            }
        };
        let Some(next) = next else { break };
        match next {
            Some(t) => {
                let due = handle.started + Duration::from_secs_f64(t.max(0.0));
                tokio::select! {
                    _ = tokio::time::sleep_until(due.into()) => {}
                    _ = handle.wake.notified() => continue,
                }
                let result = {
                    let mut live = handle.live.lock().expect("session lock");
                    let rt = live.runtime.as_mut().expect("live runtime");
                    match rt.next_timer_at() {
                        Some(nt) if nt <= handle.started.elapsed().as_secs_f64() + 1e-3 => {
                            match rt.pop_timer() {
                                Some((at, ev)) => {
                                    let at = at.max(rt.last_time());
                                    match rt.apply(at, ev) {
                                        Err(RuntimeError::Journal(e)) => Err(e.to_string()),
                                        _ => Ok(()),
                                    }
                                }
                                None => Ok(()),
                            }
                        }
                        _ => Ok(()),
                    }
                };
                match result {
                    Ok(()) => handle.publish(),
                    Err(e) => {
                        fail(&handle, e);
                        break;
                    }
                }
            }
            None => handle.wake.notified().await,
        }
    }
}
