//! Session setup shared by the CLI, the API service and the tests.

use std::sync::Arc;

use thiserror::Error;

use crate::geo::Route;
use crate::journal::{JourneyHeader, JourneyLog, LogSink, MemoryLog, SessionMode, LOG_VERSION};
use crate::orchestrator::{OrchestratorConfig, SessionDeps};
use crate::poi::{plan_pois, PoiCandidate, PoiError, SelectedPoi, SelectionConfig};
use crate::providers::{ProviderError, Providers, Weather};
use crate::runtime::SessionRuntime;
use crate::simulator::{
    generate_trace, playback, AnswerScript, Clock, PlaybackReport, SimError, SpeedProfile,
    VirtualClock,
};
use crate::story::{Character, StoryTheme};

#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Poi(#[from] PoiError),
    #[error("eta provider failed: {0}")]
    Eta(ProviderError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct JourneyParams {
    pub session_id: String,
    pub theme: StoryTheme,
    pub character: Character,
    pub seed: u64,
    pub mode: SessionMode,
    pub config: OrchestratorConfig,
}

impl JourneyParams {
    pub fn new(session_id: &str, theme: StoryTheme, character: Character, seed: u64) -> Self {
        Self {
            session_id: session_id.to_string(),
            theme,
            character,
            seed,
            mode: SessionMode::Simulated,
            config: OrchestratorConfig::default(),
        }
    }
}

/// Plans POIs and asks the providers for weather and ETA. A weather failure
/// degrades to `Weather::Unknown`; an ETA failure is an error.
pub fn build_header(
    route: Route,
    candidates: &[PoiCandidate],
    selection: &SelectionConfig,
    params: &JourneyParams,
    profile: &SpeedProfile,
    providers: &Providers,
    created_at: String,
) -> Result<JourneyHeader, SetupError> {
    let plan: Vec<SelectedPoi> = plan_pois(&route, candidates, selection)?;
    profile.validate(route.length())?;
    let weather = providers
        .weather
        .current(&route.points()[0])
        .unwrap_or(Weather::Unknown);
    let eta_seconds = providers
        .eta
        .eta_seconds(&route, profile)
        .map_err(SetupError::Eta)?;
    Ok(JourneyHeader {
        version: LOG_VERSION.to_string(),
        session_id: params.session_id.clone(),
        created_at,
        mode: params.mode,
        route,
        plan,
        theme: params.theme,
        character: params.character,
        seed: params.seed,
        weather,
        eta_seconds,
        config: params.config.clone(),
    })
}

pub fn runtime_for(header: &JourneyHeader, providers: Providers, sink: Box<dyn LogSink>) -> SessionRuntime {
    SessionRuntime::new(Arc::new(SessionDeps::from_header(header, providers)), sink)
}

/// Drives a whole simulated journey: trace generation, scripted child,
/// playback on the given clock.
pub fn run_simulation(
    header: &JourneyHeader,
    providers: Providers,
    profile: &SpeedProfile,
    sample_hz: f64,
    script: AnswerScript,
    sink: Box<dyn LogSink>,
    clock: &mut dyn Clock,
) -> Result<PlaybackReport, SimError> {
    let trace = generate_trace(&header.route, profile, sample_hz)?;
    let mut rt = runtime_for(header, providers, sink).with_script(script);
    playback(&trace, &mut rt, clock)
}

/// In-memory simulation on a virtual clock; convenient for tests.
pub fn simulate_in_memory(
    header: &JourneyHeader,
    providers: Providers,
    profile: &SpeedProfile,
    sample_hz: f64,
    script: AnswerScript,
) -> Result<(JourneyLog, PlaybackReport), SimError> {
    let log = SharedLog::default();
    let mut clock = VirtualClock::new();
    let report = run_simulation(
        header,
        providers,
        profile,
        sample_hz,
        script,
        Box::new(log.clone()),
        &mut clock,
    )?;
    let entries = log.take();
    Ok((
        JourneyLog {
            header: header.clone(),
            entries,
        },
        report,
    ))
}

/// A `MemoryLog` behind a shared handle, so the caller keeps access after
/// handing the sink to a runtime.
#[derive(Debug, Clone, Default)]
pub struct SharedLog(Arc<std::sync::Mutex<MemoryLog>>);

impl SharedLog {
    pub fn take(&self) -> Vec<crate::journal::LogEntry> {
        std::mem::take(&mut self.0.lock().expect("log lock").entries)
    }

    pub fn snapshot(&self) -> Vec<crate::journal::LogEntry> {
        self.0.lock().expect("log lock").entries.clone()
    }

    /// Entries from index `start` on.
    pub fn since(&self, start: usize) -> Vec<crate::journal::LogEntry> {
        let log = self.0.lock().expect("log lock");
        log.entries.get(start..).map(<[_]>::to_vec).unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("log lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_entries(entries: Vec<crate::journal::LogEntry>) -> Self {
        Self(Arc::new(std::sync::Mutex::new(MemoryLog { entries })))
    }
}

impl LogSink for SharedLog {
    fn append(&mut self, entry: &crate::journal::LogEntry) -> Result<(), crate::journal::JournalError> {
        self.0.lock().expect("log lock").append(entry)
    }
}
