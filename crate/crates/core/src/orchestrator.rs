//! Per-session state machine. `handle_event` is a pure transition: the same
//! machine, event and dependencies always give the same effects.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{Route, RoutePosition};
use crate::journal::{JourneyHeader, ReflectionSummary};
use crate::poi::SelectedPoi;
use crate::providers::{
    derive_seed, ImageRequest, ProviderPayload, ProviderResult, Providers, TextRequest, TextRole,
    Weather,
};
use crate::story::{
    compose_checked, compose_episode, compose_orientation, compose_reflection, compose_transition,
    episode_summary, Character, EpisodeIds, JourneyRecord, SegmentKind, SegmentRequest,
    StoryContext, StorySegment, StoryTheme, StyleGuide,
};
use crate::strategy::{
    fallback_prompt, generate_prompt, strategy_cycle, CognitivePrompt, DevelopmentalGoal,
    PromptSpec, StrategyKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    pub seconds_per_prompt: f64,
    pub min_prompts: u32,
    pub max_prompts: u32,
    pub final_leg_max_prompts: u32,
    /// Used when there are no recent fixes or the car is standing still.
    pub fallback_speed: f64,
    pub speed_window_s: f64,
    pub min_moving_speed: f64,
    /// Reflection starts this far before the route end.
    pub arrival_margin: f64,
    /// Larger backward jumps in offset are dropped as out of order.
    pub max_backtrack: f64,
    pub help_phrases: Vec<String>,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            seconds_per_prompt: 45.0,
            min_prompts: 1,
            max_prompts: 3,
            final_leg_max_prompts: 5,
            fallback_speed: 8.0,
            speed_window_s: 30.0,
            min_moving_speed: 0.5,
            arrival_margin: 200.0,
            max_backtrack: 50.0,
            help_phrases: [
                "i don't know",
                "i do not know",
                "i dont know",
                "no idea",
                "not sure",
                "help",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

pub fn prompt_budget(
    distance_to_next_trigger: f64,
    recent_speed: f64,
    config: &OrchestratorConfig,
    final_leg: bool,
) -> u32 {
    let speed = if recent_speed > 0.0 && recent_speed.is_finite() {
        recent_speed
    } else {
        config.fallback_speed
    };
    let cap = if final_leg {
        config.final_leg_max_prompts
    } else {
        config.max_prompts
    };
    let n = (distance_to_next_trigger.max(0.0) / speed / config.seconds_per_prompt).floor();
    (n as u32).clamp(config.min_prompts, cap.max(config.min_prompts))
}

fn normalize(text: &str) -> String {
    let cleaned: String = text
        .to_lowercase()
        .replace('’', "'")
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '\'' { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when the transcript contains one of the help phrases as whole words.
pub fn detect_help_request(transcript: &str, config: &OrchestratorConfig) -> bool {
    let t = normalize(transcript);
    if t.is_empty() {
        return false;
    }
    let padded = format!(" {t} ");
    config
        .help_phrases
        .iter()
        .map(|p| normalize(p))
        .filter(|p| !p.is_empty())
        .any(|p| padded.contains(&format!(" {p} ")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodePhase {
    Approach,
    Introduction,
    Narration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Awaiting {
    Answer,
    Nothing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum SessionState {
    Created,
    Orienting,
    Cruising {
        next_poi: usize,
    },
    InEpisode {
        poi: usize,
        phase: EpisodePhase,
    },
    Conversing {
        poi: usize,
        prompts_remaining: u32,
        awaiting: Awaiting,
    },
    Reflecting,
    Completed,
}

impl SessionState {
    pub fn name(&self) -> &'static str {
        match self {
            SessionState::Created => "created",
            SessionState::Orienting => "orienting",
            SessionState::Cruising { .. } => "cruising",
            SessionState::InEpisode { .. } => "in_episode",
            SessionState::Conversing { .. } => "conversing",
            SessionState::Reflecting => "reflecting",
            SessionState::Completed => "completed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    Start,
    PositionUpdated { position: RoutePosition },
    SegmentFinished { segment_id: String },
    AnswerReceived { prompt_id: String, transcript: String },
    ChildQuestion { transcript: String },
    HintRequested,
    SilenceTimeout { prompt_id: String },
    ProviderResult { result: ProviderResult },
    PositionStreamEnded,
}

impl SessionEvent {
    pub fn name(&self) -> &'static str {
        match self {
            SessionEvent::Start => "start",
            SessionEvent::PositionUpdated { .. } => "position_updated",
            SessionEvent::SegmentFinished { .. } => "segment_finished",
            SessionEvent::AnswerReceived { .. } => "answer_received",
            SessionEvent::ChildQuestion { .. } => "child_question",
            SessionEvent::HintRequested => "hint_requested",
            SessionEvent::SilenceTimeout { .. } => "silence_timeout",
            SessionEvent::ProviderResult { .. } => "provider_result",
            SessionEvent::PositionStreamEnded => "position_stream_ended",
        }
    }
}

/// An event with its session time in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub at: f64,
    #[serde(flatten)]
    pub event: SessionEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintReason {
    HelpRequest,
    Silence,
    Requested,
    Provider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HintImage {
    pub prompt_id: String,
    pub image_ref: String,
    pub reason: HintReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerAck {
    pub prompt_id: String,
    pub strategy: StrategyKind,
    pub goal: DevelopmentalGoal,
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaAnswer {
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poi_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateChange {
    pub from: String,
    pub to: String,
    pub state: SessionState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteCode {
    PositionOutOfOrder,
    PromptUnanswered,
    EpisodeTruncated,
    ConversationSkipped,
    HintUnavailable,
    PromptFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub code: NoteCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poi_id: Option<String>,
}

/// Everything a transition produces. The serde tag doubles as the journal
/// entry kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Effect {
    #[serde(rename = "segment")]
    EmitSegment(StorySegment),
    #[serde(rename = "prompt")]
    EmitPrompt(CognitivePrompt),
    #[serde(rename = "hint_image")]
    EmitHintImage(HintImage),
    #[serde(rename = "answer_ack")]
    AcknowledgeAnswer(AnswerAck),
    #[serde(rename = "qa_answer")]
    AnswerChildQuestion(QaAnswer),
    #[serde(rename = "state_change")]
    StateChanged(StateChange),
    #[serde(rename = "reflection")]
    FinishSession(ReflectionSummary),
    #[serde(rename = "note")]
    LogEntry(Note),
}

impl Effect {
    pub fn kind(&self) -> &'static str {
        match self {
            Effect::EmitSegment(_) => "segment",
            Effect::EmitPrompt(_) => "prompt",
            Effect::EmitHintImage(_) => "hint_image",
            Effect::AcknowledgeAnswer(_) => "answer_ack",
            Effect::AnswerChildQuestion(_) => "qa_answer",
            Effect::StateChanged(_) => "state_change",
            Effect::FinishSession(_) => "reflection",
            Effect::LogEntry(_) => "note",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestratorError {
    #[error("session is completed")]
    Terminal,
    #[error("event {event} is not valid in state {state}")]
    StateMismatch { state: String, event: String },
    #[error("event time {at} is before the previous event at {last}")]
    NonMonotonic { last: f64, at: f64 },
    #[error("invalid event: {0}")]
    Invalid(String),
}

/// Fixed inputs of a session.
#[derive(Debug, Clone)]
pub struct SessionDeps {
    pub route: Route,
    pub plan: Vec<SelectedPoi>,
    pub theme: StoryTheme,
    pub character: Character,
    pub seed: u64,
    pub weather: Weather,
    pub eta_seconds: f64,
    pub config: OrchestratorConfig,
    pub providers: Providers,
    pub style: StyleGuide,
    cycle: [StrategyKind; 6],
}

impl SessionDeps {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        route: Route,
        plan: Vec<SelectedPoi>,
        theme: StoryTheme,
        character: Character,
        seed: u64,
        weather: Weather,
        eta_seconds: f64,
        config: OrchestratorConfig,
        providers: Providers,
    ) -> Self {
        Self {
            route,
            plan,
            theme,
            character,
            seed,
            weather,
            eta_seconds,
            config,
            providers,
            style: StyleGuide::default(),
            cycle: strategy_cycle(seed),
        }
    }

    pub fn from_header(header: &JourneyHeader, providers: Providers) -> Self {
        Self::new(
            header.route.clone(),
            header.plan.clone(),
            header.theme,
            header.character,
            header.seed,
            header.weather,
            header.eta_seconds,
            header.config.clone(),
            providers,
        )
    }

    pub fn strategy_for_slot(&self, slot: u32) -> StrategyKind {
        self.cycle[slot as usize % 6]
    }

    fn context(&self, prior: &str) -> StoryContext {
        StoryContext {
            theme: self.theme,
            character: self.character,
            weather: self.weather,
            prior_episode_summary: prior.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionMachine {
    state: SessionState,
    last_at: Option<f64>,
    max_offset: Option<f64>,
    fixes: VecDeque<(f64, f64)>,
    segment_counter: u32,
    slot_counter: u32,
    hint_counter: u32,
    qa_counter: u32,
    pending: VecDeque<StorySegment>,
    playing: Option<String>,
    current_prompt: Option<CognitivePrompt>,
    hint_shown: bool,
    record: JourneyRecord,
    prior_summary: String,
    summary: Option<ReflectionSummary>,
    last_poi: Option<usize>,
}

impl Default for SessionMachine {
    fn default() -> Self {
        Self::new()
    }
}

impl SessionMachine {
    pub fn new() -> Self {
        Self {
            state: SessionState::Created,
            last_at: None,
            max_offset: None,
            fixes: VecDeque::new(),
            segment_counter: 0,
            slot_counter: 0,
            hint_counter: 0,
            qa_counter: 0,
            pending: VecDeque::new(),
            playing: None,
            current_prompt: None,
            hint_shown: false,
            record: JourneyRecord::default(),
            prior_summary: String::new(),
            summary: None,
            last_poi: None,
        }
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn current_prompt(&self) -> Option<&CognitivePrompt> {
        self.current_prompt.as_ref()
    }

    pub fn summary(&self) -> Option<&ReflectionSummary> {
        self.summary.as_ref()
    }

    pub fn record(&self) -> &JourneyRecord {
        &self.record
    }

    pub fn last_time(&self) -> Option<f64> {
        self.last_at
    }

    pub fn handle_event(
        &self,
        event: &TimedEvent,
        deps: &SessionDeps,
    ) -> Result<(SessionMachine, Vec<Effect>), OrchestratorError> {
        if self.state == SessionState::Completed {
            return Err(OrchestratorError::Terminal);
        }
        if let Some(last) = self.last_at {
            if event.at < last {
                return Err(OrchestratorError::NonMonotonic {
                    last,
                    at: event.at,
                });
            }
        }
        let mut m = self.clone();
        let mut fx = Vec::new();
        m.apply(event, deps, &mut fx)?;
        m.last_at = Some(event.at);
        Ok((m, fx))
    }

    fn mismatch(&self, event: &SessionEvent) -> OrchestratorError {
        OrchestratorError::StateMismatch {
            state: self.state.name().to_string(),
            event: event.name().to_string(),
        }
    }

    fn apply(
        &mut self,
        ev: &TimedEvent,
        deps: &SessionDeps,
        fx: &mut Vec<Effect>,
    ) -> Result<(), OrchestratorError> {
        let at = ev.at;
        match &ev.event {
            SessionEvent::Start => {
                if self.state != SessionState::Created {
                    return Err(self.mismatch(&ev.event));
                }
                self.set_state(SessionState::Orienting, fx);
                let id = self.next_segment_id();
                let ctx = deps.context("");
                let seg = compose_orientation(
                    &deps.plan,
                    deps.eta_seconds,
                    &SegmentRequest {
                        id: id.clone(),
                        seed: derive_seed(deps.seed, "orientation"),
                        ctx: &ctx,
                    },
                    &deps.providers,
                    &deps.style,
                );
                self.play(seg, fx);
            }
            SessionEvent::PositionUpdated { position } => {
                if self.state == SessionState::Created {
                    return Err(self.mismatch(&ev.event));
                }
                if let Some(max) = self.max_offset {
                    if max - position.offset > deps.config.max_backtrack {
                        fx.push(Effect::LogEntry(Note {
                            code: NoteCode::PositionOutOfOrder,
                            message: format!(
                                "dropped fix at {:.1} m, already at {:.1} m",
                                position.offset, max
                            ),
                            prompt_id: None,
                            poi_id: None,
                        }));
                        return Ok(());
                    }
                }
                let offset = self.max_offset.map_or(position.offset, |m| m.max(position.offset));
                self.max_offset = Some(offset);
                self.fixes.push_back((at, offset));
                while self
                    .fixes
                    .front()
                    .is_some_and(|(t, _)| at - t > deps.config.speed_window_s)
                {
                    self.fixes.pop_front();
                }
                self.advance(at, deps, fx);
            }
            SessionEvent::SegmentFinished { segment_id } => {
                if self.playing.as_deref() != Some(segment_id.as_str()) {
                    return Err(self.mismatch(&ev.event));
                }
                self.playing = None;
                match self.state.clone() {
                    SessionState::Orienting => {
                        self.set_state(SessionState::Cruising { next_poi: 0 }, fx);
                        self.advance(at, deps, fx);
                    }
                    SessionState::InEpisode { poi, .. } => match self.pending.pop_front() {
                        Some(seg) => {
                            let phase = match seg.kind {
                                SegmentKind::Narration => EpisodePhase::Narration,
                                _ => EpisodePhase::Introduction,
                            };
                            self.set_state(SessionState::InEpisode { poi, phase }, fx);
                            self.play(seg, fx);
                        }
                        None => self.enter_conversation(poi, at, deps, fx),
                    },
                    SessionState::Reflecting => {
                        self.set_state(SessionState::Completed, fx);
                        let summary = self.summary.clone().unwrap_or_default();
                        fx.push(Effect::FinishSession(summary));
                    }
                    _ => {}
                }
            }
            SessionEvent::AnswerReceived {
                prompt_id,
                transcript,
            } => {
                let poi = self.awaiting_prompt(prompt_id).ok_or_else(|| self.mismatch(&ev.event))?;
                if transcript.trim().is_empty() {
                    return Err(OrchestratorError::Invalid("empty transcript".into()));
                }
                if detect_help_request(transcript, &deps.config) {
                    self.emit_hint(HintReason::HelpRequest, deps, fx);
                } else {
                    let prompt = self.current_prompt.take().expect("awaiting prompt");
                    self.record.answered.push(prompt.goal);
                    fx.push(Effect::AcknowledgeAnswer(AnswerAck {
                        prompt_id: prompt.id,
                        strategy: prompt.strategy,
                        goal: prompt.goal,
                        transcript: transcript.trim().to_string(),
                    }));
                    self.after_prompt(poi, at, deps, fx);
                }
            }
            SessionEvent::SilenceTimeout { prompt_id } => {
                let poi = self.awaiting_prompt(prompt_id).ok_or_else(|| self.mismatch(&ev.event))?;
                if !self.hint_shown {
                    self.emit_hint(HintReason::Silence, deps, fx);
                } else {
                    self.drop_prompt("no answer after a hint", fx);
                    self.after_prompt(poi, at, deps, fx);
                }
            }
            SessionEvent::HintRequested => {
                if !matches!(
                    self.state,
                    SessionState::Conversing {
                        awaiting: Awaiting::Answer,
                        ..
                    }
                ) {
                    return Err(self.mismatch(&ev.event));
                }
                self.emit_hint(HintReason::Requested, deps, fx);
            }
            SessionEvent::ChildQuestion { transcript } => {
                if !matches!(
                    self.state,
                    SessionState::Cruising { .. } | SessionState::Conversing { .. }
                ) {
                    return Err(self.mismatch(&ev.event));
                }
                if transcript.trim().is_empty() {
                    return Err(OrchestratorError::Invalid("empty question".into()));
                }
                let qa = self.answer_question(transcript.trim(), deps);
                fx.push(Effect::AnswerChildQuestion(qa));
            }
            SessionEvent::ProviderResult { result } => {
                if self.state == SessionState::Created {
                    return Err(self.mismatch(&ev.event));
                }
                if let (ProviderPayload::Image { image_ref }, Some(p)) =
                    (&result.payload, &self.current_prompt)
                {
                    fx.push(Effect::EmitHintImage(HintImage {
                        prompt_id: p.id.clone(),
                        image_ref: image_ref.clone(),
                        reason: HintReason::Provider,
                    }));
                    self.hint_shown = true;
                }
            }
            SessionEvent::PositionStreamEnded => match self.state {
                SessionState::Created => return Err(self.mismatch(&ev.event)),
                SessionState::Reflecting => {}
                _ => {
                    self.drop_prompt("journey ended", fx);
                    self.begin_reflection(deps, fx);
                }
            },
        }
        Ok(())
    }

    /// POI index when `prompt_id` is the prompt currently awaiting an answer.
    fn awaiting_prompt(&self, prompt_id: &str) -> Option<usize> {
        match (&self.state, &self.current_prompt) {
            (
                SessionState::Conversing {
                    poi,
                    awaiting: Awaiting::Answer,
                    ..
                },
                Some(p),
            ) if p.id == prompt_id => Some(*poi),
            _ => None,
        }
    }

    fn set_state(&mut self, next: SessionState, fx: &mut Vec<Effect>) {
        if self.state.name() != next.name() {
            fx.push(Effect::StateChanged(StateChange {
                from: self.state.name().to_string(),
                to: next.name().to_string(),
                state: next.clone(),
            }));
        }
        self.state = next;
    }

    fn next_segment_id(&mut self) -> String {
        let id = format!("s{}", self.segment_counter);
        self.segment_counter += 1;
        id
    }

    fn play(&mut self, seg: StorySegment, fx: &mut Vec<Effect>) {
        self.playing = Some(seg.id.clone());
        fx.push(Effect::EmitSegment(seg));
    }

    fn advance(&mut self, at: f64, deps: &SessionDeps, fx: &mut Vec<Effect>) {
        let Some(offset) = self.max_offset else {
            return;
        };
        let n = deps.plan.len();
        let arrival = deps.route.length() - deps.config.arrival_margin;
        match self.state.clone() {
            SessionState::Cruising { next_poi } if next_poi < n => {
                if offset >= deps.plan[next_poi].trigger_offset {
                    self.start_episode(next_poi, false, deps, fx);
                }
            }
            SessionState::Cruising { .. } => {
                if offset >= arrival {
                    self.begin_reflection(deps, fx);
                }
            }
            SessionState::Conversing { poi, .. } if poi + 1 < n => {
                if offset >= deps.plan[poi + 1].trigger_offset {
                    self.drop_prompt("next place reached", fx);
                    self.start_episode(poi + 1, true, deps, fx);
                }
            }
            SessionState::Conversing { .. } => {
                if offset >= arrival {
                    self.drop_prompt("journey ending", fx);
                    self.begin_reflection(deps, fx);
                }
            }
            _ => {}
        }
        let _ = at;
    }

    fn start_episode(&mut self, i: usize, truncated: bool, deps: &SessionDeps, fx: &mut Vec<Effect>) {
        let poi = &deps.plan[i];
        let ids = EpisodeIds {
            approach: self.next_segment_id(),
            introduction: self.next_segment_id(),
            narration: self.next_segment_id(),
        };
        let ctx = deps.context(&self.prior_summary);
        let episode = compose_episode(
            poi,
            &ids,
            &SegmentRequest {
                id: ids.approach.clone(),
                seed: derive_seed(deps.seed, &format!("episode-{i}")),
                ctx: &ctx,
            },
            &deps.providers,
            &deps.style,
        );
        self.record.interacted.push(poi.candidate.id.clone());
        if let Some(image_ref) = &episode.introduction.image_ref {
            self.record.gallery.push(crate::journal::GalleryItem {
                poi_id: poi.candidate.id.clone(),
                image_ref: image_ref.clone(),
            });
        }
        self.prior_summary = episode_summary(poi);
        self.last_poi = Some(i);
        self.pending.clear();
        self.pending.push_back(episode.introduction);
        if !truncated {
            self.pending.push_back(episode.narration);
        }
        self.set_state(
            SessionState::InEpisode {
                poi: i,
                phase: EpisodePhase::Approach,
            },
            fx,
        );
        if truncated {
            fx.push(Effect::LogEntry(Note {
                code: NoteCode::EpisodeTruncated,
                message: "trigger crossed during conversation; approach and introduction only".into(),
                prompt_id: None,
                poi_id: Some(poi.candidate.id.clone()),
            }));
        }
        self.play(episode.approach, fx);
    }

    fn enter_conversation(&mut self, poi: usize, at: f64, deps: &SessionDeps, fx: &mut Vec<Effect>) {
        let n = deps.plan.len();
        let final_leg = poi + 1 >= n;
        let target = if final_leg {
            deps.route.length() - deps.config.arrival_margin
        } else {
            deps.plan[poi + 1].trigger_offset
        };
        let offset = self.max_offset.unwrap_or(0.0);
        if offset >= target {
            fx.push(Effect::LogEntry(Note {
                code: NoteCode::ConversationSkipped,
                message: "no distance left for prompts".into(),
                prompt_id: None,
                poi_id: Some(deps.plan[poi].candidate.id.clone()),
            }));
            self.finish_conversation(poi, at, deps, fx);
            return;
        }
        let budget = prompt_budget(target - offset, self.recent_speed(at, deps), &deps.config, final_leg);
        self.set_state(
            SessionState::Conversing {
                poi,
                prompts_remaining: budget,
                awaiting: Awaiting::Nothing,
            },
            fx,
        );
        self.ask_next(poi, deps, fx);
    }

    fn recent_speed(&self, at: f64, deps: &SessionDeps) -> f64 {
        let window: Vec<&(f64, f64)> = self
            .fixes
            .iter()
            .filter(|(t, _)| at - t <= deps.config.speed_window_s)
            .collect();
        if let (Some(first), Some(last)) = (window.first(), window.last()) {
            let dt = last.0 - first.0;
            if dt >= 1.0 {
                let v = (last.1 - first.1) / dt;
                if v > deps.config.min_moving_speed {
                    return v;
                }
            }
        }
        deps.config.fallback_speed
    }

    fn ask_next(&mut self, poi: usize, deps: &SessionDeps, fx: &mut Vec<Effect>) {
        let SessionState::Conversing {
            prompts_remaining, ..
        } = self.state
        else {
            return;
        };
        let slot = self.slot_counter;
        self.slot_counter += 1;
        let ctx_poi = &deps.plan[poi].candidate;
        let spec = PromptSpec {
            id: format!("p{slot}"),
            slot,
            poi: ctx_poi,
            theme: deps.theme,
            character: deps.character,
            strategy: deps.strategy_for_slot(slot),
            seed: derive_seed(deps.seed, &format!("prompt-{slot}")),
            style_preamble: &deps.style.preamble,
        };
        let prompt = match generate_prompt(&spec, deps.providers.text.as_ref()) {
            Ok(p) if deps.style.lint(&p.text).iter().all(|v| !v.is_hard()) => p,
            other => {
                let reason = match other {
                    Ok(_) => "style check failed".to_string(),
                    Err(e) => e.to_string(),
                };
                fx.push(Effect::LogEntry(Note {
                    code: NoteCode::PromptFallback,
                    message: reason,
                    prompt_id: Some(spec.id.clone()),
                    poi_id: Some(ctx_poi.id.clone()),
                }));
                fallback_prompt(&spec)
            }
        };
        self.state = SessionState::Conversing {
            poi,
            prompts_remaining: prompts_remaining.saturating_sub(1),
            awaiting: Awaiting::Answer,
        };
        self.hint_shown = false;
        self.current_prompt = Some(prompt.clone());
        fx.push(Effect::EmitPrompt(prompt));
    }

    fn after_prompt(&mut self, poi: usize, at: f64, deps: &SessionDeps, fx: &mut Vec<Effect>) {
        match self.state {
            SessionState::Conversing {
                prompts_remaining, ..
            } if prompts_remaining > 0 => {
                self.state = SessionState::Conversing {
                    poi,
                    prompts_remaining,
                    awaiting: Awaiting::Nothing,
                };
                self.ask_next(poi, deps, fx);
            }
            _ => self.finish_conversation(poi, at, deps, fx),
        }
    }

    fn finish_conversation(&mut self, poi: usize, at: f64, deps: &SessionDeps, fx: &mut Vec<Effect>) {
        self.set_state(SessionState::Cruising { next_poi: poi + 1 }, fx);
        if let (Some(prev), Some(next)) = (deps.plan.get(poi), deps.plan.get(poi + 1)) {
            let id = format!("s{}", self.segment_counter);
            let ctx = deps.context(&self.prior_summary);
            if let Some(seg) = compose_transition(
                prev,
                next,
                &SegmentRequest {
                    id,
                    seed: derive_seed(deps.seed, &format!("transition-{poi}")),
                    ctx: &ctx,
                },
                &deps.providers,
                &deps.style,
            ) {
                self.segment_counter += 1;
                self.play(seg, fx);
            }
        }
        self.advance(at, deps, fx);
    }

    fn drop_prompt(&mut self, reason: &str, fx: &mut Vec<Effect>) {
        if let Some(p) = self.current_prompt.take() {
            self.record.unanswered += 1;
            fx.push(Effect::LogEntry(Note {
                code: NoteCode::PromptUnanswered,
                message: reason.to_string(),
                prompt_id: Some(p.id),
                poi_id: Some(p.poi_id),
            }));
        }
    }

    fn emit_hint(&mut self, reason: HintReason, deps: &SessionDeps, fx: &mut Vec<Effect>) {
        let Some(prompt) = &self.current_prompt else {
            return;
        };
        let n = self.hint_counter;
        self.hint_counter += 1;
        self.hint_shown = true;
        let poi_name = deps
            .plan
            .iter()
            .find(|p| p.candidate.id == prompt.poi_id)
            .map_or_else(String::new, |p| p.candidate.name.clone());
        let request = ImageRequest {
            request_id: format!("{}-hint{n}", prompt.id),
            description: prompt.hint_image_spec.clone(),
            character: deps.character.display_name().to_string(),
            poi_name,
            seed: derive_seed(deps.seed, &format!("hint-{n}")),
        };
        match deps.providers.image.render(&request) {
            Ok(img) => fx.push(Effect::EmitHintImage(HintImage {
                prompt_id: prompt.id.clone(),
                image_ref: img.image_ref,
                reason,
            })),
            Err(e) => fx.push(Effect::LogEntry(Note {
                code: NoteCode::HintUnavailable,
                message: e.to_string(),
                prompt_id: Some(prompt.id.clone()),
                poi_id: Some(prompt.poi_id.clone()),
            })),
        }
    }

    fn answer_question(&mut self, question: &str, deps: &SessionDeps) -> QaAnswer {
        let n = self.qa_counter;
        self.qa_counter += 1;
        let poi = self.last_poi.map(|i| &deps.plan[i].candidate);
        let fact = poi
            .and_then(|p| deps.providers.knowledge.facts(p).ok())
            .and_then(|f| f.get(1).or(f.first()).map(|f| f.text.clone()))
            .unwrap_or_else(|| {
                "Many roads and places are named after people or stories from long ago.".to_string()
            });
        let mut vars = std::collections::BTreeMap::new();
        vars.insert("question".to_string(), question.to_string());
        vars.insert("fact".to_string(), fact.clone());
        vars.insert(
            "character".to_string(),
            deps.character.display_name().to_string(),
        );
        vars.insert(
            "poi_name".to_string(),
            poi.map_or("the road".to_string(), |p| p.name.clone()),
        );
        let request = TextRequest {
            request_id: format!("qa{n}"),
            role: TextRole::Answer,
            kind: deps.theme.label().to_string(),
            type_tag: poi.map_or("*".to_string(), |p| p.type_tag.to_lowercase()),
            vars,
            style_preamble: deps.style.preamble.clone(),
            seed: derive_seed(deps.seed, &format!("qa-{n}")),
        };
        let answer = compose_checked(deps.providers.text.as_ref(), &request, &deps.style)
            .unwrap_or_else(|_| format!("Good question! {fact}"));
        QaAnswer {
            question: question.to_string(),
            answer,
            poi_id: poi.map(|p| p.id.clone()),
        }
    }

    fn begin_reflection(&mut self, deps: &SessionDeps, fx: &mut Vec<Effect>) {
        self.pending.clear();
        self.current_prompt = None;
        let id = self.next_segment_id();
        let ctx = deps.context(&self.prior_summary);
        let (seg, summary) = compose_reflection(
            &self.record,
            &SegmentRequest {
                id,
                seed: derive_seed(deps.seed, "reflection"),
                ctx: &ctx,
            },
            &deps.providers,
            &deps.style,
        );
        self.summary = Some(summary);
        self.set_state(SessionState::Reflecting, fx);
        self.play(seg, fx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::poi::PoiCandidate;

    fn route(km: f64) -> Route {
        let a = GeoPoint::new(30.0, 120.0).unwrap();
        Route::new(vec![a, a.destination(90.0, km * 1000.0)]).unwrap()
    }

    fn sel(id: &str, ty: &str, offset: f64) -> SelectedPoi {
        SelectedPoi {
            candidate: PoiCandidate {
                id: id.into(),
                name: format!("{id} place"),
                point: GeoPoint::new(30.0, 120.0).unwrap(),
                type_tag: ty.into(),
                description: String::new(),
            },
            offset,
            trigger_offset: offset - 100.0,
        }
    }

    fn deps(plan: Vec<SelectedPoi>) -> SessionDeps {
        SessionDeps::new(
            route(10.0),
            plan,
            StoryTheme::Nature,
            Character::Rabbit,
            7,
            Weather::Clear,
            1200.0,
            OrchestratorConfig::default(),
            Providers::mock(),
        )
    }

    fn pos(offset: f64) -> SessionEvent {
        SessionEvent::PositionUpdated {
            position: RoutePosition {
                offset,
                cross_track: 0.0,
            },
        }
    }

    struct Drive {
        m: SessionMachine,
        d: SessionDeps,
        t: f64,
    }

    impl Drive {
        fn new(plan: Vec<SelectedPoi>) -> Self {
            Self {
                m: SessionMachine::new(),
                d: deps(plan),
                t: 0.0,
            }
        }
        fn send(&mut self, e: SessionEvent) -> Result<Vec<Effect>, OrchestratorError> {
            self.t += 1.0;
            let (m, fx) = self.m.handle_event(&TimedEvent { at: self.t, event: e }, &self.d)?;
            self.m = m;
            Ok(fx)
        }
        fn finish_playing(&mut self) -> Vec<Effect> {
            let id = self.m.playing.clone().expect("segment playing");
            self.send(SessionEvent::SegmentFinished { segment_id: id }).unwrap()
        }
        fn prompt_id(&self) -> String {
            self.m.current_prompt.as_ref().unwrap().id.clone()
        }
    }

    fn kinds(fx: &[Effect]) -> Vec<&'static str> {
        fx.iter().map(Effect::kind).collect()
    }

    #[test]
    fn budget_examples() {
        let c = OrchestratorConfig::default();
        assert_eq!(prompt_budget(2000.0, 10.0, &c, false), 3);
        assert_eq!(prompt_budget(500.0, 15.0, &c, false), 1);
        assert_eq!(prompt_budget(2700.0, 0.0, &c, false), 3);
        assert_eq!(prompt_budget(2700.0, 0.0, &c, true), 5);
        assert_eq!(prompt_budget(0.0, 10.0, &c, true), 1);
    }

    #[test]
    fn help_detection() {
        let c = OrchestratorConfig::default();
        assert!(detect_help_request("I have no idea.", &c));
        assert!(detect_help_request("Hmm, I DON'T KNOW", &c));
        assert!(detect_help_request("help me please", &c));
        assert!(!detect_help_request("A dragon!", &c));
        assert!(!detect_help_request("", &c));
        assert!(!detect_help_request("a helpful owl", &c));
    }

    #[test]
    fn event_envelope_roundtrip() {
        for e in [
            SessionEvent::Start,
            pos(12.5),
            SessionEvent::AnswerReceived {
                prompt_id: "p0".into(),
                transcript: "a tree".into(),
            },
            SessionEvent::HintRequested,
        ] {
            let te = TimedEvent { at: 3.5, event: e };
            let s = serde_json::to_string(&te).unwrap();
            assert_eq!(serde_json::from_str::<TimedEvent>(&s).unwrap(), te, "{s}");
        }
    }

    #[test]
    fn approach_fires_at_trigger() {
        let mut d = Drive::new(vec![sel("a", "park", 1500.0), sel("b", "museum", 5000.0)]);
        d.send(SessionEvent::Start).unwrap();
        d.finish_playing();
        assert_eq!(d.m.state, SessionState::Cruising { next_poi: 0 });
        assert!(d.send(pos(1395.0)).unwrap().is_empty());
        let fx = d.send(pos(1405.0)).unwrap();
        assert_eq!(kinds(&fx), ["state_change", "segment"]);
        assert_eq!(
            d.m.state,
            SessionState::InEpisode {
                poi: 0,
                phase: EpisodePhase::Approach
            }
        );
        match &fx[1] {
            Effect::EmitSegment(s) => assert_eq!(s.kind, SegmentKind::Approach),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn episode_then_conversation_and_help() {
        let mut d = Drive::new(vec![sel("a", "park", 1500.0), sel("b", "museum", 5000.0)]);
        d.send(SessionEvent::Start).unwrap();
        d.finish_playing();
        d.send(pos(1450.0)).unwrap();
        let intro = d.finish_playing();
        assert!(matches!(&intro[0], Effect::EmitSegment(s) if s.kind == SegmentKind::Introduction));
        let narr = d.finish_playing();
        assert!(matches!(&narr[0], Effect::EmitSegment(s) if s.kind == SegmentKind::Narration));
        let fx = d.finish_playing();
        assert_eq!(kinds(&fx), ["state_change", "prompt"]);
        // 3,450 m to the next trigger at the fallback 8 m/s gives 9 -> 3.
        assert!(matches!(
            d.m.state,
            SessionState::Conversing {
                prompts_remaining: 2,
                awaiting: Awaiting::Answer,
                ..
            }
        ));
        let pid = d.prompt_id();
        let before = d.m.state.clone();
        let fx = d
            .send(SessionEvent::AnswerReceived {
                prompt_id: pid.clone(),
                transcript: "I have no idea".into(),
            })
            .unwrap();
        assert_eq!(kinds(&fx), ["hint_image"]);
        assert_eq!(d.m.state, before);
        let fx = d
            .send(SessionEvent::AnswerReceived {
                prompt_id: pid,
                transcript: "A squirrel".into(),
            })
            .unwrap();
        assert_eq!(kinds(&fx), ["answer_ack", "prompt"]);
        assert_eq!(d.m.record.answered.len(), 1);
    }

    #[test]
    fn silence_twice_drops_prompt() {
        let mut d = Drive::new(vec![sel("a", "park", 1500.0)]);
        d.send(SessionEvent::Start).unwrap();
        d.finish_playing();
        d.send(pos(1450.0)).unwrap();
        d.finish_playing();
        d.finish_playing();
        d.finish_playing();
        let pid = d.prompt_id();
        let fx = d.send(SessionEvent::SilenceTimeout { prompt_id: pid.clone() }).unwrap();
        assert_eq!(kinds(&fx), ["hint_image"]);
        let fx = d.send(SessionEvent::SilenceTimeout { prompt_id: pid.clone() }).unwrap();
        assert_eq!(kinds(&fx)[0], "note");
        assert_eq!(d.m.record.unanswered, 1);
        assert_ne!(d.m.current_prompt.as_ref().map(|p| p.id.clone()), Some(pid.clone()));
        assert!(matches!(
            d.send(SessionEvent::SilenceTimeout { prompt_id: pid }),
            Err(OrchestratorError::StateMismatch { .. })
        ));
    }

    #[test]
    fn crossing_next_trigger_truncates() {
        let mut d = Drive::new(vec![sel("a", "park", 1500.0), sel("b", "museum", 2500.0)]);
        d.send(SessionEvent::Start).unwrap();
        d.finish_playing();
        d.send(pos(1450.0)).unwrap();
        d.finish_playing();
        d.finish_playing();
        d.finish_playing();
        assert_eq!(d.m.state.name(), "conversing");
        let fx = d.send(pos(2405.0)).unwrap();
        assert_eq!(kinds(&fx), ["note", "state_change", "note", "segment"]);
        d.finish_playing();
        let fx = d.finish_playing();
        // No narration after a truncated episode.
        assert_eq!(kinds(&fx), ["state_change", "prompt"]);
        assert_eq!(d.m.record.unanswered, 1);
    }

    #[test]
    fn child_question_while_cruising() {
        let mut d = Drive::new(vec![sel("su-causeway", "causeway", 1500.0)]);
        d.send(SessionEvent::Start).unwrap();
        d.finish_playing();
        let fx = d
            .send(SessionEvent::ChildQuestion {
                transcript: "Why is this road called that?".into(),
            })
            .unwrap();
        assert_eq!(kinds(&fx), ["qa_answer"]);
        assert!(d.send(SessionEvent::ChildQuestion { transcript: " ".into() }).is_err());
    }

    #[test]
    fn reflection_and_terminal_state() {
        let mut d = Drive::new(vec![]);
        d.send(SessionEvent::Start).unwrap();
        d.finish_playing();
        let fx = d.send(pos(9850.0)).unwrap();
        assert_eq!(kinds(&fx), ["state_change", "segment"]);
        assert_eq!(d.m.state, SessionState::Reflecting);
        let fx = d.finish_playing();
        assert_eq!(kinds(&fx), ["state_change", "reflection"]);
        assert_eq!(d.m.state, SessionState::Completed);
        let before = d.m.clone();
        assert_eq!(d.send(pos(9900.0)), Err(OrchestratorError::Terminal));
        assert_eq!(d.m, before);
    }

    #[test]
    fn out_of_order_position_dropped() {
        let mut d = Drive::new(vec![sel("a", "park", 5000.0)]);
        d.send(SessionEvent::Start).unwrap();
        d.finish_playing();
        d.send(pos(2000.0)).unwrap();
        let fx = d.send(pos(1900.0)).unwrap();
        assert_eq!(kinds(&fx), ["note"]);
        assert!(d.send(pos(1980.0)).unwrap().is_empty());
    }

    #[test]
    fn mismatches_leave_state_unchanged() {
        let mut d = Drive::new(vec![sel("a", "park", 5000.0)]);
        assert!(matches!(d.send(pos(1.0)), Err(OrchestratorError::StateMismatch { .. })));
        d.send(SessionEvent::Start).unwrap();
        let before = d.m.clone();
        assert!(d.send(SessionEvent::HintRequested).is_err());
        assert!(d
            .send(SessionEvent::SegmentFinished { segment_id: "nope".into() })
            .is_err());
        assert_eq!(d.m, before);
        let ev = TimedEvent { at: 0.0, event: pos(10.0) };
        assert!(matches!(
            d.m.handle_event(&ev, &d.d),
            Err(OrchestratorError::NonMonotonic { .. })
        ));
    }

    #[test]
    fn stream_end_goes_to_reflection() {
        let mut d = Drive::new(vec![sel("a", "park", 5000.0)]);
        d.send(SessionEvent::Start).unwrap();
        let fx = d.send(SessionEvent::PositionStreamEnded).unwrap();
        assert_eq!(kinds(&fx), ["state_change", "segment"]);
        match &fx[0] {
            Effect::StateChanged(c) => assert_eq!((c.from.as_str(), c.to.as_str()), ("orienting", "reflecting")),
            other => panic!("{other:?}"),
        }
    }
}
