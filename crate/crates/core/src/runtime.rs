//! Drives a `SessionMachine`: journals every accepted event and effect and
//! keeps the timers that stand in for speech playback and child silence.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::geo::Route;
use crate::journal::{JournalError, LogEntry, LogSink};
use crate::orchestrator::{
    Effect, NoteCode, OrchestratorError, SessionDeps, SessionMachine, SessionState, TimedEvent,
};
use crate::simulator::{AnswerScript, ScriptAction, ScriptLine, HELP_TRANSCRIPT};
use crate::orchestrator::SessionEvent;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("event rejected: {0}")]
    Rejected(#[from] OrchestratorError),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeTiming {
    /// Seconds the scripted child waits before acting.
    pub response_delay_s: f64,
    pub silence_timeout_s: f64,
}

impl Default for RuntimeTiming {
    fn default() -> Self {
        Self {
            response_delay_s: 4.0,
            silence_timeout_s: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TimerKind {
    Session(SessionEvent),
    ChildAction { prompt_id: String },
}

#[derive(Debug, Clone)]
struct Timer {
    at: f64,
    order: u64,
    kind: TimerKind,
}

impl Timer {
    fn prompt_id(&self) -> Option<&str> {
        match &self.kind {
            TimerKind::Session(SessionEvent::SilenceTimeout { prompt_id }) => Some(prompt_id),
            TimerKind::ChildAction { prompt_id } => Some(prompt_id),
            _ => None,
        }
    }
}

pub struct SessionRuntime {
    machine: SessionMachine,
    deps: Arc<SessionDeps>,
    sink: Box<dyn LogSink>,
    next_seq: u64,
    timers: Vec<Timer>,
    timer_order: u64,
    script: Option<AnswerScript>,
    actions: BTreeMap<String, VecDeque<ScriptLine>>,
    timing: RuntimeTiming,
}

impl SessionRuntime {
    pub fn new(deps: Arc<SessionDeps>, sink: Box<dyn LogSink>) -> Self {
        Self {
            machine: SessionMachine::new(),
            deps,
            sink,
            next_seq: 0,
            timers: Vec::new(),
            timer_order: 0,
            script: None,
            actions: BTreeMap::new(),
            timing: RuntimeTiming::default(),
        }
    }

    pub fn with_script(mut self, script: AnswerScript) -> Self {
        self.script = Some(script);
        self
    }

    pub fn with_timing(mut self, timing: RuntimeTiming) -> Self {
        self.timing = timing;
        self
    }

    pub fn machine(&self) -> &SessionMachine {
        &self.machine
    }

    pub fn deps(&self) -> &SessionDeps {
        &self.deps
    }

    pub fn route(&self) -> &Route {
        &self.deps.route
    }

    pub fn state(&self) -> &SessionState {
        self.machine.state()
    }

    pub fn state_name(&self) -> &'static str {
        self.machine.state().name()
    }

    pub fn is_completed(&self) -> bool {
        *self.machine.state() == SessionState::Completed
    }

    pub fn last_time(&self) -> f64 {
        self.machine.last_time().unwrap_or(0.0)
    }

    /// Runs one event through the machine. On rejection nothing is logged
    /// and the session is unchanged.
    pub fn apply(&mut self, at: f64, event: SessionEvent) -> Result<Vec<LogEntry>, RuntimeError> {
        let te = TimedEvent { at, event };
        let (next, effects) = self.machine.handle_event(&te, &self.deps)?;
        let mut entries = Vec::with_capacity(effects.len() + 1);
        entries.push(LogEntry::event(self.next_seq, &te));
        for (i, e) in effects.iter().enumerate() {
            entries.push(LogEntry::effect(self.next_seq + 1 + i as u64, at, e));
        }
        for e in &entries {
            self.sink.append(e)?;
        }
        self.next_seq += entries.len() as u64;
        self.machine = next;
        for e in &effects {
            self.schedule(at, e);
        }
        Ok(entries)
    }

    fn push_timer(&mut self, at: f64, kind: TimerKind) {
        self.timers.push(Timer {
            at,
            order: self.timer_order,
            kind,
        });
        self.timer_order += 1;
    }

    fn cancel_prompt_timers(&mut self, prompt_id: &str) {
        self.timers.retain(|t| t.prompt_id() != Some(prompt_id));
    }

    fn speech_seconds(&self, text: &str) -> f64 {
        match self.deps.providers.speech.synthesize(text) {
            Ok(s) if s.duration_s.is_finite() && s.duration_s >= 0.0 => s.duration_s,
            _ => 1.0 + 0.4 * text.split_whitespace().count() as f64,
        }
    }

    fn schedule(&mut self, at: f64, effect: &Effect) {
        match effect {
            Effect::EmitSegment(seg) => {
                let end = at + self.speech_seconds(&seg.text);
                self.push_timer(
                    end,
                    TimerKind::Session(SessionEvent::SegmentFinished {
                        segment_id: seg.id.clone(),
                    }),
                );
            }
            Effect::EmitPrompt(p) => {
                let end = at + self.speech_seconds(&p.text);
                self.push_timer(
                    end + self.timing.silence_timeout_s,
                    TimerKind::Session(SessionEvent::SilenceTimeout {
                        prompt_id: p.id.clone(),
                    }),
                );
                if let Some(script) = &self.script {
                    let queue: VecDeque<ScriptLine> = script.actions_for(p.slot).into();
                    if !queue.is_empty() {
                        self.actions.insert(p.id.clone(), queue);
                        self.push_timer(
                            end + self.timing.response_delay_s,
                            TimerKind::ChildAction {
                                prompt_id: p.id.clone(),
                            },
                        );
                    }
                }
            }
            Effect::EmitHintImage(h) => {
                self.cancel_prompt_timers(&h.prompt_id);
                self.push_timer(
                    at + self.timing.silence_timeout_s,
                    TimerKind::Session(SessionEvent::SilenceTimeout {
                        prompt_id: h.prompt_id.clone(),
                    }),
                );
                if self.actions.get(&h.prompt_id).is_some_and(|q| !q.is_empty()) {
                    self.push_timer(
                        at + self.timing.response_delay_s,
                        TimerKind::ChildAction {
                            prompt_id: h.prompt_id.clone(),
                        },
                    );
                }
            }
            Effect::AcknowledgeAnswer(a) => {
                self.cancel_prompt_timers(&a.prompt_id);
                self.actions.remove(&a.prompt_id);
            }
            Effect::LogEntry(n) if n.code == NoteCode::PromptUnanswered => {
                if let Some(pid) = &n.prompt_id {
                    self.cancel_prompt_timers(pid);
                    self.actions.remove(pid);
                }
            }
            _ => {}
        }
    }

    fn earliest(&self) -> Option<usize> {
        self.timers
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.at.total_cmp(&b.at).then(a.order.cmp(&b.order)))
            .map(|(i, _)| i)
    }

    pub fn next_timer_at(&self) -> Option<f64> {
        self.earliest().map(|i| self.timers[i].at)
    }

    /// Removes the earliest timer and turns it into a session event. A
    /// stale or silent child action is consumed without producing one.
    pub fn pop_timer(&mut self) -> Option<(f64, SessionEvent)> {
        let i = self.earliest()?;
        let timer = self.timers.remove(i);
        let prompt_id = match timer.kind {
            TimerKind::Session(ev) => return Some((timer.at, ev)),
            TimerKind::ChildAction { prompt_id } => prompt_id,
        };
        let current = self.machine.current_prompt().map(|p| p.id.as_str());
        if current != Some(prompt_id.as_str()) {
            return None;
        }
        let line = self.actions.get_mut(&prompt_id).and_then(VecDeque::pop_front)?;
        let event = match line.action {
            ScriptAction::Silence => return None,
            ScriptAction::Answer => SessionEvent::AnswerReceived {
                prompt_id,
                transcript: line.text,
            },
            ScriptAction::Help => SessionEvent::AnswerReceived {
                prompt_id,
                transcript: HELP_TRANSCRIPT.to_string(),
            },
            ScriptAction::Ask => {
                self.push_timer(
                    timer.at + self.timing.response_delay_s,
                    TimerKind::ChildAction {
                        prompt_id: prompt_id.clone(),
                    },
                );
                SessionEvent::ChildQuestion {
                    transcript: line.text,
                }
            }
        };
        Some((timer.at, event))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GeoPoint, RoutePosition};
    use crate::journal::MemoryLog;
    use crate::orchestrator::OrchestratorConfig;
    use crate::poi::{PoiCandidate, SelectedPoi};
    use crate::providers::{Providers, Weather};
    use crate::story::{Character, StoryTheme};
    use std::sync::Mutex;

    #[derive(Clone, Default)]
    struct Shared(Arc<Mutex<Vec<LogEntry>>>);

    impl LogSink for Shared {
        fn append(&mut self, entry: &LogEntry) -> Result<(), JournalError> {
            self.0.lock().unwrap().push(entry.clone());
            Ok(())
        }
    }

    fn deps() -> Arc<SessionDeps> {
        let a = GeoPoint::new(30.0, 120.0).unwrap();
        let route = Route::new(vec![a, a.destination(90.0, 6000.0)]).unwrap();
        let plan = vec![SelectedPoi {
            candidate: PoiCandidate {
                id: "park".into(),
                name: "Maple Park".into(),
                point: a,
                type_tag: "park".into(),
                description: String::new(),
            },
            offset: 1000.0,
            trigger_offset: 900.0,
        }];
        Arc::new(SessionDeps::new(
            route,
            plan,
            StoryTheme::Nature,
            Character::Dog,
            3,
            Weather::Clear,
            600.0,
            OrchestratorConfig::default(),
            Providers::mock(),
        ))
    }

    fn pos(offset: f64) -> SessionEvent {
        SessionEvent::PositionUpdated {
            position: RoutePosition {
                offset,
                cross_track: 0.0,
            },
        }
    }

    #[test]
    fn logs_event_then_effects_with_contiguous_seq() {
        let log = Shared::default();
        let mut rt = SessionRuntime::new(deps(), Box::new(log.clone()));
        let out = rt.apply(0.0, SessionEvent::Start).unwrap();
        assert_eq!(out[0].kind, "event");
        assert!(rt.apply(1.0, SessionEvent::HintRequested).is_err());
        let entries = log.0.lock().unwrap().clone();
        assert_eq!(entries.len(), out.len());
        for (i, e) in entries.iter().enumerate() {
            assert_eq!(e.seq, i as u64);
        }
        assert!(rt.next_timer_at().unwrap() > 0.0);
    }

    #[test]
    fn scripted_help_then_answer() {
        let script = AnswerScript::parse(
            "{\"slot\":0,\"action\":\"help\"}\n{\"slot\":0,\"action\":\"answer\",\"text\":\"a squirrel\"}",
        )
        .unwrap();
        let log = Shared::default();
        let mut rt = SessionRuntime::new(deps(), Box::new(log.clone())).with_script(script);
        rt.apply(0.0, SessionEvent::Start).unwrap();
        let (t, e) = rt.pop_timer().unwrap();
        rt.apply(t, e).unwrap();
        rt.apply(t + 1.0, pos(950.0)).unwrap();
        let mut kinds = Vec::new();
        for _ in 0..6 {
            let (t, e) = rt.pop_timer().unwrap();
            for entry in rt.apply(t, e).unwrap() {
                kinds.push(entry.kind);
            }
        }
        assert!(kinds.contains(&"prompt".to_string()));
        assert!(kinds.contains(&"hint_image".to_string()));
        assert!(kinds.contains(&"answer_ack".to_string()));
        let _ = MemoryLog::default();
    }

    #[test]
    fn silent_child_action_does_not_pull_later_timers_forward() {
        let script = AnswerScript::parse("{\"slot\":0,\"action\":\"silence\"}").unwrap();
        let mut rt = SessionRuntime::new(deps(), Box::new(Shared::default())).with_script(script);
        rt.apply(0.0, SessionEvent::Start).unwrap();
        let (t, e) = rt.pop_timer().unwrap();
        rt.apply(t, e).unwrap();
        rt.apply(t + 1.0, pos(950.0)).unwrap();
        while rt.machine().current_prompt().is_none() {
            let (t, e) = rt.pop_timer().unwrap();
            rt.apply(t, e).unwrap();
        }
        let action_at = rt.next_timer_at().unwrap();
        assert_eq!(rt.pop_timer(), None);
        let timeout_at = rt.next_timer_at().unwrap();
        assert!(timeout_at > action_at);
        let (t, e) = rt.pop_timer().unwrap();
        assert_eq!(t, timeout_at);
        assert!(matches!(e, SessionEvent::SilenceTimeout { .. }));
    }
}
