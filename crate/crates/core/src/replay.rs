//! Re-runs a journal's events through a fresh machine and checks that every
//! logged effect is reproduced byte for byte.

use thiserror::Error;

use crate::journal::{JourneyLog, LogEntry};
use crate::orchestrator::{OrchestratorError, SessionDeps, SessionMachine, TimedEvent};
use crate::providers::Providers;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("entry {seq}: expected an event entry, found {kind}")]
    ExpectedEvent { seq: u64, kind: String },
    #[error("entry {seq}: event payload does not parse: {reason}")]
    Malformed { seq: u64, reason: String },
    #[error("entry {seq}: event rejected on replay: {source}")]
    Rejected {
        seq: u64,
        source: OrchestratorError,
    },
    #[error("entry {seq} differs:\n  logged:   {logged}\n  replayed: {replayed}")]
    Mismatch {
        seq: u64,
        logged: String,
        replayed: String,
    },
    #[error("log ends before effect {seq} of the last event")]
    Truncated { seq: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub events: usize,
    pub effects: usize,
    pub final_state: String,
}

pub fn replay(log: &JourneyLog, providers: Providers) -> Result<ReplayReport, ReplayError> {
    let deps = SessionDeps::from_header(&log.header, providers);
    let mut machine = SessionMachine::new();
    let mut report = ReplayReport {
        events: 0,
        effects: 0,
        final_state: String::new(),
    };
    let mut i = 0;
    while i < log.entries.len() {
        let entry = &log.entries[i];
        if entry.kind != "event" {
            return Err(ReplayError::ExpectedEvent {
                seq: entry.seq,
                kind: entry.kind.clone(),
            });
        }
        let te: TimedEvent =
            serde_json::from_value(entry.payload.clone()).map_err(|e| ReplayError::Malformed {
                seq: entry.seq,
                reason: e.to_string(),
            })?;
        let (next, effects) = machine
            .handle_event(&te, &deps)
            .map_err(|source| ReplayError::Rejected {
                seq: entry.seq,
                source,
            })?;
        let replayed_event = LogEntry::event(entry.seq, &te).to_line();
        if replayed_event != entry.to_line() {
            return Err(ReplayError::Mismatch {
                seq: entry.seq,
                logged: entry.to_line(),
                replayed: replayed_event,
            });
        }
        for (k, effect) in effects.iter().enumerate() {
            let seq = entry.seq + 1 + k as u64;
            let replayed = LogEntry::effect(seq, te.at, effect).to_line();
            let Some(logged) = log.entries.get(i + 1 + k) else {
                return Err(ReplayError::Truncated { seq });
            };
            if logged.to_line() != replayed {
                return Err(ReplayError::Mismatch {
                    seq,
                    logged: logged.to_line(),
                    replayed,
                });
            }
        }
        if let Some(extra) = log.entries.get(i + 1 + effects.len()) {
            if extra.kind != "event" {
                return Err(ReplayError::Mismatch {
                    seq: extra.seq,
                    logged: extra.to_line(),
                    replayed: "<nothing>".into(),
                });
            }
        }
        report.events += 1;
        report.effects += effects.len();
        i += 1 + effects.len();
        machine = next;
    }
    report.final_state = machine.state().name().to_string();
    Ok(report)
}
