//! Deterministic drive simulation: speed profiles, GPS traces, clocks,
//! scripted child answers and playback into a session.

use std::time::Instant;

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoPoint, Route};
use crate::orchestrator::SessionEvent;
use crate::runtime::{RuntimeError, SessionRuntime};

pub const MAX_JITTER_M: f64 = 5.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cruise speed must be positive, got {0}")]
    Speed(f64),
    #[error("sample rate must be positive, got {0}")]
    SampleRate(f64),
    #[error("stop at {offset} m is outside the route (length {length} m)")]
    StopOutsideRoute { offset: f64, length: f64 },
    #[error("stop duration must be non-negative, got {0}")]
    StopDuration(f64),
    #[error("session already completed")]
    SessionCompleted,
    #[error("session must be created or orienting, found {0}")]
    SessionState(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub offset: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub cruise_speed: f64,
    #[serde(default)]
    pub stops: Vec<Stop>,
    #[serde(default)]
    pub jitter_seed: Option<u64>,
}

impl SpeedProfile {
    pub fn constant(cruise_speed: f64) -> Self {
        Self {
            cruise_speed,
            stops: Vec::new(),
            jitter_seed: None,
        }
    }

    pub fn validate(&self, route_length: f64) -> Result<(), SimError> {
        if !(self.cruise_speed > 0.0 && self.cruise_speed.is_finite()) {
            return Err(SimError::Speed(self.cruise_speed));
        }
        for s in &self.stops {
            if !(s.duration_s >= 0.0) {
                return Err(SimError::StopDuration(s.duration_s));
            }
            if !(s.offset >= 0.0 && s.offset <= route_length) {
                return Err(SimError::StopOutsideRoute {
                    offset: s.offset,
                    length: route_length,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub point: GeoPoint,
    pub offset: f64,
}

/// Samples the drive at `sample_hz`. A stop of `d` seconds holds the vehicle
/// at the stop offset for `round(d * sample_hz)` consecutive samples.
pub fn generate_trace(
    route: &Route,
    profile: &SpeedProfile,
    sample_hz: f64,
) -> Result<Vec<TracePoint>, SimError> {
    if !(sample_hz > 0.0 && sample_hz.is_finite()) {
        return Err(SimError::SampleRate(sample_hz));
    }
    let length = route.length();
    profile.validate(length)?;
    let mut stops = profile.stops.clone();
    stops.sort_by(|a, b| a.offset.total_cmp(&b.offset));
    let dt = 1.0 / sample_hz;
    let step = profile.cruise_speed * dt;
    let mut rng = profile.jitter_seed.map(ChaCha8Rng::seed_from_u64);

    let mut offsets = Vec::new();
    let mut offset = 0.0f64;
    let mut next_stop = 0;
    loop {
        let mut hold = 0usize;
        while next_stop < stops.len() && stops[next_stop].offset <= offset {
            hold += (stops[next_stop].duration_s * sample_hz).round() as usize;
            next_stop += 1;
        }
        offsets.push(offset);
        for _ in 1..hold.max(1) {
            offsets.push(offset);
        }
        if offset >= length {
            break;
        }
        let mut next = offset + step;
        if next_stop < stops.len() && next > stops[next_stop].offset {
            next = stops[next_stop].offset;
        }
        offset = next.min(length);
    }

    Ok(offsets
        .into_iter()
        .enumerate()
        .map(|(i, off)| {
            let mut point = route.point_at(off);
            if let Some(rng) = rng.as_mut() {
                let lateral: f64 = rng.random_range(-MAX_JITTER_M..=MAX_JITTER_M);
                point = displace(route, off, point, lateral);
            }
            TracePoint {
                t: i as f64 * dt,
                point,
                offset: off,
            }
        })
        .collect())
}

fn displace(route: &Route, offset: f64, p: GeoPoint, lateral: f64) -> GeoPoint {
    let (a, b) = if offset + 1.0 <= route.length() {
        (p, route.point_at(offset + 1.0))
    } else {
        (route.point_at((offset - 1.0).max(0.0)), p)
    };
    if a == b {
        return p;
    }
    let bearing = a.bearing_to(&b) + 90.0;
    p.destination(bearing, lateral)
}

/// Injected notion of time for playback.
pub trait Clock: Send {
    /// Seconds since session start.
    fn now(&self) -> f64;
    /// Blocks (realtime) or jumps (virtual) until `t`.
    fn advance_to(&mut self, t: f64);
    fn wall_time(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone)]
pub struct VirtualClock {
    now: f64,
    epoch: DateTime<Utc>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self {
            now: 0.0,
            epoch: Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
        }
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        self.now
    }
    fn advance_to(&mut self, t: f64) {
        if t > self.now {
            self.now = t;
        }
    }
    fn wall_time(&self) -> DateTime<Utc> {
        self.epoch + chrono::Duration::milliseconds((self.now * 1000.0) as i64)
    }
}

/// Wall-clock time scaled by `speedup` (2.0 runs twice as fast).
#[derive(Debug, Clone)]
pub struct RealtimeClock {
    start: Instant,
    speedup: f64,
}

impl RealtimeClock {
    pub fn new(speedup: f64) -> Self {
        Self {
            start: Instant::now(),
            speedup: if speedup > 0.0 { speedup } else { 1.0 },
        }
    }
}

impl Clock for RealtimeClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * self.speedup
    }
    fn advance_to(&mut self, t: f64) {
        let wait = (t - self.now()) / self.speedup;
        if wait > 0.0 {
            std::thread::sleep(std::time::Duration::from_secs_f64(wait));
        }
    }
    fn wall_time(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScriptError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: answer needs non-empty text")]
    EmptyAnswer { line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptAction {
    Answer,
    Help,
    Silence,
    Ask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptLine {
    pub slot: u32,
    pub action: ScriptAction,
    #[serde(default)]
    pub text: String,
}

/// What the simulated child does for each prompt slot, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnswerScript {
    lines: Vec<ScriptLine>,
}

pub const HELP_TRANSCRIPT: &str = "I have no idea.";

impl AnswerScript {
    pub fn parse(src: &str) -> Result<Self, ScriptError> {
        let mut lines = Vec::new();
        for (i, raw) in src.lines().enumerate() {
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let line: ScriptLine = serde_json::from_str(raw).map_err(|e| ScriptError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if matches!(line.action, ScriptAction::Answer | ScriptAction::Ask)
                && line.text.trim().is_empty()
            {
                return Err(ScriptError::EmptyAnswer { line: i + 1 });
            }
            lines.push(line);
        }
        Ok(Self { lines })
    }

    pub fn from_lines(lines: Vec<ScriptLine>) -> Self {
        Self { lines }
    }

    pub fn actions_for(&self, slot: u32) -> Vec<ScriptLine> {
        self.lines.iter().filter(|l| l.slot == slot).cloned().collect()
    }

    pub fn lines(&self) -> &[ScriptLine] {
        &self.lines
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PlaybackReport {
    pub positions: usize,
    pub timers_fired: usize,
    pub rejected: usize,
    pub end_time: f64,
}

/// Step-wise playback of a trace plus the runtime's timers. Positions go
/// before timers due at the same instant; the stream end follows the last
/// position.
#[derive(Debug, Clone)]
pub struct Playback {
    trace: Vec<TracePoint>,
    idx: usize,
    started: bool,
    ended: bool,
    report: PlaybackReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Next {
    Start(f64),
    Position(f64),
    StreamEnd(f64),
    Timer(f64),
}

impl Playback {
    pub fn new(trace: Vec<TracePoint>, runtime: &SessionRuntime) -> Result<Self, SimError> {
        let started = match runtime.state_name() {
            "completed" => return Err(SimError::SessionCompleted),
            "created" => false,
            "orienting" => true,
            other => return Err(SimError::SessionState(other.to_string())),
        };
        Ok(Self {
            trace,
            idx: 0,
            started,
            ended: false,
            report: PlaybackReport::default(),
        })
    }

    fn next(&self, runtime: &SessionRuntime) -> Option<Next> {
        if runtime.is_completed() {
            return None;
        }
        let start_t = self.trace.first().map_or(0.0, |p| p.t);
        if !self.started {
            return Some(Next::Start(start_t));
        }
        let next_timer = runtime.next_timer_at();
        if let Some(p) = self.trace.get(self.idx) {
            return Some(match next_timer {
                Some(t) if t < p.t => Next::Timer(t),
                _ => Next::Position(p.t),
            });
        }
        if !self.ended {
            let t = self.trace.last().map_or(start_t, |p| p.t).max(runtime.last_time());
            if next_timer.is_none_or(|nt| nt > t) {
                return Some(Next::StreamEnd(t));
            }
        }
        next_timer.map(Next::Timer)
    }

    /// Session time of the next step, or None when playback is finished.
    pub fn next_at(&self, runtime: &SessionRuntime) -> Option<f64> {
        self.next(runtime).map(|n| match n {
            Next::Start(t) | Next::Position(t) | Next::StreamEnd(t) | Next::Timer(t) => t,
        })
    }

    /// Performs one step. Returns false when there was nothing left to do.
    pub fn step(&mut self, runtime: &mut SessionRuntime) -> Result<bool, SimError> {
        let Some(next) = self.next(runtime) else {
            return Ok(false);
        };
        let rejected = match next {
            Next::Start(t) => {
                self.started = true;
                runtime.apply(t, SessionEvent::Start)?;
                false
            }
            Next::Position(t) => {
                let position = runtime.route().project(&self.trace[self.idx].point);
                self.idx += 1;
                self.report.positions += 1;
                offer(runtime, t, SessionEvent::PositionUpdated { position })?
            }
            Next::StreamEnd(t) => {
                self.ended = true;
                offer(runtime, t, SessionEvent::PositionStreamEnded)?
            }
            Next::Timer(_) => match runtime.pop_timer() {
                Some((at, event)) => {
                    self.report.timers_fired += 1;
                    offer(runtime, at, event)?
                }
                None => false,
            },
        };
        if rejected {
            self.report.rejected += 1;
        }
        self.report.end_time = runtime.last_time();
        Ok(true)
    }

    pub fn report(&self) -> &PlaybackReport {
        &self.report
    }
}

/// Feeds the trace and the runtime's timers into the session in time order.
pub fn playback(
    trace: &[TracePoint],
    runtime: &mut SessionRuntime,
    clock: &mut dyn Clock,
) -> Result<PlaybackReport, SimError> {
    let mut pb = Playback::new(trace.to_vec(), runtime)?;
    while let Some(t) = pb.next_at(runtime) {
        clock.advance_to(t);
        pb.step(runtime)?;
    }
    let mut report = pb.report().clone();
    report.end_time = runtime.last_time();
    Ok(report)
}

/// Applies an event; returns true when the machine rejected it as stale.
fn offer(runtime: &mut SessionRuntime, at: f64, event: SessionEvent) -> Result<bool, SimError> {
    match runtime.apply(at, event) {
        Ok(_) => Ok(false),
        Err(RuntimeError::Rejected(_)) => Ok(true),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(len_m: f64) -> Route {
        let deg = len_m / (std::f64::consts::PI * 6_371_000.0 / 180.0);
        Route::new(vec![
            GeoPoint::new(0.0, 0.0).unwrap(),
            GeoPoint::new(0.0, deg).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn ten_km_at_ten_mps() {
        let r = straight(10_000.0);
        let tr = generate_trace(&r, &SpeedProfile::constant(10.0), 1.0).unwrap();
        assert_eq!(tr.len(), 1001);
        assert!((tr.last().unwrap().offset - r.length()).abs() < 1e-9);
        assert!((tr.last().unwrap().offset - 10_000.0).abs() < 1e-6);
    }

    #[test]
    fn stop_holds_sixty_samples() {
        let r = straight(10_000.0);
        let mut p = SpeedProfile::constant(10.0);
        p.stops.push(Stop {
            offset: 5000.0,
            duration_s: 60.0,
        });
        let tr = generate_trace(&r, &p, 1.0).unwrap();
        let held = tr.iter().filter(|t| t.offset == 5000.0).count();
        assert_eq!(held, 60);
        let first = tr.iter().position(|t| t.offset == 5000.0).unwrap();
        assert!(tr[first..first + 60].iter().all(|t| t.offset == 5000.0));
        assert!(tr[first + 60].offset > 5000.0);
    }

    #[test]
    fn stop_beyond_route_is_error() {
        let r = straight(1000.0);
        let mut p = SpeedProfile::constant(10.0);
        p.stops.push(Stop {
            offset: 1500.0,
            duration_s: 5.0,
        });
        assert!(matches!(
            generate_trace(&r, &p, 1.0),
            Err(SimError::StopOutsideRoute { .. })
        ));
        assert!(matches!(
            generate_trace(&r, &SpeedProfile::constant(10.0), 0.0),
            Err(SimError::SampleRate(_))
        ));
    }

    #[test]
    fn jitter_is_deterministic_and_bounded() {
        let r = straight(2000.0);
        let mut p = SpeedProfile::constant(12.0);
        p.jitter_seed = Some(7);
        let a = generate_trace(&r, &p, 2.0).unwrap();
        let b = generate_trace(&r, &p, 2.0).unwrap();
        assert_eq!(a, b);
        for tp in &a {
            let pos = r.project(&tp.point);
            assert!(pos.cross_track <= MAX_JITTER_M + 1e-6);
        }
    }

    #[test]
    fn zero_length_route() {
        let p = GeoPoint::new(1.0, 1.0).unwrap();
        let r = Route::new(vec![p, p]).unwrap();
        let tr = generate_trace(&r, &SpeedProfile::constant(5.0), 1.0).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr[0].offset, 0.0);
    }

    #[test]
    fn script_parsing() {
        let s = AnswerScript::parse(
            "{\"slot\":0,\"action\":\"answer\",\"text\":\"a dragon\"}\n\n{\"slot\":1,\"action\":\"help\"}\n{\"slot\":1,\"action\":\"answer\",\"text\":\"B\"}\n",
        )
        .unwrap();
        assert_eq!(s.actions_for(1).len(), 2);
        assert_eq!(s.actions_for(1)[0].action, ScriptAction::Help);
        assert!(matches!(
            AnswerScript::parse("{\"slot\":0,\"action\":\"answer\"}"),
            Err(ScriptError::EmptyAnswer { line: 1 })
        ));
        assert!(matches!(
            AnswerScript::parse("{\"slot\":0,\"action\":\"dance\"}"),
            Err(ScriptError::Parse { .. })
        ));
    }

    #[test]
    fn virtual_clock_jumps() {
        let mut c = VirtualClock::new();
        c.advance_to(12.5);
        assert_eq!(c.now(), 12.5);
        c.advance_to(3.0);
        assert_eq!(c.now(), 12.5);
    }

    proptest::proptest! {
        #[test]
        fn trace_offsets_monotone_and_bounded(
            len in 0.0f64..8000.0,
            speed in 1.0f64..30.0,
            hz in 0.5f64..4.0,
            stop_frac in proptest::option::of(0.0f64..1.0),
        ) {
            let r = straight(len);
            let mut p = SpeedProfile::constant(speed);
            if let Some(f) = stop_frac {
                p.stops.push(Stop { offset: f * r.length(), duration_s: 10.0 });
            }
            let tr = generate_trace(&r, &p, hz).unwrap();
            for w in tr.windows(2) {
                proptest::prop_assert!(w[1].t > w[0].t);
                proptest::prop_assert!(w[1].offset >= w[0].offset);
                proptest::prop_assert!(w[1].offset - w[0].offset <= speed / hz + 1e-9);
            }
            proptest::prop_assert_eq!(tr.last().unwrap().offset, r.length());
        }
    }
}
