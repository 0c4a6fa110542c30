//! `scenic` command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 input error.

mod stats;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use scenic_core::formats::{load_pois, load_route, selection_to_geojson, trace_to_gpx};
use scenic_core::journal::{load_file, render_transcript, JourneyLog, JourneyStore, ReflectionSummary};
use scenic_core::poi::{parse_blocklist, plan_pois, SelectionConfig};
use scenic_core::providers::Providers;
use scenic_core::replay::replay;
use scenic_core::session::{build_header, run_simulation, JourneyParams, SetupError};
use scenic_core::simulator::{generate_trace, AnswerScript, RealtimeClock, SpeedProfile, Stop, VirtualClock};
use scenic_core::story::{Character, StoryTheme};
use scenic_core::strategy::DevelopmentalGoal;

pub use stats::StatsArgs;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "scenic", version, about = "Plan, simulate and serve in-car story journeys")]
pub struct Cli {
    /// Provider backend; `live` needs a build with the `live` feature.
    #[arg(long, global = true, value_enum, default_value = "mock", env = "SCENIC_PROVIDER_MODE")]
    pub provider_mode: ProviderMode,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderMode {
    Mock,
    Live,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select POIs along a route.
    Plan(PlanArgs),
    /// Drive a route with a scripted child and write the journey log.
    Simulate(SimulateArgs),
    /// Re-run a journey log and check every effect is reproduced.
    Replay(ReplayArgs),
    /// Render a stored journey log.
    Export(ExportArgs),
    /// Evaluation statistics.
    Stats(StatsArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SelectionArgs {
    #[arg(long, env = "SCENIC_ENDPOINT_EXCLUSION")]
    pub endpoint_exclusion: Option<f64>,
    #[arg(long, env = "SCENIC_MIN_SPACING")]
    pub min_spacing: Option<f64>,
    #[arg(long, env = "SCENIC_CORRIDOR")]
    pub corridor: Option<f64>,
    #[arg(long, env = "SCENIC_TRIGGER")]
    pub trigger: Option<f64>,
    /// File with one blocked POI type per line.
    #[arg(long, env = "SCENIC_BLOCKLIST")]
    pub blocklist: Option<PathBuf>,
}

impl SelectionArgs {
    fn config(&self) -> Result<SelectionConfig, CliError> {
        let mut c = SelectionConfig::default();
        if let Some(v) = self.endpoint_exclusion {
            c.endpoint_exclusion = v;
        }
        if let Some(v) = self.min_spacing {
            c.min_spacing = v;
        }
        if let Some(v) = self.corridor {
            c.corridor_width = v;
        }
        if let Some(v) = self.trigger {
            c.approach_trigger = v;
        }
        if let Some(p) = &self.blocklist {
            c.type_blocklist = parse_blocklist(&std::fs::read_to_string(p).map_err(input)?);
        }
        c.validate().map_err(input)?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long, env = "SCENIC_ROUTE")]
    pub route: PathBuf,
    #[arg(long, env = "SCENIC_POIS")]
    pub pois: PathBuf,
    /// Write the selection as GeoJSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClockKind {
    Virtual,
    Realtime,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, env = "SCENIC_ROUTE")]
    pub route: PathBuf,
    #[arg(long, env = "SCENIC_POIS")]
    pub pois: PathBuf,
    #[arg(long, env = "SCENIC_THEME", default_value = "nature")]
    pub theme: StoryTheme,
    #[arg(long, env = "SCENIC_CHARACTER", default_value = "rabbit")]
    pub character: Character,
    #[arg(long, env = "SCENIC_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Cruise speed, m/s.
    #[arg(long, env = "SCENIC_SPEED", default_value_t = 10.0)]
    pub speed: f64,
    /// Stops as `offset_m:seconds`, comma separated.
    #[arg(long, env = "SCENIC_STOPS", value_parser = parse_stops, default_value = "")]
    pub stops: StopList,
    /// Per-slot speed jitter seed.
    #[arg(long)]
    pub jitter_seed: Option<u64>,
    /// Child script, one JSON object per line.
    #[arg(long, env = "SCENIC_ANSWERS")]
    pub answers: Option<PathBuf>,
    /// Sessions directory for the journey log.
    #[arg(long, env = "SCENIC_OUT", default_value = "sessions")]
    pub out: PathBuf,
    #[arg(long)]
    pub session_id: Option<String>,
    /// Overwrite an existing log with the same id.
    #[arg(long)]
    pub force: bool,
    #[arg(long, value_enum, default_value = "virtual")]
    pub clock: ClockKind,
    #[arg(long, default_value_t = 60.0)]
    pub speedup: f64,
    #[arg(long, default_value_t = 1.0)]
    pub hz: f64,
    /// Fixed creation timestamp, for reproducible logs.
    #[arg(long, env = "SCENIC_CREATED_AT", default_value = "1970-01-01T00:00:00Z")]
    pub created_at: String,
    /// Also write the driven trace as GPX.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StopList(pub Vec<Stop>);

fn parse_stops(s: &str) -> Result<StopList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (o, d) = part
            .split_once(':')
            .ok_or_else(|| format!("stop {part:?} is not offset:seconds"))?;
        let offset = o.trim().parse::<f64>().map_err(|e| format!("stop offset {o:?}: {e}"))?;
        let duration_s = d.trim().parse::<f64>().map_err(|e| format!("stop duration {d:?}: {e}"))?;
        out.push(Stop { offset, duration_s });
    }
    Ok(StopList(out))
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Journey log file.
    pub log: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Transcript,
    Summary,
    Plan,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub log: PathBuf,
    #[arg(long, value_enum, default_value = "transcript")]
    pub format: ExportFormat,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "SCENIC_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: String,
    #[arg(long, env = "SCENIC_OUT", default_value = "sessions")]
    pub out: PathBuf,
    #[arg(long, env = "SCENIC_FIXTURES", default_value = "fixtures")]
    pub fixtures: PathBuf,
    /// Run simulated sessions this many times faster than real time
    /// instead of as fast as possible.
    #[arg(long, env = "SCENIC_SPEEDUP")]
    pub speedup: Option<f64>,
}

pub fn providers(mode: ProviderMode) -> Result<Providers, CliError> {
    match mode {
        ProviderMode::Mock => Ok(Providers::mock()),
        #[cfg(feature = "live")]
        ProviderMode::Live => {
            let cfg = scenic_core::providers::live::LiveConfig::from_env()
                .ok_or_else(|| CliError::Input("live providers need SCENIC_LIVE_URL".into()))?;
            Ok(Providers::live(cfg))
        }
        #[cfg(not(feature = "live"))]
        ProviderMode::Live => Err(CliError::Input(
            "this build has no live providers; rebuild with --features live".into(),
        )),
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Plan(a) => cmd_plan(&a, out),
        Command::Simulate(a) => cmd_simulate(&a, providers(cli.provider_mode)?, out),
        Command::Replay(a) => cmd_replay(&a, providers(cli.provider_mode)?, out),
        Command::Export(a) => cmd_export(&a, out),
        Command::Stats(a) => stats::cmd_stats(&a, out),
        Command::Serve(a) => cmd_serve(&a, providers(cli.provider_mode)?, out),
    }
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(runtime)?
    };
}

fn cmd_plan(a: &PlanArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = a.selection.config()?;
    let route = load_route(&a.route).map_err(input)?;
    let pois = load_pois(&a.pois).map_err(input)?;
    let plan = plan_pois(&route, &pois, &config).map_err(input)?;
    say!(out, "route length: {:.0} m", route.length());
    say!(
        out,
        "criteria: endpoint exclusion {} m, spacing {} m, corridor {} m, trigger {} m, {} blocked types",
        config.endpoint_exclusion,
        config.min_spacing,
        config.corridor_width,
        config.approach_trigger,
        config.type_blocklist.len()
    );
    say!(out, "candidates: {}, selected: {}", pois.len(), plan.len());
    for (i, p) in plan.iter().enumerate() {
        say!(
            out,
            "{:>2}. {:<24} {:<14} offset {:>7.0} m  trigger {:>7.0} m",
            i + 1,
            p.candidate.id,
            p.candidate.type_tag,
            p.offset,
            p.trigger_offset
        );
    }
    if let Some(path) = &a.out {
        let text = serde_json::to_string_pretty(&selection_to_geojson(&plan)).map_err(runtime)?;
        std::fs::write(path, text).map_err(runtime)?;
        say!(out, "wrote {}", path.display());
    }
    Ok(())
}

pub fn print_summary(out: &mut dyn Write, s: &ReflectionSummary) -> Result<(), CliError> {
    say!(out, "locations interacted: {}", s.locations_interacted);
    for g in DevelopmentalGoal::ALL {
        say!(out, "{}: {}", g.label(), s.prompts_answered.get(&g).copied().unwrap_or(0));
    }
    say!(out, "unanswered: {}", s.prompts_unanswered);
    if s.gallery.is_empty() {
        say!(out, "gallery: no pictures this time");
    } else {
        say!(out, "gallery: {} pictures", s.gallery.len());
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, providers: Providers, out: &mut dyn Write) -> Result<(), CliError> {
    let script = match &a.answers {
        Some(p) => AnswerScript::parse(&std::fs::read_to_string(p).map_err(input)?)
            .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
        None => AnswerScript::default(),
    };
    let config = a.selection.config()?;
    let route = load_route(&a.route).map_err(input)?;
    let pois = load_pois(&a.pois).map_err(input)?;
    let profile = SpeedProfile {
        cruise_speed: a.speed,
        stops: a.stops.0.clone(),
        jitter_seed: a.jitter_seed,
    };
    let id = a.session_id.clone().unwrap_or_else(|| format!("sim-{}", a.seed));
    let params = JourneyParams::new(&id, a.theme, a.character, a.seed);
    let header = build_header(route, &pois, &config, &params, &profile, &providers, a.created_at.clone())
        .map_err(|e| match e {
            SetupError::Eta(_) => runtime(e),
            other => input(other),
        })?;

    let store = JourneyStore::new(&a.out);
    std::fs::create_dir_all(&a.out).map_err(runtime)?;
    let path = store.path_for(&id).map_err(input)?;
    if a.force && path.exists() {
        std::fs::remove_file(&path).map_err(runtime)?;
    }
    let writer = store.create(&header).map_err(runtime)?;

    if let Some(gpx) = &a.trace_out {
        let trace = generate_trace(&header.route, &profile, a.hz).map_err(input)?;
        std::fs::write(gpx, trace_to_gpx(&trace).map_err(runtime)?).map_err(runtime)?;
    }
    let report = match a.clock {
        ClockKind::Virtual => run_simulation(
            &header,
            providers,
            &profile,
            a.hz,
            script,
            Box::new(writer),
            &mut VirtualClock::new(),
        ),
        ClockKind::Realtime => run_simulation(
            &header,
            providers,
            &profile,
            a.hz,
            script,
            Box::new(writer),
            &mut RealtimeClock::new(a.speedup),
        ),
    }
    .map_err(runtime)?;

    let log = load_file(&path).map_err(runtime)?;
    say!(out, "{}", render_transcript(&log));
    say!(out, "log: {}", path.display());
    say!(
        out,
        "positions: {}, timers: {}, rejected: {}, session time: {:.0} s",
        report.positions,
        report.timers_fired,
        report.rejected,
        report.end_time
    );
    match log.final_summary() {
        Some(s) => print_summary(out, &s)?,
        None => return Err(CliError::Runtime("journey ended without a reflection".into())),
    }
    Ok(())
}

fn load_log(path: &Path) -> Result<JourneyLog, CliError> {
    load_file(path).map_err(|e| match e {
        scenic_core::journal::JournalError::Integrity { .. } => runtime(e),
        other => input(other),
    })
}

fn cmd_replay(a: &ReplayArgs, providers: Providers, out: &mut dyn Write) -> Result<(), CliError> {
    let log = load_log(&a.log)?;
    let r = replay(&log, providers).map_err(runtime)?;
    say!(
        out,
        "replayed {} events, {} effects identical; final state {}",
        r.events,
        r.effects,
        r.final_state
    );
    Ok(())
}

fn cmd_export(a: &ExportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let log = load_log(&a.log)?;
    match a.format {
        ExportFormat::Transcript => say!(out, "{}", render_transcript(&log)),
        ExportFormat::Summary => match log.final_summary() {
            Some(s) => say!(out, "{}", serde_json::to_string_pretty(&s).map_err(runtime)?),
            None => return Err(CliError::Runtime("log has no reflection".into())),
        },
        ExportFormat::Plan => say!(
            out,
            "{}",
            serde_json::to_string_pretty(&selection_to_geojson(&log.header.plan)).map_err(runtime)?
        ),
    }
    Ok(())
}

fn cmd_serve(a: &ServeArgs, providers: Providers, out: &mut dyn Write) -> Result<(), CliError> {
    std::fs::create_dir_all(&a.out).map_err(runtime)?;
    if !a.fixtures.is_dir() {
        return Err(CliError::Input(format!("fixtures dir {} not found", a.fixtures.display())));
    }
    let mut config = scenic_server::ServerConfig::new(&a.out, &a.fixtures);
    config.sim_speedup = a.speedup;
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.listen)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot listen on {}: {e}", a.listen)))?;
        let addr = listener.local_addr().map_err(runtime)?;
        say!(out, "listening on http://{addr}");
        out.flush().map_err(runtime)?;
        scenic_server::serve(listener, scenic_server::app_state(config, providers))
            .await
            .map_err(runtime)
    })
}
