//! One line per acceptance criterion. Exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenic_core::formats::{load_pois, load_route};
use scenic_core::geo::{GeoPoint, Route};
use scenic_core::journal::{JourneyHeader, JourneyLog, LogEntry};
use scenic_core::orchestrator::{SessionEvent, TimedEvent};
use scenic_core::poi::{max_poi_count, plan_pois, PoiCandidate, SelectionConfig};
use scenic_core::providers::{MockText, Providers, TemplateSet, TextRequest, TextRole};
use scenic_core::replay::replay;
use scenic_core::session::{build_header, simulate_in_memory, JourneyParams};
use scenic_core::simulator::{AnswerScript, ScriptAction, ScriptLine, SpeedProfile};
use scenic_core::story::{compose_checked, style_lint, Character, StoryError, StoryTheme, StyleGuide, StyleViolation};
use scenic_core::strategy::{goal_of, DevelopmentalGoal, StrategyKind};
use scenic_stats::fixtures::{
    table3_higher_lower, ENGAGEMENT_BENCHMARK, ENGAGEMENT_D_REPORTED, ENGAGEMENT_MEAN, ENGAGEMENT_SD, TABLE5_PARENT,
    TABLE5_SCENIC,
};
use scenic_stats::{chi_square, cohens_d_from_summary, describe, mann_whitney_u};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn header(route: &str, pois: &str, theme: StoryTheme, character: Character, seed: u64, speed: f64) -> JourneyHeader {
    build_header(
        load_route(&fixture(route)).unwrap(),
        &load_pois(&fixture(pois)).unwrap(),
        &SelectionConfig::default(),
        &JourneyParams::new("golden", theme, character, seed),
        &SpeedProfile::constant(speed),
        &Providers::mock(),
        "1970-01-01T00:00:00Z".into(),
    )
    .unwrap()
}

fn golden_run() -> JourneyLog {
    let h = header("golden_route.geojson", "golden_pois.geojson", StoryTheme::Nature, Character::Rabbit, 42, 10.0);
    let script = AnswerScript::parse(&std::fs::read_to_string(fixture("golden_answers.jsonl")).unwrap()).unwrap();
    simulate_in_memory(&h, Providers::mock(), &SpeedProfile::constant(10.0), 1.0, script).unwrap().0
}

fn of_kind<'a>(log: &'a JourneyLog, kind: &str) -> Vec<&'a LogEntry> {
    log.entries.iter().filter(|e| e.kind == kind).collect()
}

fn random_route(rng: &mut ChaCha8Rng) -> Option<Route> {
    let mut p = GeoPoint::new(rng.random_range(-60.0..60.0), rng.random_range(-170.0..170.0)).ok()?;
    let mut bearing: f64 = rng.random_range(0.0..360.0);
    let mut pts = vec![p];
    for _ in 0..rng.random_range(1..6) {
        bearing += rng.random_range(-60.0..60.0);
        p = p.destination(bearing, rng.random_range(400.0..7_000.0));
        pts.push(p);
    }
    Route::new(pts).ok()
}

fn beside(route: &Route, offset: f64, lateral: f64) -> GeoPoint {
    let len = route.length();
    let a = route.point_at((offset - 1.0).max(0.0));
    let b = route.point_at((offset + 1.0).min(len));
    route.point_at(offset).destination(a.bearing_to(&b) + 90.0, lateral)
}

const TYPES: [&str; 14] = [
    "park", "museum", "temple", "university", "lake", "bridge", "garden", "tower", "Park", "zoo", "bar", "casino",
    "library", "",
];

fn poi_property_suite() -> Outcome {
    let start = Instant::now();
    let config = SelectionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ce_41c);
    let (mut instances, mut violations, mut selected_total) = (0, 0, 0);
    while instances < 1000 {
        let Some(route) = random_route(&mut rng) else { continue };
        let len = route.length();
        let n = rng.random_range(0..60);
        let candidates: Vec<PoiCandidate> = (0..n)
            .map(|i| PoiCandidate {
                id: format!("c{i}"),
                name: format!("Place {i}"),
                point: beside(&route, rng.random_range(0.0..=len), rng.random_range(-300.0..300.0)),
                type_tag: TYPES[rng.random_range(0..TYPES.len())].to_string(),
                description: String::new(),
            })
            .collect();
        let plan = plan_pois(&route, &candidates, &config).map_err(|e| format!("instance {instances}: {e}"))?;
        instances += 1;
        selected_total += plan.len();

        let offsets: Vec<f64> = plan.iter().map(|s| route.project(&s.candidate.point).offset).collect();
        let mut bad = offsets.iter().any(|&o| o < 1_000.0 - 1e-6 || o > len - 1_000.0 + 1e-6);
        for i in 0..offsets.len() {
            for j in i + 1..offsets.len() {
                bad |= (offsets[i] - offsets[j]).abs() < 800.0 - 1e-6;
            }
        }
        let types: BTreeSet<String> = plan.iter().map(|s| s.candidate.type_tag.to_lowercase()).collect();
        bad |= types.len() != plan.len();
        bad |= plan.len() > max_poi_count(len, &config);
        bad |= plan.iter().any(|s| route.project(&s.candidate.point).cross_track > config.corridor_width + 1e-6);
        bad |= plan.iter().any(|s| config.type_blocklist.contains(&s.candidate.type_tag.to_lowercase()));
        if bad {
            violations += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(violations == 0, "{violations} violating instances");
    ensure!(selected_total > 0, "no instance selected anything");
    ensure!(secs < 10.0, "took {secs:.2} s");
    Ok(format!("{instances} instances, {selected_total} POIs selected, 0 violations, {secs:.2} s"))
}

fn band_reproduction() -> Outcome {
    let config = SelectionConfig::default();
    let mut got = Vec::new();
    for km in [9.0, 14.0, 17.0] {
        let a = GeoPoint::new(30.25, 120.1).unwrap();
        let route = Route::new(vec![a, a.destination(80.0, km * 1_000.0)]).unwrap();
        let candidates: Vec<PoiCandidate> = (0..(km * 4.0) as usize)
            .map(|i| PoiCandidate {
                id: format!("d{i:03}"),
                name: format!("Spot {i}"),
                point: beside(&route, i as f64 * 250.0, if i % 2 == 0 { 30.0 } else { -30.0 }),
                type_tag: format!("kind{i}"),
                description: String::new(),
            })
            .collect();
        got.push(plan_pois(&route, &candidates, &config).map_err(|e| e.to_string())?.len());
    }
    ensure!(got == [4, 5, 6], "9/14/17 km selected {got:?}");
    Ok("9 / 14 / 17 km select 4 / 5 / 6".into())
}

fn chi_square_reproduction() -> Outcome {
    let start = Instant::now();
    let table = table3_higher_lower().map_err(|e| e.to_string())?;
    let overall = chi_square(&table).map_err(|e| e.to_string())?;
    ensure!(table.counts.len() == 2 && table.counts[0].len() == 3, "table is not 2x3");
    ensure!((overall.statistic - 44.64).abs() <= 0.05, "overall {:.4}", overall.statistic);
    let mut parts = vec![format!("{:.2}", overall.statistic)];
    for (cols, expected, p) in [([0, 1], 35.61, None), ([0, 2], 29.08, None), ([1, 2], 0.47, Some(0.494))] {
        let r = chi_square(&table.select_cols(&cols).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure!((r.statistic - expected).abs() <= 0.05, "{cols:?}: {:.4} vs {expected}", r.statistic);
        if let Some(p) = p {
            ensure!((r.p - p).abs() <= 0.005, "{cols:?}: p {:.4} vs {p}", r.p);
        }
        parts.push(format!("{:.2}", r.statistic));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 1.0, "took {secs:.3} s");
    Ok(format!("chi-square {} ({secs:.3} s)", parts.join(", ")))
}

fn table5_reproduction() -> Outcome {
    let start = Instant::now();
    let a = describe(&TABLE5_SCENIC).map_err(|e| e.to_string())?;
    let b = describe(&TABLE5_PARENT).map_err(|e| e.to_string())?;
    for (d, m, sd) in [(a, 5.25, 1.28), (b, 2.13, 1.13)] {
        ensure!((d.mean - m).abs() <= 0.01 && (d.sd - sd).abs() <= 0.01, "M {:.3} SD {:.3} vs {m}/{sd}", d.mean, d.sd);
    }
    let u = mann_whitney_u(&TABLE5_SCENIC, &TABLE5_PARENT).map_err(|e| e.to_string())?;
    ensure!(u.statistic == 63.0, "U = {}", u.statistic);
    ensure!(u.p < 0.01, "p = {}", u.p);
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 1.0, "took {secs:.3} s");
    Ok(format!(
        "M {:.3}/{:.3}, SD {:.3}/{:.3}, U = {}, p = {:.2e}",
        a.mean, b.mean, a.sd, b.sd, u.statistic, u.p
    ))
}

fn effect_size() -> Outcome {
    let d = cohens_d_from_summary(ENGAGEMENT_MEAN, ENGAGEMENT_SD, ENGAGEMENT_BENCHMARK).map_err(|e| e.to_string())?;
    ensure!((d.statistic - 1.70).abs() <= 0.005, "d = {}", d.statistic);
    let gap = (d.statistic - ENGAGEMENT_D_REPORTED).abs();
    ensure!(gap <= 0.05, "gap {gap}");
    Ok(format!("d = {:.4}, gap to {ENGAGEMENT_D_REPORTED} = {gap:.3}", d.statistic))
}

fn golden_journey() -> Outcome {
    let start = Instant::now();
    let log = golden_run();
    let secs = start.elapsed().as_secs_f64();

    for poi in &log.header.plan {
        let id = poi.candidate.id.as_str();
        let kinds: Vec<String> = log
            .entries
            .iter()
            .filter(|e| e.payload.get("poi_id").and_then(|v| v.as_str()) == Some(id))
            .filter(|e| e.kind == "prompt" || (e.kind == "segment" && e.payload["kind"] != "transition"))
            .map(|e| if e.kind == "prompt" { "prompt".into() } else { e.payload["kind"].as_str().unwrap().to_string() })
            .collect();
        ensure!(kinds.len() >= 4, "{id}: {kinds:?}");
        ensure!(kinds[..3] == ["approach", "introduction", "narration"], "{id}: {kinds:?}");
        ensure!(kinds[3..].iter().all(|k| k == "prompt"), "{id}: {kinds:?}");
    }

    let step = 10.0;
    let mut offset = 0.0;
    let mut fired = Vec::new();
    for e in &log.entries {
        if e.kind == "event" {
            let te: TimedEvent = serde_json::from_value(e.payload.clone()).map_err(|e| e.to_string())?;
            if let SessionEvent::PositionUpdated { position } = te.event {
                offset = position.offset;
            }
        }
        if e.kind == "segment" && e.payload["kind"] == "approach" {
            fired.push(offset);
        }
    }
    ensure!(fired.len() == log.header.plan.len(), "{} approaches for {} POIs", fired.len(), log.header.plan.len());
    for (at, poi) in fired.iter().zip(&log.header.plan) {
        ensure!((at - poi.trigger_offset).abs() <= step, "{}: fired at {at}, trigger {}", poi.candidate.id, poi.trigger_offset);
    }

    let s = log.final_summary().ok_or("no reflection")?;
    let counts = [
        s.prompts_answered[&DevelopmentalGoal::Creativity],
        s.prompts_answered[&DevelopmentalGoal::LogicalAbility],
        s.prompts_answered[&DevelopmentalGoal::DecisionMaking],
    ];
    ensure!(counts == [3, 4, 2], "counts {counts:?}");

    let bytes = log.to_jsonl();
    ensure!(golden_run().to_jsonl() == bytes, "rerun differs");
    ensure!(std::fs::read_to_string(fixture("golden_log.jsonl")).unwrap() == bytes, "differs from frozen log");
    ensure!(secs < 5.0, "took {secs:.2} s");
    Ok(format!("order ok, approach within one sample, counts {{3, 4, 2}}, rerun identical, {secs:.2} s"))
}

fn random_journeys() -> Vec<JourneyLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    (0..10)
        .map(|_| {
            let (route, pois) = if rng.random_bool(0.5) {
                ("golden_route.geojson", "golden_pois.geojson")
            } else {
                ("gcr_9km_route.geojson", "gcr_9km_pois.geojson")
            };
            let speed = rng.random_range(6.0..16.0);
            let h = header(
                route,
                pois,
                StoryTheme::ALL[rng.random_range(0..4)],
                Character::ALL[rng.random_range(0..4)],
                rng.random(),
                speed,
            );
            let mut lines = Vec::new();
            for slot in 0..rng.random_range(0..16u32) {
                if rng.random_bool(0.2) {
                    lines.push(ScriptLine { slot, action: ScriptAction::Ask, text: "What is that?".into() });
                }
                let action = [ScriptAction::Answer, ScriptAction::Help, ScriptAction::Silence][rng.random_range(0..3)];
                let text = if action == ScriptAction::Answer { "A tall tree".into() } else { String::new() };
                lines.push(ScriptLine { slot, action, text });
            }
            let script = AnswerScript::from_lines(lines);
            simulate_in_memory(&h, Providers::mock(), &SpeedProfile::constant(speed), 1.0, script).unwrap().0
        })
        .collect()
}

fn replay_determinism(logs: &[JourneyLog], again: &[JourneyLog]) -> Outcome {
    for (i, (log, rerun)) in logs.iter().zip(again).enumerate() {
        let bytes = log.to_jsonl();
        ensure!(rerun.to_jsonl() == bytes, "journey {i}: rerun differs");
        let parsed = JourneyLog::parse(&bytes).map_err(|e| format!("journey {i}: {e}"))?;
        ensure!(parsed.to_jsonl() == bytes, "journey {i}: reserialized log differs");
        let r = replay(&parsed, Providers::mock()).map_err(|e| format!("journey {i}: {e}"))?;
        ensure!(r.final_state == "completed", "journey {i}: final state {}", r.final_state);
        ensure!(r.events + r.effects == log.entries.len(), "journey {i}: replayed {} of {}", r.events + r.effects, log.entries.len());
    }
    Ok(format!("{} journeys replayed byte for byte", logs.len()))
}

fn strategy_coverage(logs: &[JourneyLog]) -> Outcome {
    let mut checked = 0;
    for (i, log) in logs.iter().enumerate() {
        let mut seen = BTreeSet::new();
        for (n, e) in of_kind(log, "prompt").iter().enumerate() {
            let s: StrategyKind = serde_json::from_value(e.payload["strategy"].clone()).map_err(|e| e.to_string())?;
            let g: DevelopmentalGoal = serde_json::from_value(e.payload["goal"].clone()).map_err(|e| e.to_string())?;
            ensure!(goal_of(s) == g, "log {i} prompt {n}: {s:?} tagged {g:?}");
            if n < 6 {
                ensure!(seen.insert(s), "log {i}: {s:?} repeats at prompt {n}");
            }
            checked += 1;
        }
        ensure!(i > 0 || seen.len() == 6, "golden journey covers only {} strategies", seen.len());
    }
    Ok(format!("{checked} prompts in {} journeys", logs.len()))
}

fn style_gate(golden: &JourneyLog) -> Outcome {
    let segments = of_kind(golden, "segment");
    for e in &segments {
        let text = e.payload["text"].as_str().unwrap_or_default();
        let hard: Vec<_> = style_lint(text).into_iter().filter(StyleViolation::is_hard).collect();
        ensure!(hard.is_empty(), "{text}: {hard:?}");
    }
    let sample = segments[0].payload["text"].as_str().unwrap_or_default();
    let injected = format!("{sample} Our intelligent algorithms picked these places.");
    let caught = style_lint(&injected).contains(&StyleViolation::Jargon { term: "intelligent algorithms".into() });
    ensure!(caught, "lint missed injected jargon");

    let set = TemplateSet::parse(
        "[orientation nature *]\nHi, I am {character}. Our intelligent algorithms found {count} places for you.",
    )
    .map_err(|e| e.to_string())?;
    let request = TextRequest {
        request_id: "inject".into(),
        role: TextRole::Orientation,
        kind: "nature".into(),
        type_tag: "*".into(),
        vars: BTreeMap::from([("character".into(), "Bunny Clover".into()), ("count".into(), "5".into())]),
        style_preamble: String::new(),
        seed: 1,
    };
    match compose_checked(&MockText::new(set), &request, &StyleGuide::default()) {
        Err(StoryError::Style { .. }) => {}
        other => return Err(format!("composer accepted injected jargon: {other:?}")),
    }
    Ok(format!("{} golden segments clean, injected jargon rejected", segments.len()))
}

fn main() {
    let golden = golden_run();
    let logs = random_journeys();
    let again = random_journeys();
    let mut all = vec![golden.clone()];
    all.extend(logs.iter().cloned());

    let results: Vec<(&str, Outcome)> = vec![
        ("poi selection property suite", poi_property_suite()),
        ("band reproduction", band_reproduction()),
        ("chi-square reproduction", chi_square_reproduction()),
        ("nomination descriptives and mann-whitney", table5_reproduction()),
        ("effect size", effect_size()),
        ("golden journey", golden_journey()),
        ("replay determinism", replay_determinism(&logs, &again)),
        ("strategy coverage", strategy_coverage(&all)),
        ("style gate", style_gate(&golden)),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
