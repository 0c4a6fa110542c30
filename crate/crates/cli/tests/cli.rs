use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn scenic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenic"))
        .args(args)
        .env_remove("SCENIC_PROVIDER_MODE")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn plan_selects_four_on_nine_km_route() {
    let o = scenic(&["plan", "--route", &fixture("gcr_9km_route.geojson"), "--pois", &fixture("gcr_9km_pois.geojson")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("selected: 4"), "{}", stdout(&o));
}

#[test]
fn plan_golden_route_and_geojson_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sel.geojson");
    let o = scenic(&[
        "plan",
        "--route",
        &fixture("golden_route.geojson"),
        "--pois",
        &fixture("golden_pois.csv"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for id in ["su-causeway", "maple-hill-park", "cloud-bell-temple", "lakeside-tea-museum", "westbrook-university"] {
        assert!(text.contains(id), "{text}");
    }
    assert!(!text.contains("harbor-fuel"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["features"].as_array().unwrap().len(), 5);
}

#[test]
fn plan_with_no_pois_succeeds() {
    let o = scenic(&["plan", "--route", &fixture("golden_route.geojson"), "--pois", &fixture("empty_pois.geojson")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("selected: 0"));
}

#[test]
fn malformed_input_exits_two() {
    let o = scenic(&["plan", "--route", &fixture("malformed.geojson"), "--pois", &fixture("golden_pois.geojson")]);
    assert_eq!(o.status.code(), Some(2));
    let o = scenic(&["plan", "--route", &fixture("nope.geojson"), "--pois", &fixture("golden_pois.geojson")]);
    assert_eq!(o.status.code(), Some(2));
    let o = scenic(&["stats"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn live_mode_without_feature_is_input_error() {
    if cfg!(feature = "live") {
        return;
    }
    let o = scenic(&[
        "--provider-mode",
        "live",
        "simulate",
        "--route",
        &fixture("golden_route.geojson"),
        "--pois",
        &fixture("golden_pois.geojson"),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

fn simulate(dir: &std::path::Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "simulate",
        "--route",
        &*Box::leak(fixture("golden_route.geojson").into_boxed_str()),
        "--pois",
        &*Box::leak(fixture("golden_pois.geojson").into_boxed_str()),
        "--out",
        dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    scenic(&args)
}

#[test]
fn golden_simulation_matches_frozen_log() {
    let dir = tempfile::tempdir().unwrap();
    let answers = fixture("golden_answers.jsonl");
    let o = simulate(
        dir.path(),
        &["--seed", "42", "--theme", "nature", "--character", "rabbit", "--answers", &answers, "--session-id", "golden"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("creativity: 3"));
    assert!(text.contains("logical ability: 4"));
    assert!(text.contains("decision-making: 2"));
    let ours = std::fs::read_to_string(dir.path().join("golden.jsonl")).unwrap();
    assert_eq!(ours, std::fs::read_to_string(fixture("golden_log.jsonl")).unwrap());

    let o = scenic(&["replay", dir.path().join("golden.jsonl").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("final state completed"));

    let o = simulate(dir.path(), &["--seed", "42", "--session-id", "golden"]);
    assert_eq!(o.status.code(), Some(1), "existing log without --force");
}

#[test]
fn same_seed_twice_gives_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    for id in ["a", "b"] {
        let o = simulate(dir.path(), &["--seed", "9", "--speed", "12", "--stops", "3000:30", "--session-id", id]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b.jsonl")).unwrap();
    assert_eq!(a.replacen("\"session_id\":\"a\"", "", 1), b.replacen("\"session_id\":\"b\"", "", 1));
}

#[test]
fn help_script_emits_hint_images() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("help.jsonl");
    std::fs::write(&script, "{\"slot\":0,\"action\":\"help\"}\n{\"slot\":1,\"action\":\"help\"}\n").unwrap();
    let o = simulate(dir.path(), &["--answers", script.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let log = std::fs::read_to_string(dir.path().join("sim-0.jsonl")).unwrap();
    assert!(log.lines().filter(|l| l.contains("\"kind\":\"hint_image\"")).count() >= 2);
}

#[test]
fn invalid_script_fails_before_run() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("bad.jsonl");
    std::fs::write(&script, "{\"slot\":0,\"action\":\"answer\",\"text\":\"\"}\n").unwrap();
    let o = simulate(dir.path(), &["--answers", script.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("sim-0.jsonl").exists());
}

#[test]
fn export_formats() {
    let golden = fixture("golden_log.jsonl");
    let o = scenic(&["export", &golden]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("Bunny Clover [orientation]"));
    let o = scenic(&["export", &golden, "--format", "summary"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["prompts_answered"]["logical_ability"], 4);
}

#[test]
fn stats_paper_tables() {
    let o = scenic(&["stats", "--paper-table3"]);
    assert_eq!(o.status.code(), Some(0));
    let t = stdout(&o);
    for v in ["= 44.64", "= 35.60", "= 29.08", "= 0.47, p = 0.4937"] {
        assert!(t.contains(v), "{v} missing in\n{t}");
    }
    let o = scenic(&["stats", "--paper-table5"]);
    let t = stdout(&o);
    assert!(t.contains("M = 5.25, SD = 1.28"), "{t}");
    assert!(t.contains("M = 2.13, SD = 1.13"), "{t}");
    assert!(t.contains("= 63.00"), "{t}");
    let o = scenic(&["stats", "--effect-size"]);
    assert!(stdout(&o).contains("Cohen's d = 1.70"));
}

#[test]
fn stats_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    std::fs::write(p("table.csv"), "cond,A,B\nhigh,10,20\nlow,30,15\n").unwrap();
    std::fs::write(p("a.txt"), "1\n2\n3\n").unwrap();
    std::fs::write(p("b.json"), "[4, 5, 6]").unwrap();
    std::fs::write(
        p("paired.csv"),
        "pre,post\n3.1,4.0\n2.4,3.9\n5.0,5.1\n4.2,5.5\n3.3,4.1\n2.9,3.6\n4.8,5.9\n3.7,4.2\n2.2,3.5\n4.1,4.4\n",
    )
    .unwrap();
    std::fs::write(p("bloom.csv"), "condition,level\nX,create\nX,remember\nY,remember\nY,apply\n").unwrap();

    let o = scenic(&["stats", "--json", "--chi-square", p("table.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let chi = v["A vs B"]["statistic"].as_f64().unwrap();
    // 2x2 Pearson without correction: N(ad-bc)^2 / (r1 r2 c1 c2)
    let oracle = 75.0 * (10.0f64 * 15.0 - 20.0 * 30.0).powi(2) / (30.0 * 45.0 * 40.0 * 35.0);
    assert!((chi - oracle).abs() < 1e-9);

    let o = scenic(&["stats", "--json", "--samples", p("a.txt").to_str().unwrap(), p("b.json").to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["A vs B"]["statistic"], 0.0);

    let o = scenic(&["stats", "--json", "--paired", p("paired.csv").to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["pre vs post"]["statistic"].as_f64().unwrap() + 5.842418871299501).abs() < 1e-9);

    let o = scenic(&["stats", "--bloom", p("bloom.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("50.0%"));

    std::fs::write(p("bad.csv"), "cond,A\nhigh,x\n").unwrap();
    let o = scenic(&["stats", "--chi-square", p("bad.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn serve_reports_port_conflict() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let dir = tempfile::tempdir().unwrap();
    let fixtures = fixture("");
    let o = scenic(&["serve", "--listen", &addr, "--out", dir.path().to_str().unwrap(), "--fixtures", &fixtures]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot listen"));
}
