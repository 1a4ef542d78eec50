//! End-to-end behavior of the `cmkt` binary.

use std::{path::PathBuf, process::Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn cmkt(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_cmkt"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn report(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("JSON report")
}

fn check<'a>(r: &'a Value, name: &str) -> &'a Value {
    r["checks"].as_array().unwrap().iter().find(|c| c["name"] == name).unwrap_or_else(|| panic!("no check {name}"))
}

fn path(name: &str) -> String {
    fixture(name).display().to_string()
}

#[test]
fn minimal_scenario_has_one_base_security() {
    let o = cmkt(&["--format", "json", "run", &path("minimal.json")], &[]);
    assert_eq!(code(&o), 0);
    let r = report(&o);
    assert_eq!(r["format_version"], 1);
    assert_eq!(r["equilibrium"]["securities"].as_array().unwrap().len(), 1);
}

#[test]
fn chain_fixture_is_operationally_complete() {
    let o = cmkt(&["--format", "json", "--strict", "run", &path("chain_oc.json")], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&o);
    assert_eq!(r["equilibrium"]["securities"].as_array().unwrap().len(), 5);
    assert_eq!(r["compare"]["is_oc"], true);
    assert!(r["consensus_gap"]["max_gap"].as_f64().unwrap() < 1e-6);
}

#[test]
fn complete_market_reaches_consensus() {
    let o = cmkt(&["--format", "json", "compare", &path("complete_hetero.json")], &[]);
    assert_eq!(code(&o), 0);
    assert!(report(&o)["consensus_gap"]["max_gap"].as_f64().unwrap() < 1e-6);
}

#[test]
fn non_imap_beliefs_fail_only_under_strict() {
    let relaxed = cmkt(&["--format", "json", "run", &path("non_imap.json")], &[]);
    assert_eq!(code(&relaxed), 0);
    assert_eq!(report(&relaxed)["compare"]["is_oc"], false);
    let strict = cmkt(&["--strict", "run", &path("non_imap.json")], &[]);
    assert_eq!(code(&strict), 1);
}

#[test]
fn bad_cpt_is_an_input_error_with_a_line() {
    let o = cmkt(&["run", &path("bad_cpt.json")], &[]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 9") && err.contains("agents[0].belief.cpts.A2[0]"), "{err}");
    assert!(o.stdout.is_empty());
}

#[test]
fn missing_file_and_bad_flags_are_input_errors() {
    assert_eq!(code(&cmkt(&["run", "/nonexistent/scenario.json"], &[])), 2);
    assert_eq!(code(&cmkt(&["run", &path("minimal.json"), "--tol", "bogus=1"], &[])), 2);
    assert_eq!(code(&cmkt(&["run", &path("minimal.json"), "--tol", "clear_tol=-1"], &[])), 2);
    assert_eq!(code(&cmkt(&["run", &path("minimal.json"), "--tol", "arb_tol=1e-3"], &[])), 2);
    assert_eq!(code(&cmkt(&["run", &path("minimal.json")], &[("CMKT_TOL_CLEAR_TOL", "abc")])), 2);
}

#[test]
fn tolerances_prefer_flags_over_environment() {
    let args = ["--format", "json", "run", &path("minimal.json")];
    let base = report(&cmkt(&args, &[]));
    assert_eq!(check(&base, "market_clearing")["tolerance"], 1e-8);

    let env = report(&cmkt(&args, &[("CMKT_TOL_CLEAR_TOL", "1e-11"), ("CMKT_TOL_ARB_TOL", "1e-3")]));
    assert_eq!(check(&env, "market_clearing")["tolerance"], 1e-11);

    let mut flagged = args.to_vec();
    flagged.extend(["--tol", "clear_tol=1e-5"]);
    let both = report(&cmkt(&flagged, &[("CMKT_TOL_CLEAR_TOL", "1e-11")]));
    assert_eq!(check(&both, "market_clearing")["tolerance"], 1e-5);
}

#[test]
fn arbitrage_quotes_from_the_command_line() {
    let o = cmkt(
        &["--format", "json", "arbitrage", &path("chain_oc.json"), "--quote", "A2=0.4", "--quote", "A1&A3=0.2", "--tol", "arb_tol=1e-6"],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&o);
    let quotes = r["quotes"].as_array().unwrap();
    assert_eq!(quotes.len(), 2);
    assert_eq!(quotes[0]["quote"], "A2=0.4");
    assert!(check(&r, "hedge_shortfall[A2=0.4]")["passed"].as_bool().unwrap());
}

#[test]
fn arbitrage_needs_a_structured_market() {
    let text = std::fs::read_to_string(fixture("complete_hetero.json"))
        .unwrap()
        .replace(r#"{"kind": "complete"}"#, r#"{"kind": "securities", "securities": ["A1", "A2", "A1&A2"]}"#);
    let dir = tempfile::tempdir().unwrap();
    let listed = dir.path().join("listed.json");
    std::fs::write(&listed, text).unwrap();
    let o = cmkt(&["arbitrage", listed.to_str().unwrap(), "--quote", "A2=0.4"], &[]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no DAG structure"));
}

#[test]
fn protocol_reaches_a_fixed_point() {
    let o = cmkt(&["--format", "json", "protocol", &path("protocol_chain.json")], &[]);
    assert_eq!(code(&o), 0);
    let r = report(&o);
    assert_eq!(r["protocol"]["converged"], true);
    assert!(check(&r, "terminal_consensus_gap")["passed"].as_bool().unwrap());
}

#[test]
fn search_with_zero_trials_finds_nothing() {
    let o = cmkt(&["--format", "json", "search", &path("search_log.json"), "--trials", "0"], &[]);
    assert_eq!(code(&o), 0);
    let outcome = &report(&o)["search"]["outcome"];
    assert_eq!(outcome["found"], false);
    assert_eq!(outcome["best_gap"], 0.0);
}

#[test]
fn emitted_counterexample_replays() {
    let dir = tempfile::tempdir().unwrap();
    let emitted = dir.path().join("found.json");
    let o = cmkt(
        &["search", &path("search_log.json"), "--seed", "7", "--emit", emitted.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&o), 0);
    let replay = cmkt(&["--format", "json", "--strict", "run", emitted.to_str().unwrap()], &[]);
    assert_eq!(code(&replay), 0, "{}", String::from_utf8_lossy(&replay.stdout));
    let r = report(&replay);
    assert!(r["consensus_gap"]["max_gap"].as_f64().unwrap() > 1e-3);
    assert!(check(&r, "replayed_gap_difference")["measured"].as_f64().unwrap() <= 1e-9);
    // the checked-in fixture is the same search result
    let recorded: Value = serde_json::from_str(&std::fs::read_to_string(fixture("log_replay.json")).unwrap()).unwrap();
    let fresh: Value = serde_json::from_str(&std::fs::read_to_string(&emitted).unwrap()).unwrap();
    assert_eq!(recorded, fresh);
}

#[test]
fn out_flag_writes_the_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = cmkt(&["run", &path("minimal.json"), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("market_clearing"));
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(written["format_version"], 1);
    assert_eq!(written["command"], "run");
}

fn without_timing(o: &Output) -> String {
    let mut v = report(o);
    v.as_object_mut().unwrap().remove("timing");
    serde_json::to_string_pretty(&v).unwrap()
}

#[test]
fn reports_are_byte_identical_across_runs() {
    for args in [
        vec!["--format", "json", "run", "chain_oc.json"],
        vec!["--format", "json", "protocol", "protocol_chain.json"],
        vec!["--format", "json", "search", "search_log.json", "--trials", "128", "--seed", "3"],
    ] {
        let p = path(args[3]);
        let mut a = args.clone();
        a[3] = &p;
        let first = cmkt(&a, &[]);
        let second = cmkt(&a, &[]);
        assert_eq!(without_timing(&first), without_timing(&second), "{args:?}");
    }
}
