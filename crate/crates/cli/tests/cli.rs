//! Command-line contract: exit codes, artifact stability across trace
//! levels, and offline/in-kernel agreement on repeated states.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_cog")
}

fn scenarios() -> PathBuf {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios")).to_path_buf()
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn cog")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

#[test]
fn goal_reached_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        "--scenario",
        scenarios().join("game.json").to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--trace",
        "quiet",
    ]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    for artifact in ["trace.txt", "trace.jsonl", "episodic.jsonl", "metrics.json"] {
        assert!(tmp.path().join(artifact).exists(), "missing {artifact}");
    }
}

#[test]
fn missing_config_exits_two() {
    let out = run(&["run", "--scenario", "/nonexistent.json", "--trace", "quiet"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn cycle_limit_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("stall.json");
    // a robot with no rules never reaches the goal
    std::fs::write(
        &config,
        r#"{ "environment": "robot", "env_params": {"items": 1, "episodes": 1}, "rules": [], "max_cycles": 5 }"#,
    )
    .unwrap();
    let out = run(&[
        "run",
        "--scenario",
        config.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
        "--trace",
        "quiet",
    ]);
    assert_eq!(exit_code(&out), 3, "{out:?}");
    // the metrics artifact still exists for the aborted run
    assert!(tmp.path().join("out/metrics.json").exists());
}

#[test]
fn bad_rule_file_exits_four_and_names_the_rule() {
    let tmp = tempfile::tempdir().unwrap();
    let rules = tmp.path().join("bad.rules");
    std::fs::write(
        &rules,
        "rule broken { when: (<s> ^a 1) then: add (<s> ^b <ghost>) }",
    )
    .unwrap();
    let out = run(&["rules", "check", rules.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 4);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("broken"), "{stderr}");
    assert!(stderr.contains(':'), "positions expected: {stderr}");

    // a run with a bad rule file also exits 4
    let config = tmp.path().join("bad.json");
    std::fs::write(
        &config,
        format!(
            r#"{{ "environment": "robot", "env_params": {{"items": 1, "episodes": 1}}, "rules": ["{}"], "max_cycles": 5 }}"#,
            rules.file_name().unwrap().to_str().unwrap()
        ),
    )
    .unwrap();
    let out = run(&[
        "run",
        "--scenario",
        config.to_str().unwrap(),
        "--trace",
        "quiet",
    ]);
    assert_eq!(exit_code(&out), 4, "{out:?}");
}

#[test]
fn ok_rules_report_their_count() {
    let out = run(&[
        "rules",
        "check",
        scenarios().join("robot.rules").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("rules ok"), "{stdout}");
}

fn robot_dump(tmp: &Path) -> PathBuf {
    let out_dir = tmp.join("robot-out");
    let out = run(&[
        "run",
        "--scenario",
        scenarios().join("robot.json").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--trace",
        "quiet",
    ]);
    assert_eq!(exit_code(&out), 0);
    out_dir.join("episodic.jsonl")
}

#[test]
fn dump_range_zero_is_the_initial_snapshot_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = robot_dump(tmp.path());
    let out = run(&[
        "episodic",
        "dump",
        "--in",
        dump.to_str().unwrap(),
        "--range",
        "0..0",
    ]);
    assert_eq!(exit_code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 1, "{stdout}");
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["cycle"], 0);
    assert!(!v["snapshot"].is_null(), "cycle 0 carries a snapshot");
}

#[test]
fn out_of_range_exits_two_and_corrupt_dump_exits_five() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = robot_dump(tmp.path());
    let out = run(&[
        "episodic",
        "dump",
        "--in",
        dump.to_str().unwrap(),
        "--range",
        "100..200",
    ]);
    assert_eq!(exit_code(&out), 2);

    let bad = tmp.path().join("corrupt.jsonl");
    std::fs::write(&bad, "{\"cycle\": 0, \"adds\": \"not-an-array\"}\n").unwrap();
    let out = run(&["episodic", "repeats", "--in", bad.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 5);
}

#[test]
fn offline_repeats_agree_with_the_kernel() {
    use cog_core::hash::ScopeFilter;
    use cog_core::scenario::{load_config, run_scenario};
    use cog_core::symbols::Symbol;

    let tmp = tempfile::tempdir().unwrap();
    let dump = robot_dump(tmp.path());
    let out = run(&[
        "episodic",
        "repeats",
        "--in",
        dump.to_str().unwrap(),
        "--scope",
        "world",
    ]);
    assert_eq!(exit_code(&out), 0);
    let offline = String::from_utf8_lossy(&out.stdout);

    let (config, base) = load_config(&scenarios().join("robot.json")).unwrap();
    let report = run_scenario(&config, &base).unwrap();
    let scope = ScopeFilter::attrs(
        ["world", "door", "holding", "remaining", "next-item", "item", "name", "at"]
            .map(Symbol::id),
    );
    let last = report.agent.episodic.last_cycle().unwrap();
    let in_kernel = report
        .agent
        .episodic
        .find_repeated_states(0, last, &scope, true)
        .unwrap();
    let mut expected: String = in_kernel
        .iter()
        .map(|(i, j)| format!("{i} {j}\n"))
        .collect();
    expected.push_str(&format!("{} pairs\n", in_kernel.len()));
    assert_eq!(offline, expected);
}

#[test]
fn trace_level_never_changes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for level in ["quiet", "summary", "full"] {
        let out_dir = tmp.path().join(level);
        let out = run(&[
            "run",
            "--scenario",
            scenarios().join("wordle.json").to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--trace",
            level,
        ]);
        assert_eq!(exit_code(&out), 0);
        dirs.push(out_dir);
    }
    for artifact in ["trace.txt", "trace.jsonl", "episodic.jsonl", "metrics.json"] {
        let reference = std::fs::read(dirs[0].join(artifact)).unwrap();
        for dir in &dirs[1..] {
            assert_eq!(
                reference,
                std::fs::read(dir.join(artifact)).unwrap(),
                "{artifact} differs across trace levels"
            );
        }
    }
}
