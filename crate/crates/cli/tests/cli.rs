//! End-to-end tests of the `pooch` binary: pipeline consistency, file
//! round-trips, and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pooch_core::model::Profile;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pooch"))
}

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "pooch {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn run_err(args: &[&str]) -> (i32, String) {
    let Output { status, stderr, .. } = bin().args(args).output().expect("binary runs");
    (
        status.code().expect("exit code"),
        String::from_utf8(stderr).unwrap(),
    )
}

fn field(line: &str, key: &str) -> u64 {
    line.split_whitespace()
        .find_map(|tok| tok.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("missing {key} in: {line}"))
        .parse()
        .unwrap()
}

fn tmpdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pooch-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_optimize_simulate_pipeline_is_consistent() {
    let dir = tmpdir("pipeline");
    let profile = dir.join("chain.json");
    let plan = dir.join("chain.plan.json");
    run_ok(&[
        "gen",
        "--shape",
        "chain",
        "--n",
        "6",
        "--out",
        path_str(&profile),
    ]);
    let opt_out = run_ok(&[
        "optimize",
        "--profile",
        path_str(&profile),
        "--out",
        path_str(&plan),
    ]);
    let reported = field(opt_out.lines().next().unwrap(), "makespan_us");

    let sim_out = run_ok(&[
        "simulate",
        "--profile",
        path_str(&profile),
        "--plan",
        path_str(&plan),
        "--sched",
        "eager",
        "--trace",
        path_str(&dir.join("trace.json")),
        "--memtrace",
        path_str(&dir.join("mem.csv")),
    ]);
    let simulated = field(sim_out.lines().next().unwrap(), "makespan_us");
    assert_eq!(
        reported, simulated,
        "plan must re-simulate to the reported makespan"
    );

    // The synthetic chain fits in-core, so the emitted plan keeps everything.
    let plan_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&plan).unwrap()).unwrap();
    assert!(plan_json["classes"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c == "keep"));

    // Emitted files parse: the report ties back to the plan, the trace is
    // valid JSON, the ledger has the documented header.
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("chain.plan.report.json")).unwrap())
            .unwrap();
    assert_eq!(report["makespan_us"].as_u64().unwrap(), reported);
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("trace.json")).unwrap()).unwrap();
    let first = &trace.as_array().unwrap()[0];
    assert_eq!(first["ph"], "X");
    assert_eq!(first["pid"], 0);
    let mem = std::fs::read_to_string(dir.join("mem.csv")).unwrap();
    assert!(mem.starts_with("time_us,delta_bytes,total_bytes,layer,reason\n"));
    let log = std::fs::read_to_string(dir.join("chain.plan.log")).unwrap();
    assert!(log.is_empty() || log.lines().all(|l| l.starts_with("step")));
}

#[test]
fn profile_files_round_trip_exactly() {
    let dir = tmpdir("roundtrip");
    let path = dir.join("resnet.json");
    run_ok(&[
        "gen",
        "--shape",
        "resnet_like",
        "--blocks",
        "4",
        "--batch",
        "32",
        "--seed",
        "9",
        "--env",
        "nvlink_power9",
        "--out",
        path_str(&path),
    ]);
    let text = std::fs::read_to_string(&path).unwrap();
    let profile: Profile = serde_json::from_str(&text).unwrap();
    profile.validate().unwrap();
    let re_serialized = serde_json::to_string_pretty(&profile).unwrap();
    let re_parsed: Profile = serde_json::from_str(&re_serialized).unwrap();
    assert_eq!(profile, re_parsed);

    // Identical generator inputs produce identical bytes.
    let again = dir.join("resnet2.json");
    run_ok(&[
        "gen",
        "--shape",
        "resnet_like",
        "--blocks",
        "4",
        "--batch",
        "32",
        "--seed",
        "9",
        "--env",
        "nvlink_power9",
        "--out",
        path_str(&again),
    ]);
    assert_eq!(text, std::fs::read_to_string(&again).unwrap());
}

#[test]
fn compare_prints_a_monotone_makespan_column() {
    let dir = tmpdir("compare");
    let profile = dir.join("resnet.json");
    run_ok(&[
        "gen",
        "--shape",
        "resnet_like",
        "--blocks",
        "4",
        "--batch",
        "1024",
        "--seed",
        "3",
        "--out",
        path_str(&profile),
    ]);
    let out = run_ok(&[
        "compare",
        "--profile",
        path_str(&profile),
        "--strategies",
        "swap-all-naive,swap-all,swap-opt,pooch",
        "--li-cap",
        "6",
        "--parallel",
        "2",
    ]);
    let makespans: Vec<u64> = out
        .lines()
        .skip(1)
        .map(|row| row.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(makespans.len(), 4);
    for pair in makespans.windows(2) {
        assert!(pair[0] >= pair[1], "column not monotone: {makespans:?}");
    }
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tmpdir("badinput");
    let path = dir.join("bad.json");
    std::fs::write(
        &path,
        r#"{"layers":[{"id":0,"name":"a","kind":"other","fwd_time_us":1,"bwd_time_us":1,
            "output_bytes":1,"inputs":[]},{"id":1,"name":"b","kind":"other","fwd_time_us":1,
            "bwd_time_us":1,"output_bytes":1,"inputs":[2]}],
            "env":{"capacity_bytes":100,"d2h_bw_bytes_per_s":1000000,
                   "h2d_bw_bytes_per_s":1000000,"resident_base_bytes":1}}"#,
    )
    .unwrap();
    let (code, stderr) = run_err(&[
        "optimize",
        "--profile",
        path_str(&path),
        "--out",
        path_str(&dir.join("plan.json")),
    ]);
    assert_eq!(code, 1);
    assert!(stderr.contains("not topological"), "stderr: {stderr}");
}

#[test]
fn unplannable_profiles_exit_with_two() {
    let dir = tmpdir("infeasible");
    let path = dir.join("big.json");
    std::fs::write(
        &path,
        r#"{"layers":[{"id":0,"name":"a","kind":"other","fwd_time_us":1,"bwd_time_us":1,
            "output_bytes":1000,"inputs":[]}],
            "env":{"capacity_bytes":100,"d2h_bw_bytes_per_s":1000000,
                   "h2d_bw_bytes_per_s":1000000,"resident_base_bytes":1}}"#,
    )
    .unwrap();
    let (code, stderr) = run_err(&[
        "optimize",
        "--profile",
        path_str(&path),
        "--out",
        path_str(&dir.join("plan.json")),
    ]);
    assert_eq!(code, 2);
    assert!(stderr.contains("plannable"), "stderr: {stderr}");
}

#[test]
fn infeasible_plan_simulation_exits_with_two() {
    let dir = tmpdir("oomplan");
    let profile = dir.join("p.json");
    std::fs::write(
        &profile,
        r#"{"layers":[
            {"id":0,"name":"a","kind":"other","fwd_time_us":4,"bwd_time_us":4,"output_bytes":30,"inputs":[]},
            {"id":1,"name":"b","kind":"other","fwd_time_us":4,"bwd_time_us":4,"output_bytes":30,"inputs":[0]},
            {"id":2,"name":"c","kind":"other","fwd_time_us":4,"bwd_time_us":4,"output_bytes":30,"inputs":[1]}],
            "env":{"capacity_bytes":75,"d2h_bw_bytes_per_s":1000000,
                   "h2d_bw_bytes_per_s":1000000,"resident_base_bytes":1}}"#,
    )
    .unwrap();
    let plan = dir.join("keep.json");
    std::fs::write(&plan, r#"{"classes":["keep","keep","keep"]}"#).unwrap();
    let (code, stderr) = run_err(&[
        "simulate",
        "--profile",
        path_str(&profile),
        "--plan",
        path_str(&plan),
    ]);
    assert_eq!(code, 2);
    assert!(stderr.contains("out of memory"), "stderr: {stderr}");
}

#[test]
fn oracle_guards_large_graphs_with_usage_error() {
    let dir = tmpdir("oracle");
    let profile = dir.join("p.json");
    run_ok(&[
        "gen",
        "--shape",
        "chain",
        "--n",
        "12",
        "--out",
        path_str(&profile),
    ]);
    let (code, stderr) = run_err(&["oracle", "--profile", path_str(&profile)]);
    assert_eq!(code, 1);
    assert!(stderr.contains("size guard"), "stderr: {stderr}");

    let small = dir.join("small.json");
    run_ok(&[
        "gen",
        "--shape",
        "chain",
        "--n",
        "3",
        "--out",
        path_str(&small),
    ]);
    let out = run_ok(&["oracle", "--profile", path_str(&small), "--sched", "eager"]);
    assert!(out.contains("evaluated=18"), "out: {out}");
}

#[test]
fn batch_flag_scales_before_planning() {
    let dir = tmpdir("batch");
    let profile = dir.join("p.json");
    run_ok(&[
        "gen",
        "--shape",
        "chain",
        "--n",
        "3",
        "--out",
        path_str(&profile),
    ]);
    let plan = dir.join("plan.json");
    let base = run_ok(&[
        "optimize",
        "--profile",
        path_str(&profile),
        "--out",
        path_str(&plan),
    ]);
    let doubled = run_ok(&[
        "optimize",
        "--profile",
        path_str(&profile),
        "--batch",
        "2",
        "--out",
        path_str(&plan),
    ]);
    let m1 = field(base.lines().next().unwrap(), "makespan_us");
    let m2 = field(doubled.lines().next().unwrap(), "makespan_us");
    assert_eq!(m2, 2 * m1, "in-core chain should scale linearly");
}
