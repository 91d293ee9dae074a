//! End-to-end checks of the binary: round trips through generate → run
//! → verify, exit-code contract, CSV schema, and byte determinism.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rejectsched"))
}

fn run_ok(args: &[&str], dir: &Path) -> Output {
    let out = bin().args(args).current_dir(dir).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str], dir: &Path) -> i32 {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
        .status
        .code()
        .expect("exit code")
}

#[test]
fn flow_generate_run_verify_round_trip() {
    let dir = TempDir::new().unwrap();
    run_ok(
        &["generate", "--engine", "flow", "--seed", "7", "--n", "6", "--m", "2", "--out", "inst.json"],
        dir.path(),
    );
    run_ok(
        &["run", "inst.json", "--engine", "flow", "--eps", "0.5", "--out", "res.json"],
        dir.path(),
    );
    assert_eq!(exit_code(&["verify", "res.json", "--engine", "flow"], dir.path()), 0);
}

#[test]
fn run_reports_flow_four_on_the_two_job_instance() {
    // Two jobs at t=0 with volumes 1 and 2 on one machine: the engine
    // finishes them shortest-first for flow 1 + 3 = 4, and its duals
    // certify.
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("two.json"),
        r#"{"model":"flow","machines":1,"jobs":[
            {"id":0,"release":0.0,"weight":1.0,"proc":[1.0]},
            {"id":1,"release":0.0,"weight":1.0,"proc":[2.0]}]}"#,
    )
    .unwrap();
    let out = run_ok(
        &["run", "two.json", "--engine", "flow", "--eps", "0.5", "--out", "res.json"],
        dir.path(),
    );
    assert!(out.stdout.is_empty());
    let res: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("res.json")).unwrap())
            .unwrap();
    assert_eq!(res["total_flow"], 4.0);
    assert_eq!(exit_code(&["verify", "res.json", "--engine", "flow"], dir.path()), 0);
}

#[test]
fn verify_exits_one_on_corrupted_duals() {
    let dir = TempDir::new().unwrap();
    run_ok(
        &["generate", "--engine", "flow", "--seed", "3", "--n", "5", "--out", "inst.json"],
        dir.path(),
    );
    run_ok(
        &["run", "inst.json", "--engine", "flow", "--eps", "1", "--out", "res.json"],
        dir.path(),
    );
    let mut res: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("res.json")).unwrap())
            .unwrap();
    for (_, lam) in res["lambda"].as_object_mut().unwrap() {
        let inflated = lam.as_f64().unwrap() * 10.0;
        *lam = serde_json::json!(inflated);
    }
    std::fs::write(dir.path().join("bad.json"), serde_json::to_string(&res).unwrap()).unwrap();
    assert_eq!(exit_code(&["verify", "bad.json", "--engine", "flow"], dir.path()), 1);
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    // Unreadable instance file.
    assert_eq!(
        exit_code(&["run", "missing.json", "--engine", "flow", "--eps", "1"], dir.path()),
        2
    );
    // Missing required ε.
    run_ok(
        &["generate", "--engine", "flow", "--seed", "0", "--n", "3", "--out", "i.json"],
        dir.path(),
    );
    assert_eq!(exit_code(&["run", "i.json", "--engine", "flow"], dir.path()), 2);
    // Engine/model mismatch.
    assert_eq!(exit_code(&["run", "i.json", "--engine", "energy"], dir.path()), 2);
    // Unknown flag value (clap usage error).
    assert_eq!(exit_code(&["run", "i.json", "--engine", "nope", "--eps", "1"], dir.path()), 2);
}

#[test]
fn flow_energy_round_trip_certifies() {
    let dir = TempDir::new().unwrap();
    run_ok(
        &["generate", "--engine", "flow_energy", "--seed", "11", "--n", "5", "--out", "e.json"],
        dir.path(),
    );
    run_ok(
        &["run", "e.json", "--engine", "flow_energy", "--eps", "1", "--out", "er.json"],
        dir.path(),
    );
    assert_eq!(exit_code(&["verify", "er.json", "--engine", "flow_energy"], dir.path()), 0);
}

#[test]
fn energy_round_trip_certifies_and_ratio_row_is_complete() {
    let dir = TempDir::new().unwrap();
    run_ok(
        &["generate", "--engine", "energy", "--seed", "5", "--n", "4", "--out", "d.json"],
        dir.path(),
    );
    run_ok(&["run", "d.json", "--engine", "energy", "--out", "dr.json"], dir.path());
    assert_eq!(exit_code(&["verify", "dr.json", "--engine", "energy"], dir.path()), 0);

    let out = run_ok(&["ratio", "d.json", "--engine", "energy"], dir.path());
    let table = String::from_utf8(out.stdout).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "instance_id,engine,eps,alpha,n,m,alg_cost,dual_lb,opt,ratio_vs_opt,ratio_vs_duallb,rejected_frac,runtime_ms"
    );
    let cells: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(cells[0], "d");
    assert_eq!(cells[1], "energy");
    assert_eq!(cells[2], ""); // eps does not apply
    assert_eq!(cells[3], "2"); // generator's default exponent
    // Small instance: the exact optimum is computed and bounds the
    // greedy from below.
    let alg: f64 = cells[6].parse().unwrap();
    let opt: f64 = cells[8].parse().unwrap();
    assert!(opt <= alg + 1e-9);
    assert_eq!(cells[12], "0"); // reproducible runtime by default
}

#[test]
fn lb1_sweep_pins_the_saturating_ratio() {
    // The engine answers the two-phase flood by rejecting the long job
    // immediately, so the observed ratio sits at exactly 1/3 for every
    // batch length instead of growing.
    let dir = TempDir::new().unwrap();
    let out = run_ok(&["sweep", "--adversary", "lb1", "--L", "4,16,64"], dir.path());
    let table = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (row, l) in rows.iter().zip(["lb1-L0004", "lb1-L0016", "lb1-L0064"]) {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[0], l);
        let ratio: f64 = cells[9].parse().unwrap();
        assert!((ratio - 1.0 / 3.0).abs() < 1e-12, "{l}: ratio {ratio}");
    }
}

#[test]
fn lb2_adversary_transcript_is_valid_json_with_bounded_cost() {
    let dir = TempDir::new().unwrap();
    let out = run_ok(&["adversary", "lb2", "--alpha", "2"], dir.path());
    let t: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(t["jobs"].as_array().unwrap().len(), 2);
    assert!(t["adversary_cost"].as_f64().unwrap() <= 27.0);
    assert!(t["ratio"].as_f64().unwrap() >= 1.0);
}

#[test]
fn sweeps_are_byte_identical_across_reruns_and_thread_counts() {
    let dir = TempDir::new().unwrap();
    let args = [
        "sweep", "--engine", "flow", "--seeds", "8", "--n", "5", "--m", "2", "--eps", "1,0.5",
    ];
    let base = run_ok(&args, dir.path()).stdout;
    let rerun = run_ok(&args, dir.path()).stdout;
    assert_eq!(base, rerun, "rerun changed bytes");
    for threads in ["1", "3"] {
        let out = bin()
            .args(args)
            .env("REJECTSCHED_THREADS", threads)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success());
        assert_eq!(base, out.stdout, "thread count {threads} changed bytes");
    }
}

#[test]
fn generate_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    let a = run_ok(
        &["generate", "--engine", "flow_energy", "--seed", "9", "--n", "7", "--m", "2"],
        dir.path(),
    )
    .stdout;
    let b = run_ok(
        &["generate", "--engine", "flow_energy", "--seed", "9", "--n", "7", "--m", "2"],
        dir.path(),
    )
    .stdout;
    assert_eq!(a, b);
    let c = run_ok(
        &["generate", "--engine", "flow_energy", "--seed", "10", "--n", "7", "--m", "2"],
        dir.path(),
    )
    .stdout;
    assert_ne!(a, c);
}

#[test]
fn custom_grid_file_reaches_the_energy_engine() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("grid.json"),
        r#"{"speeds":[1.0,2.0,4.0],"time_step":0.25,"eps_disc":0.05}"#,
    )
    .unwrap();
    run_ok(
        &["generate", "--engine", "energy", "--seed", "2", "--n", "3", "--out", "d.json"],
        dir.path(),
    );
    run_ok(
        &["run", "d.json", "--engine", "energy", "--grid", "grid.json", "--out", "dr.json"],
        dir.path(),
    );
    let file: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("dr.json")).unwrap())
            .unwrap();
    assert_eq!(file["grids"]["speeds"], serde_json::json!([1.0, 2.0, 4.0]));
    assert_eq!(exit_code(&["verify", "dr.json", "--engine", "energy"], dir.path()), 0);
}
