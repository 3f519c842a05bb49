use std::path::Path;
use std::process::{Command, Output};

fn qrm(args: &[&str], workers: usize) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrm")).args(args).env("QRM_WORKERS", workers.to_string()).output().expect("run qrm")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn schedules() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../schedules"))
}

#[test]
fn code_info_reports_parameters_and_divisibility() {
    let o = qrm(&["code-info", "--family", "pqrm", "--rx", "3", "--rz", "3", "--m", "7"], 1);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("N=127 K=1 d=15"), "{s}");
    assert!(s.contains("divisibility nu=2 pass"), "{s}");
    let s = stdout(&qrm(&["code-info", "--code", "d7"], 1));
    assert!(s.contains("N=127 K=1 d=7") && s.contains("nu=3 pass"), "{s}");
    let s = stdout(&qrm(&["code-info", "--code", "d15", "--nu", "3"], 1));
    assert!(s.contains("nu=3 fail"), "{s}");
}

#[test]
fn ft_check_passes_the_bundled_distance_7_schedule() {
    let file = schedules().join("d7.txt");
    let o = qrm(&["ft-check", "--schedule", file.to_str().unwrap(), "--code", "d7", "--state", "plus", "--order", "3"], 1);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).trim_end().ends_with("PASS"));
}

#[test]
fn ft_check_failure_exits_3() {
    // The identity schedule leaves every patch identical, so pairs of faults cancel.
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("id.txt");
    std::fs::write(&file, "E 0 1, E 1 0, E 0 1, E 1 0\nE 0 1, E 1 0, E 0 1, E 1 0\nE 0 1, E 1 0, E 0 1, E 1 0\nE 0 1, E 1 0, E 0 1, E 1 0\n").unwrap();
    let o = qrm(&["ft-check", "--schedule", file.to_str().unwrap(), "--code", "d7", "--state", "plus", "--order", "2"], 1);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(qrm(&["no-such-command"], 1).status.code(), Some(1));
    assert_eq!(qrm(&["code-info", "--bogus"], 1).status.code(), Some(1));
    assert_eq!(qrm(&["ft-check", "--code", "d7", "--state", "plus", "--schedule", "/nonexistent/schedule.txt"], 1).status.code(), Some(1));
    assert_eq!(qrm(&["ft-check", "--rx", "2", "--rz", "2", "--m", "5", "--state", "zero"], 1).status.code(), Some(1));
    assert_eq!(qrm(&["--help"], 1).status.code(), Some(0));
}

#[test]
fn long_runs_need_the_flag() {
    let o = qrm(&["ft-count", "--code", "d15", "--state", "zero", "--type", "z", "--order", "6"], 1);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("estimated cost") && err.contains("--long"), "{err}");
}

#[test]
fn ft_count_writes_json_with_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("count.json");
    let o = qrm(&["ft-count", "--code", "d15", "--state", "zero", "--type", "z", "--order", "4", "--out", out.to_str().unwrap()], 1);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["config"]["command"], "ft-count");
    assert_eq!(v["counts"][0]["total"], 1);
    assert!(v["counts"][0]["witnesses"][0]["residual"].as_str().unwrap().starts_with("0x"));
}

#[test]
fn decode_bench_csv_is_reproducible_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let run = |out: &Path, w| {
        let args = ["decode-bench", "--r", "2", "--m", "6", "--p", "0.03,0.05", "--trials", "20000", "--list", "4", "--seed", "5", "--out", out.to_str().unwrap()];
        assert_eq!(qrm(&args, w).status.code(), Some(0));
        std::fs::read_to_string(out).unwrap()
    };
    let (ta, tb) = (run(&a, 1), run(&b, 3));
    let body = |t: &str| t.lines().skip(1).map(String::from).collect::<Vec<_>>();
    assert_eq!(body(&ta), body(&tb));
    assert!(ta.starts_with("# {") && ta.contains("\"seed\":5"));
    assert_eq!(body(&ta)[0], "p,P_L,stderr,trials,errors,lower_bound");
    assert_eq!(body(&ta).len(), 3);
}

#[test]
fn prep_accept_is_reproducible_across_worker_counts() {
    let args = ["prep-accept", "--code", "d15", "--state", "plus", "--p", "0.001", "--shots", "6400", "--seed", "11"];
    assert_eq!(stdout(&qrm(&args, 1)), stdout(&qrm(&args, 2)));
}

#[test]
fn pools_feed_exrec_and_mismatched_noise_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut pools = Vec::new();
    for (state, seed) in [("zero", "1"), ("plus", "2")] {
        let out = dir.path().join(state);
        let o = qrm(&["pool-gen", "--code", "d15", "--state", state, "--p", "0.002", "--target", "100", "--seed", seed, "--out", out.to_str().unwrap()], 2);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("manifest.json").exists() && out.join("config.json").exists());
        pools.push(out.to_str().unwrap().to_string());
    }
    let out = dir.path().join("exrec.jsonl");
    let o = qrm(&["exrec", "--gate", "cnot", "--p", "0.002", "--trials", "3000", "--pool", &pools[0], "--pool", &pools[1], "--out", out.to_str().unwrap()], 2);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0]["config"]["args"]["seed"], 0);
    assert_eq!(lines[5]["class"], "any");
    let o = qrm(&["exrec", "--gate", "cnot", "--p", "0.001", "--trials", "10", "--pool", &pools[0], "--pool", &pools[1]], 1);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn highrate_verify_checks_programs_against_targets() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("ts.txt");
    // Transversal S at r = 1 (k = 2): x_j gains z_{partner(j)}.
    std::fs::write(&target, "1001\n0110\n0010\n0001\n").unwrap();
    let prog = dir.path().join("prog.txt");
    let o = qrm(&["highrate-verify", "--r", "1", "--target", target.to_str().unwrap(), "--out", prog.to_str().unwrap()], 1);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = qrm(&["highrate-verify", "--r", "1", "--program", prog.to_str().unwrap(), "--target", target.to_str().unwrap()], 1);
    assert_eq!(o.status.code(), Some(0));
    let wrong = dir.path().join("wrong.txt");
    std::fs::write(&wrong, "TH\n").unwrap();
    let o = qrm(&["highrate-verify", "--r", "1", "--program", wrong.to_str().unwrap(), "--target", target.to_str().unwrap()], 1);
    assert_eq!(o.status.code(), Some(3));
    let o = qrm(&["highrate-verify", "--r", "2", "--random", "3", "--seed", "1"], 1);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("3 of 3"));
}

#[test]
fn layout_emit_writes_move_program() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("moves.jsonl");
    let o = qrm(&["layout-emit", "--code", "d15", "--state", "zero", "--out", out.to_str().unwrap()], 1);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("replay matches"));
    let steps: Vec<serde_json::Value> = std::fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    // Per patch: init, 7 encode/return pairs and 7 swaps.
    assert_eq!(steps.len(), 4 * 22);
    for s in &steps {
        assert!(s["step"].is_u64() && s["patch"].is_u64() && s["regions"].is_array());
    }
}
