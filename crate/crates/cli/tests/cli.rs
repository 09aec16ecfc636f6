use std::path::Path;
use std::process::{Command, Output};

fn bidemo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bidemo")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn episode_round_trip_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let session = dir.path().join("session");
    let ep = dir.path().join("ep.bdep");
    let report = dir.path().join("report.json");
    let plots = dir.path().join("plots");

    let out = bidemo(&["synth", "episode", "-o", path(&session), "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let calib = session.join("ground_truth/calibration.toml");

    let out = bidemo(&[
        "process",
        path(&session),
        "--calib",
        path(&calib),
        "-o",
        path(&ep),
        "--report",
        path(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(rep["passed"], true);

    let out = bidemo(&["validate", path(&ep)]);
    assert_eq!(code(&out), 0);
    let again: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(again["delta_chain_error"], rep["delta_chain_error"]);

    let out = bidemo(&["inspect", path(&ep), "--plot", path(&plots)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("validation   pass"));
    assert_eq!(std::fs::read_dir(&plots).unwrap().count(), 5);

    // Identical inputs give identical bytes.
    let ep2 = dir.path().join("ep2.bdep");
    bidemo(&["process", path(&session), "--calib", path(&calib), "-o", path(&ep2)]);
    assert_eq!(std::fs::read(&ep).unwrap(), std::fs::read(&ep2).unwrap());

    // Without compensation the episode is rejected: exit 1, nothing written.
    let ep3 = dir.path().join("ep3.bdep");
    let out = bidemo(&[
        "process",
        path(&session),
        "--calib",
        path(&calib),
        "-o",
        path(&ep3),
        "--no-latency-compensation",
    ]);
    assert_eq!(code(&out), 1);
    assert!(!ep3.exists());
    let rep: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((rep["skew"]["median"].as_f64().unwrap() - 0.13).abs() < 0.02);
}

#[test]
fn calibration_subcommands_fill_one_file() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs");
    let clock = dir.path().join("clock");
    let calib = dir.path().join("calib.toml");

    assert_eq!(code(&bidemo(&["synth", "handeye", "-o", path(&pairs), "--seed", "2"])), 0);
    let out = bidemo(&[
        "calibrate-handeye",
        path(&pairs.join("pairs.txt")),
        "-o",
        path(&calib),
        "--device",
        "controller-left",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(result["residual_trans"].as_f64().unwrap() < 1e-9);

    assert_eq!(code(&bidemo(&["synth", "latency", "-o", path(&clock), "--duration", "2"])), 0);
    let out = bidemo(&["measure-latency", path(&clock), "-o", path(&calib)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let text = std::fs::read_to_string(&calib).unwrap();
    assert!(text.contains("controller-left"));
    assert!(text.contains("right/tactile1"));
}

#[test]
fn input_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let calib = dir.path().join("c.toml");
    std::fs::write(&calib, "").unwrap();

    let out = bidemo(&["process", path(&empty), "--calib", path(&calib), "-o", path(&dir.path().join("x"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));

    let bogus = dir.path().join("bogus.bdep");
    std::fs::write(&bogus, b"not an episode").unwrap();
    assert_eq!(code(&bidemo(&["validate", path(&bogus)])), 2);
    assert_eq!(code(&bidemo(&["no-such-command"])), 2);

    let bad_pairs = dir.path().join("pairs.txt");
    std::fs::write(&bad_pairs, "1 2 3\n").unwrap();
    let out = bidemo(&["calibrate-handeye", path(&bad_pairs), "-o", path(&calib)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}
