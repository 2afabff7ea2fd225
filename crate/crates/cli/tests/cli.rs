use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dkoop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dkoop"))
        .args(args)
        .output()
        .expect("spawn dkoop")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two agents each holding one scalar sample of `x ↦ x` on a single edge.
fn worked_config(dir: &Path, graph: &str) -> std::path::PathBuf {
    fs::write(dir.join("X.csv"), "1,1\n").unwrap();
    fs::write(dir.join("Y.csv"), "1,1\n").unwrap();
    let cfg = dir.join("worked.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"data": {{"x": "X.csv", "y": "Y.csv", "widths": [1, 1]}},
                "graph": {graph},
                "gains": {{"k_p": 1.0, "k_i": 1.0, "theta": 0.5}},
                "t_max": 500}}"#
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn desk_experiment_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&dkoop(&["experiment", "--out", path_str(dir.path())]));
    assert!(stdout.contains("converged"), "{stdout}");
    for f in [
        "spectrum_Kave.csv",
        "spectrum_Kstar.csv",
        "diff_matrix.csv",
        "fit_trace.csv",
        "rollout_error.csv",
        "report.json",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let rep: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["diverged"], false);
    let s = &rep["summary"];
    assert!(s["final_kkt_residual"].as_f64().unwrap() <= 1e-8);
    assert!(s["rho_max"].as_f64().unwrap() < 1.0);
    assert!(s["max_relative_deviation"].as_f64().unwrap() <= 1e-7);

    let trace = fs::read_to_string(dir.path().join("fit_trace.csv")).unwrap();
    assert!(trace.lines().count() > 2);
}

#[test]
fn worked_instance_sweep_contracts_at_half() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = worked_config(dir.path(), r#""complete""#);
    let out = dir.path().join("out");
    ok(&dkoop(&[
        "alpha-sweep",
        "--config",
        path_str(&cfg),
        "--theta",
        "0.5",
        "--out",
        path_str(&out),
    ]));
    let csv = fs::read_to_string(out.join("alpha_sweep.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    let num = |name: &str| col(name).parse::<f64>().unwrap();
    assert!((num("alpha") - 0.5).abs() < 1e-12);
    assert!((num("alpha_max") - 1.0).abs() < 1e-12);
    assert!((num("rho_max") - 0.5).abs() < 1e-12);
    assert_eq!(col("status"), "converged");
    assert!(num("contraction") <= 0.52, "{}", col("contraction"));
}

#[test]
fn solve_central_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("X.csv"), "1,0,1\n0,1,1\n").unwrap();
    fs::write(dir.path().join("Y.csv"), "2,0,2\n0,3,3\n").unwrap();
    let x = dir.path().join("X.csv");
    let y = dir.path().join("Y.csv");
    ok(&dkoop(&[
        "solve-central",
        "--x",
        path_str(&x),
        "--y",
        path_str(&y),
        "--out",
        path_str(dir.path()),
    ]));
    let k = fs::read_to_string(dir.path().join("Kstar.csv")).unwrap();
    let vals: Vec<f64> = k
        .lines()
        .flat_map(|l| {
            l.split(',')
                .map(|v| v.parse::<f64>().unwrap())
                .collect::<Vec<_>>()
        })
        .collect();
    let want = [2.0, 0.0, 0.0, 3.0];
    for (g, w) in vals.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{vals:?}");
    }
}

#[test]
fn gen_writes_csv_and_binary_frames() {
    let dir = tempfile::tempdir().unwrap();
    ok(&dkoop(&[
        "gen",
        "--frames",
        "4",
        "--seed",
        "3",
        "--out",
        path_str(dir.path()),
    ]));
    let bin = fs::read(dir.path().join("frames.bin")).unwrap();
    let g = u64::from_le_bytes(bin[0..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bin[8..16].try_into().unwrap()) as usize;
    assert_eq!(count, 4);
    assert_eq!(bin.len(), 16 + 8 * g * g * count);
    let last = fs::read_to_string(dir.path().join("frames").join("frame_00003.csv")).unwrap();
    let rows: Vec<&str> = last.lines().collect();
    assert_eq!(rows.len(), g);
    let first: f64 = rows[0].split(',').next().unwrap().parse().unwrap();
    let off = 16 + 8 * (3 * g * g);
    assert_eq!(
        first,
        f64::from_le_bytes(bin[off..off + 8].try_into().unwrap())
    );

    // Same seed, same frames; a different seed changes them.
    let again = tempfile::tempdir().unwrap();
    ok(&dkoop(&[
        "gen",
        "--frames",
        "4",
        "--seed",
        "3",
        "--out",
        path_str(again.path()),
    ]));
    assert_eq!(bin, fs::read(again.path().join("frames.bin")).unwrap());
    ok(&dkoop(&[
        "gen",
        "--frames",
        "4",
        "--seed",
        "4",
        "--out",
        path_str(again.path()),
    ]));
    assert_ne!(bin, fs::read(again.path().join("frames.bin")).unwrap());
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"gains": {"k_p": 1.0, "k_i": 1.0}}"#).unwrap();
    let out = dkoop(&[
        "experiment",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(&cfg, r#"{"unknown_key": 1}"#).unwrap();
    let out = dkoop(&["experiment", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let out = dkoop(&[
        "experiment",
        "--config",
        path_str(&dir.path().join("missing.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn disconnected_graph_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = worked_config(dir.path(), r#"{"p": 2, "edges": []}"#);
    let out = dkoop(&["alpha-sweep", "--config", path_str(&cfg)]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn divergent_step_exits_4_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fast.json");
    fs::write(
        &cfg,
        r#"{"gains": {"k_p": 5.0, "k_i": 2.0, "theta": 3.0}, "init": {"mode": "uniform", "seed": 1}}"#,
    )
    .unwrap();
    let out = dkoop(&[
        "experiment",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rep: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["diverged"], true);
}
