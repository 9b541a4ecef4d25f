use std::path::Path;
use std::process::{Command, Output};

fn gpdf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpdf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn gpdf")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = gpdf(dir, args);
    assert!(
        out.status.success(),
        "gpdf {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn circle_model(dir: &Path, variant: &str) {
    ok(dir, &["synth", "--scene", "circle", "-n", "128", "-o", "circle.xyz"]);
    ok(
        dir,
        &["build", "-i", "circle.xyz", "-o", "circle.bin", "--variant", variant],
    );
}

#[test]
fn help_exits_zero_and_bad_usage_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gpdf(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(gpdf(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(gpdf(dir.path(), &["build", "-i", "x.xyz"]).status.code(), Some(1));
    assert_eq!(
        gpdf(
            dir.path(),
            &["build", "-i", "missing.xyz", "-o", "m.bin", "--variant", "reverting"]
        )
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn query_prints_distance_gradient_normal_and_uncertainty() {
    let dir = tempfile::tempdir().unwrap();
    circle_model(dir.path(), "reverting");
    let line = ok(dir.path(), &["query", "-m", "circle.bin", "-p", "1.3 0"]);
    let v: Vec<f64> = line.split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(v.len(), 6);
    assert!((v[0] - 0.3).abs() < 0.02, "d = {}", v[0]);
    assert!(v[1] > 0.9 && v[3] < -0.9, "gradient and normal point along the x axis");
    assert!(v[5] >= 0.0);

    let out = gpdf(dir.path(), &["query", "-m", "circle.bin", "-p", "1 2 3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_parameters_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--scene", "circle", "-n", "64", "-o", "c.xyz"]);
    for extra in [&["--lambda", "5"][..], &["--length-scale", "-1"], &["--noise", "-0.1"]] {
        let mut args = vec!["build", "-i", "c.xyz", "-o", "c.bin", "--variant", "reverting"];
        args.extend_from_slice(extra);
        assert_eq!(gpdf(dir.path(), &args).status.code(), Some(1), "{extra:?}");
    }
    std::fs::write(dir.path().join("bad.xyz"), "0 0\n1 oops\n").unwrap();
    let out = gpdf(
        dir.path(),
        &["build", "-i", "bad.xyz", "-o", "b.bin", "--variant", "loggpis"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn numerical_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    circle_model(dir.path(), "reverting");
    // the start sits on the surface
    let out = gpdf(
        dir.path(),
        &[
            "plan",
            "-m",
            "circle.bin",
            "--start",
            "1 0",
            "--goal",
            "2 2",
            "-o",
            "p.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = gpdf(
        dir.path(),
        &[
            "bench",
            "-m",
            "circle.bin",
            "-i",
            "circle.xyz",
            "--bbox",
            "-1 -1 1 1",
            "--cell",
            "0.1",
            "--band",
            "5 6",
            "-o",
            "r.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn two_dimensional_mesh_writes_closed_polylines() {
    let dir = tempfile::tempdir().unwrap();
    circle_model(dir.path(), "loggpis");
    ok(
        dir.path(),
        &[
            "mesh",
            "-m",
            "circle.bin",
            "--bbox",
            "-1.5 -1.5 1.5 1.5",
            "--cell",
            "0.05",
            "--iso",
            "0.1",
            "-o",
            "c.txt",
        ],
    );
    let text = std::fs::read_to_string(dir.path().join("c.txt")).unwrap();
    let lines: Vec<Vec<&str>> = text
        .split("\n\n")
        .map(|b| b.lines().filter(|l| !l.is_empty()).collect::<Vec<_>>())
        .filter(|b| !b.is_empty())
        .collect();
    assert_eq!(lines.len(), 2, "inner and outer contour");
    for l in &lines {
        assert_eq!(l.first(), l.last(), "closed loop repeats its first point");
    }
}

#[test]
fn odometry_recovers_a_known_offset() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["synth", "--scene", "lshape", "-n", "300", "-o", "map.xyz"],
    );
    ok(
        dir.path(),
        &["build", "-i", "map.xyz", "-o", "map.bin", "--variant", "reverting"],
    );
    ok(
        dir.path(),
        &[
            "synth",
            "--scene",
            "lshape",
            "-n",
            "300",
            "--transform",
            "0.04 0.03 -0.05",
            "-o",
            "scan.xyz",
        ],
    );
    ok(
        dir.path(),
        &["odom", "-m", "map.bin", "-s", "scan.xyz", "-o", "traj.txt"],
    );
    let line = std::fs::read_to_string(dir.path().join("traj.txt")).unwrap();
    let v: Vec<f64> = line.split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(v.len(), 8);
    // the recovered pose undoes the applied transform
    let theta = 0.05f64;
    let expect = [
        -(theta.cos() * 0.04 - theta.sin() * 0.03),
        -(theta.sin() * 0.04 + theta.cos() * 0.03),
    ];
    assert!(
        (v[1] - expect[0]).abs() < 5e-3 && (v[2] - expect[1]).abs() < 5e-3,
        "{v:?} vs {expect:?}"
    );
    let yaw = 2.0 * v[6].atan2(v[7]);
    assert!((yaw - theta).abs() < 0.5f64.to_radians(), "yaw {yaw}");
}

#[test]
fn submap_model_answers_queries() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--scene", "circle", "-n", "256", "-o", "c.xyz"]);
    let summary = ok(
        dir.path(),
        &[
            "build",
            "-i",
            "c.xyz",
            "-o",
            "g.bin",
            "--variant",
            "loggpis",
            "--block-size",
            "1.2",
        ],
    );
    assert!(summary.contains("4 blocks"), "{summary}");
    let line = ok(dir.path(), &["query", "-m", "g.bin", "-p", "0 0.7"]);
    let d: f64 = line.split_whitespace().next().unwrap().parse().unwrap();
    assert!((d - 0.3).abs() < 0.02, "d = {d}");
}

#[test]
fn plan_writes_path_and_cost_history() {
    let dir = tempfile::tempdir().unwrap();
    circle_model(dir.path(), "reverting");
    ok(
        dir.path(),
        &[
            "plan",
            "-m",
            "circle.bin",
            "--start",
            "-1.5 1.1",
            "--goal",
            "1.5 1.1",
            "--margin",
            "0.2",
            "-o",
            "p.txt",
            "--cost-csv",
            "cost.csv",
        ],
    );
    let path = std::fs::read_to_string(dir.path().join("p.txt")).unwrap();
    let pts: Vec<Vec<f64>> = path
        .lines()
        .map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect())
        .collect();
    assert_eq!(pts.len(), 50);
    assert_eq!(pts[0], vec![-1.5, 1.1]);
    assert_eq!(pts[49], vec![1.5, 1.1]);
    let costs = std::fs::read_to_string(dir.path().join("cost.csv")).unwrap();
    let c: Vec<f64> = costs
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(costs.starts_with("iter,cost\n"));
    assert!(c.windows(2).all(|w| w[1] <= w[0]));
}
