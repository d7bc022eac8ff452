//! End-to-end runs of the `planeopt` binary on small synthetic datasets.

use std::path::Path;
use std::process::{Command, Output};

use planeopt::scene_io::load_mesh;

fn planeopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_planeopt"))
        .args(args)
        .env("PLANEOPT_LOG", "warn")
        .output()
        .expect("spawning planeopt")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, scene: &str, edge: &str) {
    let d = dir.to_str().unwrap();
    ok(planeopt(&[
        "synth",
        "-o",
        d,
        "--scene",
        scene,
        "--edge-len",
        edge,
        "--frames",
        "6",
        "--width",
        "160",
        "--height",
        "120",
    ]));
}

fn cfg(dir: &Path) -> String {
    dir.join("planeopt.cfg").to_str().unwrap().to_string()
}

/// Header and single data row of `stats.csv`.
fn stats(dir: &Path) -> Vec<(String, String)> {
    let text = std::fs::read_to_string(dir.join("stats.csv")).unwrap();
    let mut lines = text.lines();
    let head = lines.next().unwrap().split(',').map(String::from);
    let row = lines.next().unwrap().split(',').map(String::from);
    head.zip(row).collect()
}

fn stat(s: &[(String, String)], key: &str) -> f64 {
    s.iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("no column {key}"))
        .1
        .parse()
        .unwrap()
}

fn obj_vertices(path: &Path) -> Vec<[f64; 3]> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.strip_prefix("v "))
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|x| x.parse().unwrap()).collect();
            [v[0], v[1], v[2]]
        })
        .collect()
}

#[test]
fn synth_then_run_hits_the_target_ratio() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "room", "0.1");
    let stdout = ok(planeopt(&[
        "run",
        "-c",
        &cfg(dir.path()),
        "--target-ratio",
        "0.05",
    ]));
    assert!(stdout.contains("model.obj"), "{stdout}");
    let out = dir.path().join("out");
    for f in [
        "model.obj",
        "model.mtl",
        "model.png",
        "stats.csv",
        "stats.txt",
        "energy.csv",
        "trajectory.txt",
        "geometry.csv",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let s = stats(&out);
    let ratio = stat(&s, "face_ratio_pct") / 100.0;
    assert!((0.04..=0.06).contains(&ratio), "face ratio {ratio}");
    let faces = std::fs::read_to_string(out.join("model.obj"))
        .unwrap()
        .lines()
        .filter(|l| l.starts_with("f "))
        .count();
    assert_eq!(faces as f64, stat(&s, "result_faces"));

    // stage timings never add up to more than the total
    let staged: f64 = s
        .iter()
        .filter(|(k, _)| k.ends_with("_s") && k != "total_s")
        .map(|(_, v)| v.parse::<f64>().unwrap())
        .sum();
    assert!(staged <= stat(&s, "total_s") + 1e-3, "{staged} > total");

    // the optimized trajectory has one TUM line per keyframe
    let traj = std::fs::read_to_string(out.join("trajectory.txt")).unwrap();
    let rows: Vec<_> = traj
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .collect();
    assert_eq!(rows.len() as f64, stat(&s, "keyframes"));
    assert!(rows.iter().all(|r| r.split_whitespace().count() == 8));
}

#[test]
fn skip_geo_exports_the_simplified_vertices() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "box", "0.1");
    let c = cfg(dir.path());
    let simp = dir.path().join("simp");
    ok(planeopt(&[
        "run",
        "-c",
        &c,
        "-o",
        simp.to_str().unwrap(),
        "--stop-after",
        "simplify",
    ]));
    let full = dir.path().join("full");
    ok(planeopt(&[
        "run",
        "-c",
        &c,
        "-o",
        full.to_str().unwrap(),
        "--skip-geo",
        "--skip-tex",
    ]));
    assert!(!full.join("geometry.csv").exists());

    let (mesh, _) = load_mesh(&simp.join("simplified.ply")).unwrap();
    let exported = obj_vertices(&full.join("model.obj"));
    assert_eq!(exported.len(), mesh.n_vertices());
    for (a, b) in exported.iter().zip(&mesh.vertices) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-5, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn stop_after_partition_dumps_clusters_only() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "box", "0.1");
    let stdout = ok(planeopt(&[
        "run",
        "-c",
        &cfg(dir.path()),
        "--stop-after",
        "partition",
    ]));
    assert!(stdout.contains("stopped after"), "{stdout}");
    let out = dir.path().join("out");
    assert!(out.join("partition.ply").is_file());
    assert!(!out.join("model.obj").exists());
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("planeopt.cfg");
    std::fs::write(&c, "mesh = missing.ply\nframes = .\nlambda_p = lots\n").unwrap();
    let out = planeopt(&["run", "-c", c.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lambda_p"), "{err}");

    std::fs::write(&c, "mesh = missing.ply\nframes = .\n").unwrap();
    let out = planeopt(&["run", "-c", c.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ply"));
}
