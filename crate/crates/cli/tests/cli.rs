use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const LEVELS: &str = r#"
[[levels]]
downsample_factor = 4
patch_radius = 3
metric = "GradNCC"
optimizer = "cmaes"
population_size = 8
max_iterations = 10
tolerance = 1e-4

[[levels]]
downsample_factor = 2
patch_radius = 5
metric = "GradNCC"
optimizer = "local_bounded"
population_size = 8
max_iterations = 5
tolerance = 1e-3
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fluororeg"))
        .args(args)
        .env_remove("FLUOROREG_WORKERS")
        .output()
        .expect("spawn fluororeg")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small phantom plus three simulated 64×64 views with detections.
fn scene() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(&[
        "phantom",
        "--out-dir",
        p(d),
        "--size",
        "32",
        "--spacing",
        "8",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&[
        "simulate",
        "--volume",
        p(&d.join("volume.mhd")),
        "--landmarks",
        p(&d.join("landmarks.csv")),
        "--out-dir",
        p(d),
        "--rows",
        "64",
        "--cols",
        "64",
        "--pixel-spacing",
        "4.656",
        "--seed",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn phantom_and_simulate_write_expected_files() {
    let dir = scene();
    for f in ["volume.mhd", "labels.mhd", "landmarks.csv", "lut.txt", "camera.toml"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    for k in 0..3 {
        for f in [
            format!("view{k}.mhd"),
            format!("true_pose{k}.txt"),
            format!("detections{k}.csv"),
        ] {
            assert!(dir.path().join(&f).is_file(), "{f}");
        }
    }
}

#[test]
fn register_then_triangulate() {
    let dir = scene();
    let d = dir.path();
    std::fs::write(d.join("reg.toml"), LEVELS).unwrap();
    for k in 0..2 {
        let o = run(&[
            "register",
            "--fluoro",
            p(&d.join(format!("view{k}.mhd"))),
            "--camera",
            p(&d.join("camera.toml")),
            "--volume",
            p(&d.join("volume.mhd")),
            "--labels",
            p(&d.join("labels.mhd")),
            "--lut",
            p(&d.join("lut.txt")),
            "--init",
            p(&d.join(format!("true_pose{k}.txt"))),
            "--metric",
            "p-grad-ncc-pr",
            "--config",
            p(&d.join("reg.toml")),
            "--seed",
            "1",
            "--out-pose",
            p(&d.join(format!("est{k}.txt"))),
            "--out-trace",
            p(&d.join(format!("trace{k}.csv"))),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let trace = std::fs::read_to_string(d.join(format!("trace{k}.csv"))).unwrap();
        assert!(trace.starts_with("level,downsample_factor,metric,iteration,best_objective,active_patches"));
        assert!(trace.lines().count() > 1);
    }
    let out = d.join("tri.csv");
    let o = run(&[
        "triangulate",
        "--camera",
        p(&d.join("camera.toml")),
        "--camera",
        p(&d.join("camera.toml")),
        "--pose",
        p(&d.join("est0.txt")),
        "--pose",
        p(&d.join("est1.txt")),
        "--detections",
        p(&d.join("detections0.csv")),
        "--detections",
        p(&d.join("detections1.csv")),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("name,x,y,z"));
    assert!(text.lines().count() >= 2, "{text}");
}

#[test]
fn invalid_metric_lists_valid_names() {
    let o = run(&[
        "stats",
        "--trials",
        "t.csv",
        "--metric",
        "bogus",
        "--baseline",
        "GradNCC",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("PGradNCCPrR") && e.contains("GradNCC"), "{e}");
}

#[test]
fn missing_output_directory_is_a_usage_error() {
    let o = run(&["phantom", "--out-dir", "/nonexistent/dir", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn image_camera_mismatch_is_rejected() {
    let dir = scene();
    let d = dir.path();
    let cam = std::fs::read_to_string(d.join("camera.toml")).unwrap();
    std::fs::write(d.join("cam32.toml"), cam.replace("rows = 64", "rows = 32")).unwrap();
    let o = run(&[
        "register",
        "--fluoro",
        p(&d.join("view0.mhd")),
        "--camera",
        p(&d.join("cam32.toml")),
        "--volume",
        p(&d.join("volume.mhd")),
        "--init",
        p(&d.join("true_pose0.txt")),
        "--metric",
        "GradNCC",
        "--seed",
        "1",
        "--out-pose",
        p(&d.join("est.txt")),
        "--out-trace",
        p(&d.join("trace.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("64x64"), "{}", stderr(&o));
    assert!(!d.join("est.txt").exists());
}

#[test]
fn stats_on_number_files() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = (dir.path().join("x.txt"), dir.path().join("y.txt"));
    std::fs::write(&x, "1\n2\n").unwrap();
    std::fs::write(&y, "# baseline\n3\n4\n").unwrap();
    let o = run(&["stats", "--x", p(&x), "--y", p(&y)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("u = 0\n"), "{out}");
    let pline = out.lines().find(|l| l.starts_with("p_one_tailed")).unwrap();
    let pval: f64 = pline.split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!((pval - 1.0 / 6.0).abs() < 1e-12);
    assert!(out.contains("exact = true"));
}

#[test]
fn study_writes_outputs_and_stats_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = format!(
        "seed = 2\nviews = 2\nmetrics = [\"PGradNCCPr\", \"GradNCC\"]\n\n[phantom]\ndims = [48, 48, 48]\nspacing = 5.0\n\n\
         [detector]\nrows = 96\ncols = 96\npixel_spacing = 3.104\nsource_to_detector = 1020.0\n\n[registration]\n{}",
        LEVELS.replace("[[levels]]", "[[registration.levels]]")
    );
    std::fs::write(d.join("study.toml"), cfg).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fluororeg"))
        .args(["study", "--config", p(&d.join("study.toml")), "--out-dir", p(d)])
        .env("FLUOROREG_WORKERS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "trials.csv",
        "summary.csv",
        "comparisons.csv",
        "timings.csv",
        "metadata.json",
        "failures.log",
    ] {
        assert!(d.join(f).is_file(), "{f}");
    }
    let meta = std::fs::read_to_string(d.join("metadata.json")).unwrap();
    assert!(
        meta.contains("\"workers\": 2") || meta.contains("\"workers\":2"),
        "{meta}"
    );
    let o = run(&[
        "stats",
        "--trials",
        p(&d.join("trials.csv")),
        "--metric",
        "PGradNCCPr",
        "--baseline",
        "GradNCC",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("n_x = 6"), "{out}");
}

#[test]
fn study_without_seed_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), "views = 2\n").unwrap();
    let o = run(&[
        "study",
        "--config",
        p(&dir.path().join("s.toml")),
        "--out-dir",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"));
}
