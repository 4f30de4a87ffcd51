use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn covector(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covector"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn small_run(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--scene", "taylor_green", "--spacing", "0.0625", "--steps", "4", "--out"];
    args.push(out.to_str().unwrap());
    args.extend_from_slice(extra);
    covector(&args)
}

#[test]
fn run_writes_metrics_manifest_and_frames() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_run(dir.path(), &["--frame-stride", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("scene=taylor_green"));
    assert!(manifest.contains("config_hash="));
    for k in [0, 2, 4] {
        assert!(dir.path().join(format!("frames/frame_{k:06}.csv")).exists(), "frame {k}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# test\nscene=taylor_green\ncfl=1\nspacing=0.0625\nsteps=2\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = covector(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--cfl",
        "0.5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("cfl=5e-1"));
    assert!(manifest.contains("steps=2"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing_scene = covector(&["run", "--steps", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&missing_scene), 1);
    assert!(String::from_utf8_lossy(&missing_scene.stderr).contains("scene"));
    assert_eq!(code(&small_run(dir.path(), &["--cfl", "-1"])), 1);
    assert_eq!(code(&small_run(dir.path(), &["--set", "bogus=1"])), 1);
    assert_eq!(code(&covector(&["run", "--bogus"])), 1);
    assert_eq!(code(&covector(&["run", "--config", "/nonexistent/run.cfg"])), 3);

    // The output path is an existing file: nothing can be written under it.
    let file = dir.path().join("taken");
    fs::write(&file, "x").unwrap();
    assert_eq!(code(&small_run(&file, &[])), 3);
    assert_eq!(code(&covector(&["--help"])), 0);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(code(&small_run(d.path(), &["--seed", "7"])), 0);
    }
    let ma = fs::read(a.path().join("metrics.csv")).unwrap();
    let mb = fs::read(b.path().join("metrics.csv")).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn bench_writes_both_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let out = covector(&[
        "bench",
        "--scene",
        "taylor_green",
        "--spacing",
        "0.0625",
        "--steps",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics_lmcp.csv", "metrics_ppm.csv"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().count(), 4, "{f}");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("lmcp") && stdout.contains("ppm"));
}

#[test]
fn ablations_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let conv = dir.path().join("conv");
    let out = covector(&["ablate", "convergence", "--spacing", "0.0625", "--steps", "3", "--out", conv.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for n in [1, 8, 17] {
        assert!(conv.join(format!("cg_history_len{n}.csv")).exists());
    }
    assert!(conv.join("convergence_summary.csv").exists());

    let surf = dir.path().join("surf");
    let out = covector(&["ablate", "surface", "--spacing", "0.0625", "--steps", "5", "--out", surf.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(surf.join("surface_on/metrics.csv").exists());
    assert!(surf.join("surface_off/metrics.csv").exists());
    let summary = fs::read_to_string(surf.join("surface_summary.txt")).unwrap();
    assert!(summary.contains("max_speed_with_branch="));
}

#[test]
fn validate_passes_on_a_fresh_checkout() {
    let out = covector(&["validate"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));
    assert!(stdout.lines().count() >= 5);
}
