use std::path::Path;
use std::process::{Command, Output};

fn patchnr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchnr")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = patchnr(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn sr_pipeline_produces_metrics_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["degrade", "--task", "sr", "--make-texture", "32", "--truth-out", "gt.pfm", "--out", "y.pfm", "--seed", "7"]);
    ok(d, &["train-flow", "--image", "gt.pfm", "--patch-size", "4", "--hidden", "8", "--steps", "50", "--seed", "1", "--out", "f.pnrk"]);
    ok(d, &[
        "reconstruct", "--task", "sr", "--prior", "patchnr", "--obs", "y.pfm", "--checkpoint", "f.pnrk", "--iterations", "20",
        "--lambda", "0.01", "--lr", "0.01", "--subset", "100", "--seed", "3", "--truth", "gt.pfm", "--trace", "trace.csv",
        "--out", "x.pfm",
    ]);
    let csv = ok(d, &["evaluate", "--truth", "gt.pfm", "--image", "x.pfm", "--out", "m.csv"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "image,psnr,ssim,blur_effect");
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[0], "x");
    assert!(fields[1..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
    assert_eq!(std::fs::read_to_string(d.join("m.csv")).unwrap(), csv);

    let trace = std::fs::read_to_string(d.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 21);

    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("x.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["config"]["solver"]["iterations"], 20);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
    assert!(manifest["metrics"]["evaluation"]["psnr"].as_f64().unwrap() > 0.0);
    for m in ["y.manifest.json", "f.manifest.json"] {
        assert!(d.join(m).exists(), "{m}");
    }
}

#[test]
fn manifest_hash_tracks_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let hash = |seed: &str, out: &str| {
        ok(d, &["degrade", "--task", "deblur", "--make-texture", "24", "--truth-out", "t.pfm", "--out", out, "--seed", seed]);
        let stem = out.trim_end_matches(".pfm");
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join(format!("{stem}.manifest.json"))).unwrap()).unwrap();
        m["config_hash"].as_str().unwrap().to_owned()
    };
    assert_eq!(hash("1", "a.pfm"), hash("1", "b.pfm"));
    assert_ne!(hash("1", "a.pfm"), hash("2", "c.pfm"));
}

#[test]
fn ct_degrade_fbp_and_epll() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = ok(d, &["presets", "--name", "ct_full"])
        .replace("bins = 513", "bins = 47")
        .replace("angles = 1000", "angles = 40")
        .replace("extent = 0.26", "extent = 2.0");
    std::fs::write(d.join("ct.toml"), config).unwrap();
    ok(d, &["degrade", "--config", "ct.toml", "--make-phantom", "32", "--truth-out", "gt.pfm", "--out", "sino.pfm", "--seed", "4"]);
    ok(d, &["fbp", "--config", "ct.toml", "--sino", "sino.pfm", "--size", "32", "--out", "fbp.pfm"]);
    let csv = ok(d, &["evaluate", "--truth", "gt.pfm", "--image", "fbp.pfm", "--range", "adaptive"]);
    let psnr: f64 = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(psnr > 12.0, "{psnr}");

    ok(d, &["fit-gmm", "--image", "gt.pfm", "--patch-size", "4", "--components", "3", "--max-iters", "10", "--seed", "2", "--out", "g.pnrk"]);
    ok(d, &[
        "reconstruct", "--config", "ct.toml", "--prior", "epll", "--checkpoint", "g.pnrk", "--obs", "sino.pfm", "--size", "32",
        "--iterations", "10", "--lambda", "1", "--subset", "50", "--seed", "5", "--out", "x.pfm",
    ]);
    // A flow checkpoint cannot drive the EPLL prior.
    ok(d, &["train-flow", "--image", "gt.pfm", "--patch-size", "4", "--hidden", "8", "--steps", "40", "--seed", "1", "--out", "f.pnrk"]);
    let out = patchnr(d, &["reconstruct", "--config", "ct.toml", "--prior", "epll", "--checkpoint", "f.pnrk", "--obs", "sino.pfm", "--size", "32", "--seed", "5", "--out", "z.pfm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("z.pfm").exists());
}

#[test]
fn conditional_flow_round() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["degrade", "--task", "sr", "--make-texture", "32", "--truth-out", "gt.pfm", "--out", "y.pfm", "--seed", "9"]);
    ok(d, &["train-cflow", "--task", "sr", "--image", "gt.pfm", "--patch-size", "4", "--hidden", "8", "--steps", "50", "--seed", "1", "--out", "c.pnrk"]);
    ok(d, &[
        "reconstruct", "--task", "sr", "--prior", "cpatchnr", "--checkpoint", "c.pnrk", "--obs", "y.pfm", "--iterations", "10",
        "--lambda", "0.01", "--subset", "50", "--seed", "3", "--out", "x.pfm",
    ]);
    // Patch scoring needs an unconditional flow.
    let out = patchnr(d, &["score-patches", "--checkpoint", "c.pnrk", "--image", "gt.pfm"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn score_patches_compares_sets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["degrade", "--task", "deblur", "--make-texture", "32", "--truth-out", "gt.pfm", "--out", "y.pfm", "--seed", "2"]);
    ok(d, &["train-flow", "--image", "gt.pfm", "--patch-size", "4", "--hidden", "16", "--steps", "300", "--lr", "1e-3", "--seed", "1", "--out", "f.pnrk"]);
    let text = ok(d, &["score-patches", "--checkpoint", "f.pnrk", "--image", "gt.pfm", "--compare", "y.pfm", "--bins", "10", "--out", "h.json"]);
    assert!(text.contains("t = "), "{text}");
    let h: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("h.json")).unwrap()).unwrap();
    assert_eq!(h["clean"]["counts"].as_array().unwrap().len(), 10);
    assert!(h["t_statistic"].as_f64().unwrap().is_finite());
}

#[test]
fn presets_table_lists_every_task() {
    let dir = tempfile::tempdir().unwrap();
    let table = ok(dir.path(), &["presets"]);
    for (name, row) in [("sr", "0.15"), ("ct_full", "700"), ("ct_limited", "3000"), ("deblur", "0.87")] {
        let line = table.lines().find(|l| l.starts_with(name)).unwrap_or_else(|| panic!("{name} missing"));
        assert!(line.contains(row), "{line}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Missing --seed on a stochastic command.
    let out = patchnr(d, &["degrade", "--task", "sr", "--make-texture", "16", "--out", "y.pfm"]);
    assert_eq!(out.status.code(), Some(2));
    // Unknown config key.
    std::fs::write(d.join("bad.toml"), ok(d, &["presets", "--name", "sr"]) + "\nmomentum = 0.9\n").unwrap();
    let out = patchnr(d, &["degrade", "--config", "bad.toml", "--make-texture", "16", "--truth-out", "t.pfm", "--out", "y.pfm", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
    // Missing input file is a runtime error naming the module.
    let out = patchnr(d, &["degrade", "--task", "sr", "--in", "nope.pfm", "--out", "y.pfm", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("io error"));
    assert!(!d.join("y.pfm").exists());
}

#[test]
fn inputs_are_not_modified() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["degrade", "--task", "sr", "--make-texture", "32", "--truth-out", "gt.pfm", "--out", "y.pfm", "--seed", "7"]);
    let before = std::fs::read(d.join("y.pfm")).unwrap();
    ok(d, &["reconstruct", "--task", "sr", "--prior", "none", "--obs", "y.pfm", "--iterations", "5", "--seed", "1", "--out", "x.pfm"]);
    assert_eq!(std::fs::read(d.join("y.pfm")).unwrap(), before);
}
