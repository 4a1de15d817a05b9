use std::path::Path;
use std::process::{Command, Output};

fn voxelkit(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxelkit"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn bench_rescale_rows_and_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let o = voxelkit(dir.path(), &["bench-rescale", "--shape", "16,40,40", "--objects", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let timing = std::fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    let mut lines = timing.lines();
    assert_eq!(lines.next().unwrap(), "workload,stage,backend,shape,params,repeats,warmup,median_s,speedup_vs_reference");
    assert_eq!(lines.count(), 12);
    let agreement = std::fs::read_to_string(dir.path().join("agreement.csv")).unwrap();
    assert!(agreement.lines().nth(1).unwrap().starts_with("0,0,true,true"));
    assert!(agreement.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn json_report_has_a_schema() {
    let dir = tempfile::tempdir().unwrap();
    let o = voxelkit(
        dir.path(),
        &["bench-rescale", "--shape", "16,40,40", "--objects", "1", "--orders", "1", "--backend", "accelerated", "--format", "json"],
    );
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("timing.json")).unwrap()).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["rows"].as_array().unwrap().len(), 1);
    assert!(v["rows"][0]["speedup_vs_reference"].is_null());
}

#[test]
fn segment_is_deterministic_and_rejects_wrong_channels() {
    let dir = tempfile::tempdir().unwrap();
    let synth = voxelkit(
        dir.path(),
        &["synth", "--kind", "monolayer", "--shape", "20,96,96", "--objects", "4", "--radius", "8,10", "--seed", "3"],
    );
    assert_eq!(code(&synth), 0);
    let input = dir.path().join("channels.ndiv");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = voxelkit(d, &["segment", "--input", input.to_str().unwrap(), "--backend", "reference"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["nuclei.ndiv", "cells.ndiv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let timing = std::fs::read_to_string(a.join("timing.csv")).unwrap();
    // 10 nuclei stages and 8 cell stages, one backend
    assert_eq!(timing.lines().count() - 1, 18);

    let nuclei = dir.path().join("nuclei.ndiv");
    let o = voxelkit(&dir.path().join("c"), &["segment", "--input", nuclei.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
}

#[test]
fn deconvolve_outputs_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&voxelkit(dir.path(), &["synth", "--kind", "deconv", "--shape", "16,40,40", "--objects", "4"])), 0);
    let observed = dir.path().join("observed.ndiv");
    let run = dir.path().join("run");
    let o = voxelkit(&run, &["deconvolve", "--input", observed.to_str().unwrap(), "--gaussian", "1,2,2", "--max-iters", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(run.join("trace.csv")).unwrap().lines().count(), 2);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["iters_run"], 1);
    assert_eq!(summary["stop_reason"], "max_iters");
    assert!(run.join("estimate.ndiv").exists());

    let psf = dir.path().join("psf.ndiv");
    let o = voxelkit(&run, &["deconvolve", "--input", psf.to_str().unwrap(), "--psf", psf.to_str().unwrap(), "--metric", "bogus"]);
    assert_eq!(code(&o), 5);
    let o = voxelkit(&run, &["deconvolve", "--input", dir.path().join("missing.ndiv").to_str().unwrap(), "--gaussian", "1,1,1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unnormalized_psf_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&voxelkit(dir.path(), &["synth", "--kind", "deconv", "--shape", "16,40,40", "--objects", "4"])), 0);
    let truth = voxelkit::io::read_volume(dir.path().join("psf.ndiv")).unwrap();
    let doubled: Vec<f32> = truth.as_f32().unwrap().iter().map(|v| v * 2.0).collect();
    let bad = voxelkit::NdImage::from_f32(truth.shape().to_vec(), doubled).unwrap();
    let path = dir.path().join("bad_psf.ndiv");
    voxelkit::io::write_volume(&path, &bad).unwrap();
    let observed = dir.path().join("observed.ndiv");
    let o = voxelkit(dir.path(), &["deconvolve", "--input", observed.to_str().unwrap(), "--psf", path.to_str().unwrap()]);
    assert_eq!(code(&o), 5);
}

#[test]
fn synth_and_export_slice() {
    let dir = tempfile::tempdir().unwrap();
    let o = voxelkit(dir.path(), &["synth", "--shape", "16,48,48", "--objects", "0"]);
    assert_eq!(code(&o), 0);
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("synth.json")).unwrap()).unwrap();
    assert_eq!(s["label_count"], 0);
    let o = voxelkit(dir.path(), &["synth", "--shape", "16,48,48", "--objects", "3", "--seed", "9"]);
    assert_eq!(code(&o), 0);
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("synth.json")).unwrap()).unwrap();
    assert_eq!(s["label_count"], 3);
    assert_eq!(s["ap_self"], 1.0);

    let image = dir.path().join("image.ndiv");
    let o = voxelkit(dir.path(), &["export-slice", "--input", image.to_str().unwrap(), "--axis", "1", "--index", "5"]);
    assert_eq!(code(&o), 0);
    let pgm = std::fs::read(dir.path().join("slice.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n48 16\n255\n"));
    assert_eq!(pgm.len(), b"P5\n48 16\n255\n".len() + 48 * 16);
    let o = voxelkit(dir.path(), &["export-slice", "--input", image.to_str().unwrap(), "--axis", "3"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn repeats_below_three_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let o = voxelkit(dir.path(), &["bench-rescale", "--repeats", "2"]);
    assert_ne!(code(&o), 0);
}

#[test]
fn bilinear_input_keeps_the_requested_shape() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["bench-rescale", "--bilinear-input", "--objects", "1", "--orders", "0", "--backend", "reference"];
    let o = voxelkit(dir.path(), &[&args[..], &["--shape", "32,64,64"]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let timing = std::fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    assert!(timing.lines().nth(1).unwrap().contains(",32x64x64,"));
    let odd = voxelkit(dir.path(), &[&args[..], &["--shape", "31,64,64"]].concat());
    assert_eq!(code(&odd), 5);
}
