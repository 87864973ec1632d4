use std::fs;
use std::path::Path;
use std::process::Command;

use gan_core::data::{synth_digits, write_gfd1};
use gan_core::RngStream;

const REFERENCE_CONFIG: &str = r#"{
    "GAN_model":{
        "epochs":"50"
    },
    "generator":{
        "choice":"dcgan"
    },
    "discriminator":{
        "choice":"dcgan"
    },
    "data_path":"dataset/mnistData.pkl"
}"#;

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["authorgan"];
    full.extend_from_slice(args);
    let code = authorgan::cli::run(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

/// 32 small digit images as `<dir>/tiny.gfd`.
fn tiny_data(dir: &Path) {
    let (ds, _) = synth_digits(32, 8, &mut RngStream::new(4)).unwrap();
    write_gfd1(&dir.join("tiny.gfd"), &ds.images).unwrap();
}

const TINY_SPEC: &str = r#"{
    "GAN_model": {"epochs": 2, "batch_size": 8, "latent_dim": 6, "seed": 3},
    "generator": {"layers": [
        {"kind": "Dense", "params": {"units": 16}},
        {"kind": "LeakyReLU"},
        {"kind": "Dense", "params": {"units": 64}},
        {"kind": "Tanh"},
        {"kind": "Reshape", "params": {"shape": [1, 8, 8]}}
    ]},
    "discriminator": {"choice": "gan"},
    "data_path": "tiny.gfd"
}"#;

#[test]
fn validate_reference_config_has_no_errors() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "config.json", REFERENCE_CONFIG);
    let (code, out, _) = cli(&["validate", &spec]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(out.trim_end().lines().last(), Some("0 errors"));
}

#[test]
fn validate_empty_object_reports_three_errors() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "empty.json", "{}");
    let (code, out, _) = cli(&["validate", &spec]);
    assert_eq!(code, 1);
    assert_eq!(out.lines().filter(|l| l.starts_with("error")).count(), 3, "{out}");
    assert_eq!(out.trim_end().lines().last(), Some("3 errors"));
}

#[test]
fn validate_with_shape_hint_checks_custom_layers() {
    let dir = tempfile::tempdir().unwrap();
    let bad = TINY_SPEC.replace(r#""shape": [1, 8, 8]"#, r#""shape": [1, 4, 4]"#);
    let spec = write(dir.path(), "bad.json", &bad);
    let (code, out, _) = cli(&["validate", &spec, "--data-shape", "1,8,8"]);
    assert_eq!(code, 1, "{out}");
    assert!(out.contains("/generator"), "{out}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(cli(&["frobnicate"]).0, 2);
    assert_eq!(cli(&["validate"]).0, 2);
    assert_eq!(cli(&["palette", "--bogus"]).0, 2);
    assert_eq!(cli(&["train", "x.json", "--epochs", "many"]).0, 2);
    let (code, out, _) = cli(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("validate"));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_authorgan");
    let status = Command::new(bin).arg("nonsense").output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("Usage"));
    let palette = Command::new(bin).arg("palette").output().unwrap();
    assert_eq!(palette.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&palette.stdout).unwrap();
    assert_eq!(doc["entries"].as_array().unwrap().len(), 31);
    assert_eq!(doc["categories"].as_array().unwrap().len(), 7);
}

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    tiny_data(dir.path());
    let spec = write(dir.path(), "tiny.json", TINY_SPEC);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let (code, stdout, stderr) = cli(&["train", &spec, "--out", out.to_str().unwrap(), "--samples", "4"]);
        assert_eq!(code, 0, "{stdout}{stderr}");
    }
    for f in ["report.json", "steps.csv", "generator.json", "samples.png"] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let strip = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("report.json")).unwrap()).unwrap();
        for e in v["epochs"].as_array_mut().unwrap() {
            e.as_object_mut().unwrap().remove("wall_seconds");
        }
        v
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(fs::read(a.join("steps.csv")).unwrap(), fs::read(b.join("steps.csv")).unwrap());
    assert_eq!(fs::read(a.join("samples.png")).unwrap(), fs::read(b.join("samples.png")).unwrap());
    let report = strip(&a);
    assert_eq!(report["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(report["total_steps"], 8);
    assert_eq!(report["generator_params"], "generator.json");
}

#[test]
fn train_overrides_and_seed_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    tiny_data(dir.path());
    let spec = write(dir.path(), "tiny.json", TINY_SPEC);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(cli(&["train", &spec, "--out", a.to_str().unwrap(), "--epochs", "1", "--limit", "16"]).0, 0);
    assert_eq!(cli(&["train", &spec, "--out", b.to_str().unwrap(), "--epochs", "1", "--limit", "16", "--seed", "9"]).0, 0);
    let steps = |p: &Path| fs::read_to_string(p.join("steps.csv")).unwrap();
    assert_eq!(steps(&a).lines().count(), 1 + 2);
    assert_ne!(steps(&a), steps(&b));
}

#[test]
fn train_rejects_invalid_specs_and_missing_data() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "empty.json", "{}");
    let (code, out, _) = cli(&["train", &spec]);
    assert_eq!(code, 1);
    assert!(out.contains("3 errors"));
    let spec = write(dir.path(), "nodata.json", TINY_SPEC);
    let (code, _, err) = cli(&["train", &spec, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("tiny.gfd"), "{err}");
    assert!(!dir.path().join("o").join("report.json").exists());
}

#[test]
fn matrix_with_single_pair() {
    let dir = tempfile::tempdir().unwrap();
    tiny_data(dir.path());
    let data = dir.path().join("tiny.gfd");
    let out = dir.path().join("m");
    let (code, stdout, stderr) = cli(&[
        "matrix",
        "--data",
        data.to_str().unwrap(),
        "--generators",
        "gan",
        "--discriminators",
        "wgan",
        "--batch-size",
        "16",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{stderr}");
    let csv = fs::read_to_string(out.join("matrix.csv")).unwrap();
    assert_eq!(csv, stdout);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "generator,discriminator,final_gen_loss,final_disc_loss,avg_epoch_seconds,status");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("gan,wgan,") && lines[1].ends_with(",ok"), "{}", lines[1]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("matrix.json")).unwrap()).unwrap();
    assert_eq!(json["rows"][0]["pairing"]["governing_family"], "wgan");
}

#[test]
fn digits_command_writes_loadable_idx() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = cli(&["digits", "--n", "20", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    let ds = gan_core::data::load_dataset(&dir.path().join("digits-images-idx3-ubyte"), None).unwrap();
    assert_eq!(ds.images.shape(), &[20, 1, 28, 28]);
    assert_eq!(ds.labels.as_ref().map(Vec::len), Some(20));
}
