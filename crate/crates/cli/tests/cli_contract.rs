//! Exit-code and wire-format contracts of the `useanet` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use useanet_core::encoder::EncoderConfig;
use useanet_core::io::checkpoint::save_checkpoint;
use useanet_core::io::fixture::{synth_fixture, FixtureKind};
use useanet_core::io::image::{decode_pgm, write_gray_pgm};
use useanet_core::model::{init_params, ModelConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_useanet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tmpdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("usean_cli_{name}"));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_config_json(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "model": {
            "input_size": 64,
            "encoder": { "depths": [1, 1, 1, 1] }
        }
    });
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    path
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        input_size: 64,
        encoder: EncoderConfig::tiny(),
        ..ModelConfig::default()
    }
}

#[test]
fn no_arguments_is_usage_error() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = run(&["profile", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));
}

#[test]
fn out_of_range_threshold_is_usage_error() {
    let out = run(&["segment", "--weights", "w", "--input", "i", "--output", "o", "--threshold", "1.1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshold"));
}

#[test]
fn profile_rejects_bad_input_size() {
    let out = run(&["profile", "--input-size", "100"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn profile_emits_stable_json_keys() {
    let out = run(&["profile"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["input_size", "params_total", "flops_total", "modules"] {
        assert!(doc.get(key).is_some(), "missing key {key}");
    }
    for module in ["encoder", "mbfp", "eca_eaa", "hfa", "decoder", "heads"] {
        assert!(doc["modules"].get(module).is_some(), "missing module {module}");
    }
}

#[test]
fn config_with_unknown_keys_is_rejected() {
    let dir = tmpdir("badcfg");
    let path = dir.join("bad.json");
    std::fs::write(&path, r#"{"model": {"input_size": 64, "typo_field": 3}}"#).unwrap();
    let out = run(&["profile", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo_field"));
}

#[test]
fn corrupted_checkpoint_magic_is_a_named_format_error() {
    let dir = tmpdir("badmagic");
    let cfg = tiny_model();
    let store = init_params::<f32>(&cfg, 1).unwrap();
    let ckpt = dir.join("w.ckpt");
    save_checkpoint(&store, &ckpt).unwrap();
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    std::fs::write(&ckpt, &bytes).unwrap();

    let fixture = synth_fixture::<f32>(FixtureKind::Disk, 64, 2).unwrap();
    let img = dir.join("img.pgm");
    write_gray_pgm(&fixture.image, &img).unwrap();
    let cfg_path = tiny_config_json(&dir);
    let out = run(&[
        "segment",
        "--config",
        cfg_path.to_str().unwrap(),
        "--weights",
        ckpt.to_str().unwrap(),
        "--input",
        img.to_str().unwrap(),
        "--output",
        dir.join("m.pgm").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn checkpoint_config_shape_mismatch_names_tensor() {
    let dir = tmpdir("mismatch");
    // weights for decoder width 64, config asking for the default 256 model
    let store = init_params::<f32>(&tiny_model(), 3).unwrap();
    let ckpt = dir.join("w.ckpt");
    save_checkpoint(&store, &ckpt).unwrap();
    let fixture = synth_fixture::<f32>(FixtureKind::Disk, 64, 2).unwrap();
    let img = dir.join("img.pgm");
    write_gray_pgm(&fixture.image, &img).unwrap();
    // default config expects two encoder blocks per stage -> missing names
    let out = run(&[
        "segment",
        "--weights",
        ckpt.to_str().unwrap(),
        "--input",
        img.to_str().unwrap(),
        "--output",
        dir.join("m.pgm").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("encoder.s0.b1"), "error should name the first offender: {err}");
}

#[test]
fn segment_with_random_weights_produces_valid_mask_of_input_extents() {
    let dir = tmpdir("liveness");
    let cfg = tiny_model();
    let store = init_params::<f32>(&cfg, 4).unwrap();
    let ckpt = dir.join("w.ckpt");
    save_checkpoint(&store, &ckpt).unwrap();
    // non-square, non-64 input exercises the resize path both ways
    let fixture = synth_fixture::<f32>(FixtureKind::SpeckledDisk, 96, 5).unwrap();
    let img = dir.join("img.pgm");
    write_gray_pgm(&fixture.image, &img).unwrap();
    let cfg_path = tiny_config_json(&dir);
    let mask_path = dir.join("mask.pgm");
    let out = run(&[
        "segment",
        "--config",
        cfg_path.to_str().unwrap(),
        "--weights",
        ckpt.to_str().unwrap(),
        "--input",
        img.to_str().unwrap(),
        "--output",
        mask_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ms"), "timing missing: {stdout}");
    let mask = decode_pgm::<f32>(&std::fs::read(&mask_path).unwrap()).unwrap();
    assert_eq!(mask.shape(), &[1, 96, 96]);
}

#[test]
fn verify_fault_injection_fails_with_named_check() {
    let out = run(&["verify", "--fault", "laplacian", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL laplacian-zero-sum"), "{stdout}");
}

#[test]
fn eval_reports_missing_counterpart_by_name() {
    let dir = tmpdir("eval_missing");
    let pred = dir.join("pred");
    let gt = dir.join("gt");
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    let fixture = synth_fixture::<f32>(FixtureKind::Disk, 64, 6).unwrap();
    useanet_core::io::image::write_mask_pgm(&fixture.mask, &pred.join("only.pgm")).unwrap();
    let out = run(&["eval", "--pred-dir", pred.to_str().unwrap(), "--gt-dir", gt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("only.pgm"));
}

#[test]
fn parallel_mode_matches_single_threaded_reference() {
    let dir = tmpdir("threads");
    let cfg = tiny_model();
    let store = init_params::<f32>(&cfg, 31).unwrap();
    let ckpt = dir.join("w.ckpt");
    save_checkpoint(&store, &ckpt).unwrap();
    let fixture = synth_fixture::<f32>(FixtureKind::SpeckledDisk, 64, 32).unwrap();
    let img = dir.join("img.pgm");
    write_gray_pgm(&fixture.image, &img).unwrap();
    let cfg_path = tiny_config_json(&dir);

    let mask_for = |threads: &str, name: &str| -> Vec<u8> {
        let out_path = dir.join(name);
        let out = bin()
            .env("USEAN_THREADS", threads)
            .args([
                "segment",
                "--config",
                cfg_path.to_str().unwrap(),
                "--weights",
                ckpt.to_str().unwrap(),
                "--input",
                img.to_str().unwrap(),
                "--output",
                out_path.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(&out_path).unwrap()
    };
    let reference = mask_for("0", "ref.pgm");
    let parallel = mask_for("4", "par.pgm");
    assert_eq!(reference, parallel, "worker count changed the mask bytes");
}

#[test]
fn eval_identical_directories_score_100() {
    let dir = tmpdir("eval_same");
    let pred = dir.join("pred");
    let gt = dir.join("gt");
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    for seed in 0..3 {
        let fixture = synth_fixture::<f32>(FixtureKind::Disk, 64, seed).unwrap();
        let name = format!("f{seed}.pgm");
        useanet_core::io::image::write_mask_pgm(&fixture.mask, &pred.join(&name)).unwrap();
        useanet_core::io::image::write_mask_pgm(&fixture.mask, &gt.join(&name)).unwrap();
    }
    let out = run(&["eval", "--pred-dir", pred.to_str().unwrap(), "--gt-dir", gt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["mean"]["iou"], 100.0);
    assert_eq!(doc["mean"]["f1"], 100.0);
}
