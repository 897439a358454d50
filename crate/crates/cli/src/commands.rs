//! Subcommand implementations. Exit codes: 0 success, 1 verification or
//! acceptance failure, 2 usage/configuration error (mapped in `main`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use useanet_core::error::{Error, Result};
use useanet_core::gradcheck::{assembled_case, block_cases, op_cases, GradCheckSettings};
use useanet_core::io::checkpoint::{load_checkpoint, save_checkpoint};
use useanet_core::io::fixture::{synth_fixture, FixtureKind};
use useanet_core::io::image::{load_image, write_gray_pgm, write_mask_pgm};
use useanet_core::metrics::{mean_report, metrics, MetricsReport};
use useanet_core::model::{check_compatible, predict_mask, segment_image, ModelConfig};
use useanet_core::profile::profile;
use useanet_core::tensor::Tensor;
use useanet_core::train::{overfit_fixture, OverfitSettings};
use useanet_core::verify::{run_all, Fault};

use crate::args::Args;
use crate::config::{resolve_config, RunConfig, ABLATION_SWITCHES};

pub fn cmd_segment(raw: &[String]) -> Result<i32> {
    let args = Args::parse(
        raw,
        &["--config", "--weights", "--input", "--output", "--threshold"],
        &ABLATION_SWITCHES,
    )?;
    let cfg = resolve_config(&args)?;
    let threshold: f64 = args.get_parsed("--threshold", 0.5)?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Input(format!("--threshold {threshold} outside [0, 1]")));
    }
    let weights = args
        .get("--weights")
        .map(str::to_string)
        .or(cfg.paths.weights.clone())
        .ok_or_else(|| Error::Input("missing --weights (or paths.weights in the config)".into()))?;
    let input = args.require("--input")?;
    let output = args
        .get("--output")
        .map(str::to_string)
        .or(cfg.paths.output.clone())
        .ok_or_else(|| Error::Input("missing --output (or paths.output in the config)".into()))?;

    let store = load_checkpoint(Path::new(&weights))?;
    check_compatible(&cfg.model, &store)?;
    let image = load_image::<f32>(Path::new(input))?;

    let start = Instant::now();
    let probs = segment_image(&store, &cfg.model, &image)?;
    let elapsed = start.elapsed();
    let mask = predict_mask(&probs, threshold)?;
    write_mask_pgm(&mask, Path::new(&output))?;
    println!(
        "segmented {} -> {} in {:.1} ms",
        input,
        output,
        elapsed.as_secs_f64() * 1e3
    );
    Ok(0)
}

pub fn cmd_profile(raw: &[String]) -> Result<i32> {
    let args = Args::parse(raw, &["--config", "--input-size"], &ABLATION_SWITCHES)?;
    let cfg = resolve_config(&args)?;
    let input_size: usize = args.get_parsed("--input-size", 256)?;
    if !input_size.is_multiple_of(32) || input_size == 0 {
        return Err(Error::Input(format!("--input-size {input_size} must be a positive multiple of 32")));
    }
    let report = profile(&cfg.model, input_size)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?);
    Ok(0)
}

pub fn cmd_verify(raw: &[String]) -> Result<i32> {
    let args = Args::parse(raw, &["--seed", "--fault"], &[])?;
    let seed: u64 = args.get_parsed("--seed", 7)?;
    let fault = match args.get("--fault") {
        None => None,
        Some("laplacian") => Some(Fault::LaplacianZeroSum),
        Some(other) => return Err(Error::Input(format!("unknown fault {other:?}"))),
    };
    let results = run_all(seed, fault);
    let mut failures = 0;
    for r in &results {
        println!("{}", r.line());
        if !r.pass {
            failures += 1;
        }
    }
    println!("{} checks, {} failed", results.len(), failures);
    Ok(if failures == 0 { 0 } else { 1 })
}

pub fn cmd_gradcheck(raw: &[String]) -> Result<i32> {
    let args = Args::parse(raw, &["--seed", "--mode"], &[])?;
    let seed: u64 = args.get_parsed("--seed", 7)?;
    let mode = args.get("--mode").unwrap_or("f64");
    let mut failures = 0;
    match mode {
        "f64" => {
            let settings = GradCheckSettings::f64_mode();
            for case in op_cases::<f64>(seed)?.iter().chain(block_cases::<f64>(seed)?.iter()) {
                let r = case.run(&settings, seed)?;
                println!("{}", r.summary_line());
                failures += (!r.pass) as u32;
            }
            let mut asm_settings = settings;
            asm_settings.samples_per_param = 1;
            asm_settings.max_total_samples = 64;
            let r = assembled_case::<f64>(seed)?.run(&asm_settings, seed)?;
            println!("{}", r.summary_line());
            failures += (!r.pass) as u32;
        }
        "f32" => {
            let settings = GradCheckSettings::f32_mode();
            for case in op_cases::<f32>(seed)? {
                let r = case.run(&settings, seed)?;
                println!("{}", r.summary_line());
                failures += (!r.pass) as u32;
            }
        }
        other => return Err(Error::Input(format!("--mode must be f32 or f64, got {other:?}"))),
    }
    println!("{failures} gradient checks failed");
    Ok(if failures == 0 { 0 } else { 1 })
}

pub fn cmd_overfit(raw: &[String]) -> Result<i32> {
    let args = Args::parse(
        raw,
        &["--size", "--steps", "--seed", "--out-weights"],
        &ABLATION_SWITCHES,
    )?;
    let size: usize = args.get_parsed("--size", 64)?;
    if !size.is_multiple_of(32) {
        return Err(Error::Input(format!("--size {size} must be divisible by 32")));
    }
    let steps: usize = args.get_parsed("--steps", 300)?;
    let seed: u64 = args.get_parsed("--seed", 7)?;
    let out_weights = args.get("--out-weights").map(PathBuf::from);

    let mut cfg = ModelConfig::tiny();
    cfg.input_size = size;
    if args.has("--no-attention") {
        cfg.attention = false;
    }
    if args.has("--no-multi-branch") {
        cfg.multi_branch = false;
    }
    if args.has("--no-ultrasound-specific") {
        cfg.ultrasound_specific = false;
    }
    if args.has("--two-layer") {
        cfg.multi_scale = false;
    }

    let settings = OverfitSettings {
        size,
        steps,
        seed,
        ..OverfitSettings::default()
    };
    let start = Instant::now();
    let outcome = overfit_fixture(&cfg, &settings, |log| {
        println!(
            "step {:>4}  loss {:.4}  iou {:.4}  lr {:.2e}",
            log.step, log.loss, log.iou, log.lr
        );
    })?;
    println!(
        "finished after {} steps in {:.1} s: final loss {:.4}, train IoU {:.4} (target {:.2})",
        outcome.steps_run,
        start.elapsed().as_secs_f64(),
        outcome.final_loss,
        outcome.final_iou,
        settings.target_iou
    );

    if let Some(path) = &out_weights {
        save_checkpoint(&outcome.store, path)?;
        let stem = path.with_extension("");
        let stem = stem.to_string_lossy();
        let fixture_path = PathBuf::from(format!("{stem}.fixture.pgm"));
        let mask_path = PathBuf::from(format!("{stem}.mask.pgm"));
        let config_path = PathBuf::from(format!("{stem}.config.json"));
        write_gray_pgm(&outcome.fixture.image, &fixture_path)?;
        write_mask_pgm(&outcome.fixture.mask, &mask_path)?;
        let run_cfg = RunConfig {
            model: cfg.clone(),
            ..RunConfig::default()
        };
        std::fs::write(&config_path, run_cfg.to_json()?)?;
        println!(
            "wrote {}, {}, {} and {}",
            path.display(),
            fixture_path.display(),
            mask_path.display(),
            config_path.display()
        );
    }

    if outcome.reached_target {
        Ok(0)
    } else {
        eprintln!(
            "overfit did not reach IoU {:.2} (got {:.4})",
            settings.target_iou, outcome.final_iou
        );
        Ok(1)
    }
}

fn metrics_json(r: &MetricsReport) -> serde_json::Value {
    json!({
        "iou": r.iou * 100.0,
        "f1": r.f1 * 100.0,
        "acc": r.acc * 100.0,
        "tp": r.tp,
        "fp": r.fp,
        "fn": r.fn_,
        "tn": r.tn,
    })
}

pub fn cmd_eval(raw: &[String]) -> Result<i32> {
    let args = Args::parse(raw, &["--pred-dir", "--gt-dir"], &[])?;
    let pred_dir = PathBuf::from(args.require("--pred-dir")?);
    let gt_dir = PathBuf::from(args.require("--gt-dir")?);

    let mut names: Vec<String> = std::fs::read_dir(&pred_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".pgm"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Input(format!("no .pgm masks in {}", pred_dir.display())));
    }

    let mut per_image = BTreeMap::new();
    let mut reports = Vec::new();
    for name in &names {
        let gt_path = gt_dir.join(name);
        if !gt_path.exists() {
            return Err(Error::Input(format!(
                "missing ground-truth counterpart for {name} in {}",
                gt_dir.display()
            )));
        }
        let pred = load_mask(&pred_dir.join(name))?;
        let gt = load_mask(&gt_path)?;
        let r = metrics(&pred, &gt)?;
        per_image.insert(name.clone(), metrics_json(&r));
        reports.push(r);
    }
    let mean = mean_report(&reports);
    let doc = json!({ "images": per_image, "mean": metrics_json(&mean) });
    println!("{}", serde_json::to_string_pretty(&doc).map_err(|e| Error::Config(e.to_string()))?);
    Ok(0)
}

/// Loads a P5 mask and binarizes at 0.5 (files carry {0, 255}).
fn load_mask(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path)?;
    let t = useanet_core::io::image::decode_pgm::<f32>(&bytes)?;
    Ok(t.map(|v| if v > 0.5 { 1.0 } else { 0.0 }))
}

pub fn cmd_fixture(raw: &[String]) -> Result<i32> {
    let args = Args::parse(raw, &["--kind", "--size", "--seed", "--out-image", "--out-mask"], &[])?;
    let kind = FixtureKind::parse(args.get("--kind").unwrap_or("speckled-disk"))?;
    let size: usize = args.get_parsed("--size", 64)?;
    let seed: u64 = args.get_parsed("--seed", 7)?;
    let sample = synth_fixture::<f32>(kind, size, seed)?;
    if let Some(p) = args.get("--out-image") {
        write_gray_pgm(&sample.image, Path::new(p))?;
        println!("wrote {p}");
    }
    if let Some(p) = args.get("--out-mask") {
        write_mask_pgm(&sample.mask, Path::new(p))?;
        println!("wrote {p}");
    }
    Ok(0)
}
