//! Acceptance suite: every release criterion in one target, one printed
//! pass/fail line each. Run with
//! `cargo test -p useanet-cli --test acceptance -- --nocapture`.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use useanet_core::gradcheck::{assembled_case, block_cases, op_cases, GradCheckSettings};
use useanet_core::io::checkpoint;
use useanet_core::io::image::standardize;
use useanet_core::io::split::split;
use useanet_core::metrics::{from_counts, metrics};
use useanet_core::model::{init_params, predict_mask, segment_image, ModelConfig};
use useanet_core::profile::profile;
use useanet_core::rng::Rng;
use useanet_core::tensor::Tensor;
use useanet_core::train::{overfit_fixture, OverfitSettings};
use useanet_core::verify;

struct Criterion {
    number: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn record(results: &mut Vec<Criterion>, number: usize, title: &'static str, outcome: Result<String, String>) {
    let (pass, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    let line = format!(
        "criterion {number} {} - {title}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    println!("{line}");
    results.push(Criterion {
        number,
        title,
        pass,
        detail,
    });
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../golden")
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    let cfg = ModelConfig::default();

    // 1. parameter budget within +-10% of 3.64M, profiling under a second
    {
        let start = Instant::now();
        let outcome = match profile(&cfg, 256) {
            Ok(report) => {
                let elapsed = start.elapsed();
                let m = report.params_millions;
                let dev = (m - 3.64).abs() / 3.64;
                if dev <= 0.10 && elapsed < Duration::from_secs(1) {
                    Ok(format!("{m:.3}M parameters ({:+.1}% of 3.64M) in {elapsed:?}", 100.0 * (m - 3.64) / 3.64))
                } else {
                    Err(format!("{m:.3}M ({:.1}% deviation) in {elapsed:?}", dev * 100.0))
                }
            }
            Err(e) => Err(e.to_string()),
        };
        record(&mut results, 1, "parameter budget", outcome);
    }

    // 2. compute budget within +-20% of 0.79G at 256x256
    {
        let outcome = match profile(&cfg, 256) {
            Ok(report) => {
                let g = report.flops_giga;
                let dev = (g - 0.79).abs() / 0.79;
                if dev <= 0.20 {
                    Ok(format!("{g:.3}G FLOPs ({:+.1}% of 0.79G)", 100.0 * (g - 0.79) / 0.79))
                } else {
                    Err(format!("{g:.3}G ({:.1}% deviation)", dev * 100.0))
                }
            }
            Err(e) => Err(e.to_string()),
        };
        record(&mut results, 2, "compute budget", outcome);
    }

    // run the verification suite once; criteria 3 and 5 read it
    let verify_start = Instant::now();
    let checks = verify::run_all(7, None);
    let verify_elapsed = verify_start.elapsed();
    let check = |name: &str| -> Result<(), String> {
        let c = checks
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| format!("check {name} missing"))?;
        if c.pass {
            Ok(())
        } else {
            Err(format!("{name}: {}", c.detail))
        }
    };

    // 3. kernel oracle equivalence on >=100 randomized cases each, < 60 s
    {
        let oracle_names = [
            "conv2d-oracle",
            "dwconv2d-oracle",
            "pool-oracle",
            "resize-oracle",
            "matmul-oracle",
        ];
        let mut outcome = Ok(format!(
            "5 kernel suites vs brute force, whole verification in {verify_elapsed:?}"
        ));
        for name in oracle_names {
            if let Err(e) = check(name) {
                outcome = Err(e);
            }
        }
        if verify_elapsed >= Duration::from_secs(60) {
            outcome = Err(format!("verification took {verify_elapsed:?}"));
        }
        record(&mut results, 3, "kernel oracle equivalence", outcome);
    }

    // 4. gradient correctness at both precisions, assembled model included
    {
        let start = Instant::now();
        let mut failures: Vec<String> = Vec::new();
        let f32_settings = GradCheckSettings::f32_mode();
        match op_cases::<f32>(11) {
            Ok(cases) => {
                for case in cases {
                    match case.run(&f32_settings, 99) {
                        Ok(r) if r.pass => {}
                        Ok(r) => failures.push(format!("f32 {} rel {:.1e}", r.name, r.max_rel)),
                        Err(e) => failures.push(format!("f32 {}: {e}", case.name)),
                    }
                }
            }
            Err(e) => failures.push(e.to_string()),
        }
        let f64_settings = GradCheckSettings::f64_mode();
        let all64 = op_cases::<f64>(11)
            .into_iter()
            .flatten()
            .chain(block_cases::<f64>(11).into_iter().flatten());
        for case in all64 {
            match case.run(&f64_settings, 99) {
                Ok(r) if r.pass => {}
                Ok(r) => failures.push(format!("f64 {} rel {:.1e}", r.name, r.max_rel)),
                Err(e) => failures.push(format!("f64 {}: {e}", case.name)),
            }
        }
        let mut asm_settings = f64_settings;
        asm_settings.samples_per_param = 1;
        asm_settings.max_total_samples = 64;
        match assembled_case::<f64>(11).and_then(|c| c.run(&asm_settings, 99)) {
            Ok(r) if r.pass => {}
            Ok(r) => failures.push(format!("assembled rel {:.1e}", r.max_rel)),
            Err(e) => failures.push(format!("assembled: {e}")),
        }
        let elapsed = start.elapsed();
        let outcome = if failures.is_empty() && elapsed < Duration::from_secs(300) {
            Ok(format!("all op classes + blocks + assembled tiny loss in {elapsed:?}"))
        } else if failures.is_empty() {
            Err(format!("passed but took {elapsed:?}"))
        } else {
            Err(failures.join("; "))
        };
        record(&mut results, 4, "gradient correctness", outcome);
    }

    // 5. architectural invariants
    {
        let names = [
            "mbfp-fusion-weights",
            "mbfp-zero-fc-uniform-weights",
            "laplacian-zero-sum",
            "laplacian-constant-null",
            "uade-closed-forms",
            "eca-zero-init-closed-form",
            "eaa-zero-mlp-constant-halves",
        ];
        let mut outcome = Ok("fusion weights, Laplacian nulls, gating bounds, zero-init closed forms".to_string());
        for name in names {
            if let Err(e) = check(name) {
                outcome = Err(e);
            }
        }
        record(&mut results, 5, "architectural invariants", outcome);
    }

    // 6. desk-scale learning: 64x64 tiny config, <= 300 Adam steps at
    //    lr 1e-4 / clip 1.0, training IoU >= 0.9 within 10 minutes
    {
        let start = Instant::now();
        let settings = OverfitSettings::default();
        let outcome = match overfit_fixture(&ModelConfig::tiny(), &settings, |_| {}) {
            Ok(out) => {
                let elapsed = start.elapsed();
                // trained weights must also reproduce the mask through the
                // segmentation path
                let seg_iou = (|| -> Result<f64, String> {
                    let image = standardize(&out.fixture.image);
                    let probs =
                        segment_image(&out.store, &ModelConfig::tiny(), &image).map_err(|e| e.to_string())?;
                    let mask = predict_mask(&probs, 0.5).map_err(|e| e.to_string())?;
                    let gt = out.fixture.mask.clone();
                    let mask = mask.reshape(gt.shape()).map_err(|e| e.to_string())?;
                    Ok(metrics(&mask, &gt).map_err(|e| e.to_string())?.iou)
                })();
                match seg_iou {
                    Ok(seg) if out.reached_target
                        && out.final_loss < out.first_loss
                        && seg >= 0.9
                        && elapsed < Duration::from_secs(600) =>
                    {
                        Ok(format!(
                            "train IoU {:.3} (segment path {:.3}) after {} steps in {elapsed:?}",
                            out.final_iou, seg, out.steps_run
                        ))
                    }
                    Ok(seg) => Err(format!(
                        "iou {:.3}, segment iou {seg:.3}, steps {}, loss {:.3}->{:.3}, {elapsed:?}",
                        out.final_iou, out.steps_run, out.first_loss, out.final_loss
                    )),
                    Err(e) => Err(e),
                }
            }
            Err(e) => Err(e.to_string()),
        };
        record(&mut results, 6, "desk-scale learning", outcome);
    }

    // 7. ablation direction: each toggle strictly reduces parameters
    {
        let outcome = (|| -> Result<String, String> {
            let full = profile(&cfg, 256).map_err(|e| e.to_string())?.params_total;
            let rows = [
                ("w/o attention", ModelConfig { attention: false, ..ModelConfig::default() }),
                ("w/o multi-branch", ModelConfig { multi_branch: false, ..ModelConfig::default() }),
                ("w/o multi-scale", ModelConfig { multi_scale: false, ..ModelConfig::default() }),
            ];
            let mut parts = Vec::new();
            for (name, c) in rows {
                let p = profile(&c, 256).map_err(|e| e.to_string())?.params_total;
                if p >= full {
                    return Err(format!("{name}: {p} not strictly below {full}"));
                }
                parts.push(format!("{name} {:.3}M", p as f64 / 1e6));
            }
            Ok(format!("full {:.3}M > {}", full as f64 / 1e6, parts.join(", ")))
        })();
        record(&mut results, 7, "ablation direction", outcome);
    }

    // 8. metric identities and the 70:15:15 split
    {
        let outcome = (|| -> Result<String, String> {
            let mut rng = Rng::new(88);
            for _ in 0..1000 {
                let a = Tensor::<f32>::from_fn(&[1, 1, 6, 6], |_| if rng.next_f64() < 0.5 { 1.0 } else { 0.0 });
                let b = Tensor::<f32>::from_fn(&[1, 1, 6, 6], |_| if rng.next_f64() < 0.5 { 1.0 } else { 0.0 });
                let r = metrics(&a, &b).map_err(|e| e.to_string())?;
                let identity = 2.0 * r.iou / (1.0 + r.iou);
                if (r.f1 - identity).abs() > 1e-9 {
                    return Err(format!("F1 {} vs 2IoU/(1+IoU) {identity}", r.f1));
                }
            }
            let r = from_counts(0, 0, 0, 16);
            if r.iou != 1.0 || r.f1 != 1.0 {
                return Err("empty/empty convention broken".into());
            }
            let ids: Vec<String> = (0..100).map(|i| format!("id{i}")).collect();
            let (train, val, test) = split(&ids, 7).map_err(|e| e.to_string())?;
            if (train.len(), val.len(), test.len()) != (70, 15, 15) {
                return Err(format!("split {}/{}/{}", train.len(), val.len(), test.len()));
            }
            let mut all: Vec<&String> = train.iter().chain(&val).chain(&test).collect();
            all.sort();
            all.dedup();
            if all.len() != 100 {
                return Err("split not disjoint/exhaustive".into());
            }
            if split(&ids, 7).map_err(|e| e.to_string())? != (train, val, test) {
                return Err("split not seed-reproducible".into());
            }
            Ok("Dice-Jaccard identity on 1000 pairs; split disjoint, exhaustive, reproducible".into())
        })();
        record(&mut results, 8, "metric identities", outcome);
    }

    // 9. format stability: bit-exact roundtrip and the committed golden
    //    checkpoint segmenting the golden fixture byte-identically
    {
        let outcome = (|| -> Result<String, String> {
            let store = init_params::<f32>(&ModelConfig::tiny(), 9).map_err(|e| e.to_string())?;
            let bytes = checkpoint::serialize(&store).map_err(|e| e.to_string())?;
            let loaded = checkpoint::deserialize(&bytes).map_err(|e| e.to_string())?;
            let again = checkpoint::serialize(&loaded).map_err(|e| e.to_string())?;
            if bytes != again {
                return Err("checkpoint roundtrip not bit-exact".into());
            }

            let dir = golden_dir();
            let out_mask = std::env::temp_dir().join("usean_golden_out.pgm");
            let status = Command::new(env!("CARGO_BIN_EXE_useanet"))
                .args([
                    "segment",
                    "--config",
                    dir.join("config.json").to_str().unwrap(),
                    "--weights",
                    dir.join("weights.ckpt").to_str().unwrap(),
                    "--input",
                    dir.join("fixture.pgm").to_str().unwrap(),
                    "--output",
                    out_mask.to_str().unwrap(),
                ])
                .output()
                .map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(format!(
                    "golden segment failed: {}",
                    String::from_utf8_lossy(&status.stderr)
                ));
            }
            let produced = std::fs::read(&out_mask).map_err(|e| e.to_string())?;
            let expected = std::fs::read(dir.join("mask.pgm")).map_err(|e| e.to_string())?;
            if produced != expected {
                return Err("golden mask differs byte-wise".into());
            }
            Ok(format!(
                "roundtrip bit-exact; golden mask byte-identical ({} bytes)",
                expected.len()
            ))
        })();
        record(&mut results, 9, "format stability", outcome);
    }

    let failed: Vec<String> = results
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("criterion {} ({}): {}", c.number, c.title, c.detail))
        .collect();
    assert!(failed.is_empty(), "\n{}", failed.join("\n"));
}
