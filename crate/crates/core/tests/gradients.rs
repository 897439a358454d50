//! Finite-difference verification of every differentiable op class at
//! both precision profiles, plus the block-level compositions at f64.
//! The assembled network case runs in the acceptance suite.

use useanet_core::gradcheck::{block_cases, op_cases, GradCheckSettings};

#[test]
fn every_op_class_passes_f64_gradcheck() {
    let settings = GradCheckSettings::f64_mode();
    for case in op_cases::<f64>(11).unwrap() {
        let report = case.run(&settings, 99).unwrap();
        assert!(report.pass, "{}", report.summary_line());
    }
}

#[test]
fn every_op_class_passes_f32_gradcheck() {
    let settings = GradCheckSettings::f32_mode();
    for case in op_cases::<f32>(11).unwrap() {
        let report = case.run(&settings, 99).unwrap();
        assert!(report.pass, "{}", report.summary_line());
    }
}

#[test]
fn block_compositions_pass_f64_gradcheck() {
    let settings = GradCheckSettings::f64_mode();
    for case in block_cases::<f64>(11).unwrap() {
        let report = case.run(&settings, 99).unwrap();
        assert!(report.pass, "{}", report.summary_line());
    }
}

#[test]
fn gradcheck_reports_every_op_case_once() {
    let names: Vec<&str> = op_cases::<f64>(1)
        .unwrap()
        .iter()
        .map(|c| c.name)
        .collect();
    for expected in [
        "conv2d",
        "conv2d-grouped",
        "dwconv2d",
        "laplacian",
        "batchnorm-train",
        "batchnorm-eval",
        "layernorm",
        "relu",
        "gelu",
        "sigmoid",
        "softmax",
        "matmul",
        "bmm-attention",
        "pool2d",
        "global-pools",
        "channel-stats",
        "bilinear-resize",
        "broadcast-layout",
        "weighted-bce-iou",
    ] {
        assert!(names.contains(&expected), "missing op case {expected}");
    }
}
