//! Randomized kernel-vs-oracle equivalence suites. Each public kernel is
//! compared against its brute-force reference on at least 100 random
//! small shapes.

use useanet_core::ops::{self, ConvSpec, PoolMode};
use useanet_core::oracle;
use useanet_core::rng::Rng;
use useanet_core::tensor::Tensor;

const TOL: f64 = 1e-5;

#[test]
fn conv2d_matches_nested_loop_reference_on_100_cases() {
    let mut rng = Rng::new(0xC0);
    let mut done = 0;
    while done < 100 {
        let n = 1 + rng.below(2);
        let c_in = 1 + rng.below(4);
        let c_out = 1 + rng.below(4);
        let k = [1, 3, 5][rng.below(3)];
        let s = 1 + rng.below(2);
        let p = rng.below(3);
        let h = 1 + rng.below(7);
        let w = 1 + rng.below(7);
        let spec = ConvSpec {
            kernel: (k, k),
            stride: (s, s),
            padding: (p, p),
            groups: 1,
        };
        if spec.out_extents(h, w).is_err() {
            continue;
        }
        let x = Tensor::<f32>::rand_uniform(&[n, c_in, h, w], &mut rng, -1.0, 1.0);
        let wt = Tensor::<f32>::rand_uniform(&[c_out, c_in, k, k], &mut rng, -1.0, 1.0);
        let b = Tensor::<f32>::rand_uniform(&[c_out], &mut rng, -1.0, 1.0);
        let fast = ops::conv2d(&x, &wt, Some(&b), &spec).unwrap();
        let slow = oracle::conv2d_ref(&x, &wt, Some(&b), (s, s), (p, p), 1).unwrap();
        assert!(fast.max_abs_diff(&slow).unwrap() <= TOL);
        done += 1;
    }
}

#[test]
fn grouped_conv_matches_reference() {
    let mut rng = Rng::new(0xC1);
    for _ in 0..100 {
        let groups = 1 + rng.below(3);
        let cig = 1 + rng.below(2);
        let cog = 1 + rng.below(2);
        let (c_in, c_out) = (groups * cig, groups * cog);
        let x = Tensor::<f32>::rand_uniform(&[1, c_in, 6, 6], &mut rng, -1.0, 1.0);
        let wt = Tensor::<f32>::rand_uniform(&[c_out, cig, 3, 3], &mut rng, -1.0, 1.0);
        let spec = ConvSpec::same(3).with_groups(groups);
        let fast = ops::conv2d(&x, &wt, None, &spec).unwrap();
        let slow = oracle::conv2d_ref(&x, &wt, None, (1, 1), (1, 1), groups).unwrap();
        assert!(fast.max_abs_diff(&slow).unwrap() <= TOL);
    }
}

#[test]
fn dwconv_matches_per_channel_loops() {
    let mut rng = Rng::new(0xC2);
    for _ in 0..100 {
        let c = 3;
        let x = Tensor::<f32>::rand_uniform(&[1, c, 7, 7], &mut rng, -1.0, 1.0);
        let wt = Tensor::<f32>::rand_uniform(&[c, 1, 3, 3], &mut rng, -1.0, 1.0);
        let spec = ConvSpec::same(3).with_groups(c);
        let fast = ops::dwconv2d(&x, &wt, &spec).unwrap();
        let slow = oracle::conv2d_ref(&x, &wt, None, (1, 1), (1, 1), c).unwrap();
        assert!(fast.max_abs_diff(&slow).unwrap() <= TOL);
    }
}

#[test]
fn pooling_matches_exhaustive_scan() {
    let mut rng = Rng::new(0xC3);
    for _ in 0..100 {
        let c = 1 + rng.below(3);
        let k = 1 + rng.below(3);
        let h = k + rng.below(6);
        let w = k + rng.below(6);
        let s = 1 + rng.below(2);
        let x = Tensor::<f32>::rand_uniform(&[1, c, h, w], &mut rng, -2.0, 2.0);
        for max_mode in [false, true] {
            let mode = if max_mode { PoolMode::Max } else { PoolMode::Avg };
            let fast = ops::pool2d(&x, mode, (k, k), (s, s), (0, 0)).unwrap();
            let slow = oracle::pool2d_ref(&x, max_mode, (k, k), (s, s)).unwrap();
            assert!(fast.max_abs_diff(&slow).unwrap() <= TOL);
        }
    }
}

#[test]
fn bilinear_resize_matches_direct_interpolation() {
    let mut rng = Rng::new(0xC4);
    for _ in 0..100 {
        let h = 2 + rng.below(7);
        let w = 2 + rng.below(7);
        let oh = 1 + rng.below(12);
        let ow = 1 + rng.below(12);
        let x = Tensor::<f32>::rand_uniform(&[1, 2, h, w], &mut rng, -1.0, 1.0);
        let fast = ops::bilinear_resize(&x, oh, ow).unwrap();
        let slow = oracle::bilinear_ref(&x, oh, ow).unwrap();
        assert!(fast.max_abs_diff(&slow).unwrap() <= TOL);
    }
}

#[test]
fn hand_rolled_2x2_to_4x4_case() {
    let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let up = ops::bilinear_resize(&x, 4, 4).unwrap();
    let oracle = oracle::bilinear_ref(&x, 4, 4).unwrap();
    assert!(up.max_abs_diff(&oracle).unwrap() <= 1e-6);
    // corners replicate under half-pixel centers
    assert_eq!(up.data()[0], 0.0);
    assert_eq!(up.data()[15], 3.0);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = Rng::new(0xC5);
    for _ in 0..100 {
        let m = 1 + rng.below(8);
        let k = 1 + rng.below(8);
        let n = 1 + rng.below(8);
        let a = Tensor::<f32>::rand_uniform(&[m, k], &mut rng, -1.0, 1.0);
        let b = Tensor::<f32>::rand_uniform(&[k, n], &mut rng, -1.0, 1.0);
        let fast = ops::matmul(&a, &b).unwrap();
        let slow = oracle::matmul_ref(&a, &b).unwrap();
        assert!(fast.max_abs_diff(&slow).unwrap() <= TOL);
    }
}

#[test]
fn conv_linearity_for_bias_free_kernels() {
    let mut rng = Rng::new(0xC6);
    let spec = ConvSpec::same(3);
    let w = Tensor::<f32>::rand_uniform(&[3, 2, 3, 3], &mut rng, -1.0, 1.0);
    for _ in 0..20 {
        let x = Tensor::<f32>::rand_uniform(&[1, 2, 6, 6], &mut rng, -1.0, 1.0);
        let y = Tensor::<f32>::rand_uniform(&[1, 2, 6, 6], &mut rng, -1.0, 1.0);
        let (a, b) = (rng.uniform(-2.0, 2.0) as f32, rng.uniform(-2.0, 2.0) as f32);
        let mixed = x.zip_map(&y, "mix", |xv, yv| a * xv + b * yv).unwrap();
        let lhs = ops::conv2d(&mixed, &w, None, &spec).unwrap();
        let cx = ops::conv2d(&x, &w, None, &spec).unwrap();
        let cy = ops::conv2d(&y, &w, None, &spec).unwrap();
        let rhs = cx.zip_map(&cy, "mix", |xv, yv| a * xv + b * yv).unwrap();
        let scale = rhs.data().iter().map(|v| v.abs() as f64).fold(1.0, f64::max);
        assert!(lhs.max_abs_diff(&rhs).unwrap() / scale <= 1e-4);
    }
}

#[test]
fn loss_kernel_matches_scalar_loops() {
    let mut rng = Rng::new(0xC7);
    for _ in 0..20 {
        let gt = Tensor::<f64>::from_fn(&[2, 1, 7, 7], |_| if rng.next_f64() < 0.5 { 1.0 } else { 0.0 });
        let logits = Tensor::<f64>::rand_uniform(&[2, 1, 7, 7], &mut rng, -4.0, 4.0);
        let weight = useanet_core::loss::boundary_weight(&gt, 5.0, 15).unwrap();
        let mut tape = useanet_core::graph::Tape::<f64>::new(false);
        let l = tape.leaf(logits.clone());
        let loss = tape.weighted_bce_iou(l, &gt, &weight, 1.0).unwrap();
        let reference = oracle::weighted_bce_iou_ref(logits.data(), gt.data(), weight.data(), 2, 1.0);
        assert!((tape.value(loss).item().unwrap() - reference).abs() <= 1e-6);
    }
}
