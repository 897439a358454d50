//! Brute-force reference implementations.
//!
//! Deliberately naive (nested loops, no shared code with the kernels in
//! [`crate::ops`]) so the verification suites compare two independent
//! routes. Everything here computes in `f64` and is far too slow for real
//! inference; that is the point.

use crate::error::Result;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Cross-correlation with explicit zero padding, seven nested loops.
pub fn conv2d_ref<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: (usize, usize),
    padding: (usize, usize),
    groups: usize,
) -> Result<Tensor<T>> {
    let (n, c_in, h, w) = input.dims4()?;
    let (c_out, c_in_g, kh, kw) = weight.dims4()?;
    let (sh, sw) = stride;
    let (ph, pw) = padding;
    let out_h = (h + 2 * ph - kh) / sh + 1;
    let out_w = (w + 2 * pw - kw) / sw + 1;
    let co_per_g = c_out / groups;
    let x = input.data();
    let wt = weight.data();
    let mut out = Vec::with_capacity(n * c_out * out_h * out_w);
    for nn in 0..n {
        for co in 0..c_out {
            let g = co / co_per_g;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = 0.0f64;
                    for cig in 0..c_in_g {
                        let ci = g * c_in_g + cig;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                let xv = if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize
                                {
                                    x[((nn * c_in + ci) * h + iy as usize) * w + ix as usize]
                                        .to_f64()
                                } else {
                                    0.0
                                };
                                acc += xv
                                    * wt[((co * c_in_g + cig) * kh + ky) * kw + kx].to_f64();
                            }
                        }
                    }
                    if let Some(b) = bias {
                        acc += b.data()[co].to_f64();
                    }
                    out.push(T::from_f64(acc));
                }
            }
        }
    }
    Tensor::new(vec![n, c_out, out_h, out_w], out)
}

/// Exhaustive window scan for avg/max pooling (no padding).
pub fn pool2d_ref<T: Real>(
    input: &Tensor<T>,
    max_mode: bool,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let (kh, kw) = window;
    let (sh, sw) = stride;
    let out_h = (h - kh) / sh + 1;
    let out_w = (w - kw) / sw + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = f64::NEG_INFINITY;
                let mut acc = 0.0f64;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let v = x[base + (oy * sh + ky) * w + (ox * sw + kx)].to_f64();
                        acc += v;
                        if v > best {
                            best = v;
                        }
                    }
                }
                out.push(T::from_f64(if max_mode { best } else { acc / (kh * kw) as f64 }));
            }
        }
    }
    Tensor::new(vec![n, c, out_h, out_w], out)
}

/// Direct interpolation formula, one output pixel at a time
/// (half-pixel-centers convention).
pub fn bilinear_ref<T: Real>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let sy = ((oy as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).max(0.0);
                let sx = ((ox as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).max(0.0);
                let y0 = (sy.floor() as usize).min(h - 1);
                let x0 = (sx.floor() as usize).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let x1 = (x0 + 1).min(w - 1);
                let fy = (sy - y0 as f64).clamp(0.0, 1.0);
                let fx = (sx - x0 as f64).clamp(0.0, 1.0);
                let p = |yy: usize, xx: usize| x[base + yy * w + xx].to_f64();
                let v = p(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + p(y0, x1) * (1.0 - fy) * fx
                    + p(y1, x0) * fy * (1.0 - fx)
                    + p(y1, x1) * fy * fx;
                out.push(T::from_f64(v));
            }
        }
    }
    Tensor::new(vec![n, c, out_h, out_w], out)
}

/// Triple-loop matrix product.
pub fn matmul_ref<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (_, n) = b.dims2()?;
    let ad = a.data();
    let bd = b.data();
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for kk in 0..k {
                acc += ad[i * k + kk].to_f64() * bd[kk * n + j].to_f64();
            }
            out.push(T::from_f64(acc));
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Per-pixel scalar-loop evaluation of the weighted BCE + weighted IoU
/// loss for one `[N,1,H,W]` logit map (mean over batch).
pub fn weighted_bce_iou_ref(logits: &[f64], target: &[f64], weight: &[f64], batch: usize, eps: f64) -> f64 {
    let per = logits.len() / batch;
    let mut total = 0.0;
    for nn in 0..batch {
        let mut wsum = 0.0;
        let mut wbce = 0.0;
        let mut inter = 0.0;
        let mut union = 0.0;
        for i in nn * per..(nn + 1) * per {
            let (x, t, wv) = (logits[i], target[i], weight[i]);
            let p = 1.0 / (1.0 + (-x).exp());
            let bce = x.max(0.0) - x * t + (1.0 + (-x.abs()).exp()).ln();
            wbce += wv * bce;
            wsum += wv;
            inter += wv * p * t;
            union += wv * (p + t - p * t);
        }
        total += wbce / wsum + (1.0 - (inter + eps) / (union + eps));
    }
    total / batch as f64
}

/// Pixel-count metrics straight from the definition.
pub fn metrics_ref(pred: &[f64], gt: &[f64]) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        match (p > 0.5, g > 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    (tp, fp, fn_, tn)
}
