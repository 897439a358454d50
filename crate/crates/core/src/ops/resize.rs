//! Bilinear and nearest-neighbor resampling.

use crate::error::{spec_err, Result};
use crate::parallel::for_each_chunk_mut;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Source coordinate and interpolation weights for one output index under
/// the half-pixel-centers (align-corners = false) convention.
#[inline]
fn bilinear_axis(out_i: usize, scale: f64, in_extent: usize) -> (usize, usize, f64) {
    let src = (out_i as f64 + 0.5) * scale - 0.5;
    let src = src.max(0.0);
    let i0 = (src.floor() as usize).min(in_extent - 1);
    let i1 = (i0 + 1).min(in_extent - 1);
    let frac = src - i0 as f64;
    (i0, i1, frac.clamp(0.0, 1.0))
}

/// Bilinear resize of an NCHW tensor to `out_h x out_w`
/// (align-corners = false). Same-size resize reproduces the input exactly.
pub fn bilinear_resize<T: Real>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(spec_err("bilinear_resize", "zero output extent"));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(input.clone());
    }
    let scale_h = h as f64 / out_h as f64;
    let scale_w = w as f64 / out_w as f64;
    let rows: Vec<(usize, usize, f64)> = (0..out_h).map(|i| bilinear_axis(i, scale_h, h)).collect();
    let cols: Vec<(usize, usize, f64)> = (0..out_w).map(|i| bilinear_axis(i, scale_w, w)).collect();
    let x = input.data();
    let mut out = vec![T::ZERO; n * c * out_h * out_w];
    for_each_chunk_mut(&mut out, out_h * out_w, |plane_idx, plane| {
        let base = plane_idx * h * w;
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let p00 = x[base + y0 * w + x0].to_f64();
                let p01 = x[base + y0 * w + x1].to_f64();
                let p10 = x[base + y1 * w + x0].to_f64();
                let p11 = x[base + y1 * w + x1].to_f64();
                let top = p00 + (p01 - p00) * fx;
                let bot = p10 + (p11 - p10) * fx;
                plane[oy * out_w + ox] = T::from_f64(top + (bot - top) * fy);
            }
        }
    });
    let out = Tensor::new(vec![n, c, out_h, out_w], out)?;
    out.validate_finite("bilinear_resize")?;
    Ok(out)
}

/// Transpose of [`bilinear_resize`]: distributes each output gradient onto
/// its (up to four) source pixels with the forward interpolation weights.
pub fn bilinear_resize_backward<T: Real>(
    in_h: usize,
    in_w: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, out_h, out_w) = grad_out.dims4()?;
    if (out_h, out_w) == (in_h, in_w) {
        return Ok(grad_out.clone());
    }
    let scale_h = in_h as f64 / out_h as f64;
    let scale_w = in_w as f64 / out_w as f64;
    let rows: Vec<(usize, usize, f64)> = (0..out_h).map(|i| bilinear_axis(i, scale_h, in_h)).collect();
    let cols: Vec<(usize, usize, f64)> = (0..out_w).map(|i| bilinear_axis(i, scale_w, in_w)).collect();
    let go = grad_out.data();
    let mut dx = vec![T::ZERO; n * c * in_h * in_w];
    for plane_idx in 0..n * c {
        let ob = plane_idx * out_h * out_w;
        let ib = plane_idx * in_h * in_w;
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let g = go[ob + oy * out_w + ox].to_f64();
                dx[ib + y0 * in_w + x0] += T::from_f64(g * (1.0 - fy) * (1.0 - fx));
                dx[ib + y0 * in_w + x1] += T::from_f64(g * (1.0 - fy) * fx);
                dx[ib + y1 * in_w + x0] += T::from_f64(g * fy * (1.0 - fx));
                dx[ib + y1 * in_w + x1] += T::from_f64(g * fy * fx);
            }
        }
    }
    Tensor::new(vec![n, c, in_h, in_w], dx)
}

/// Nearest-neighbor resize (used for downsampling binary targets; not
/// differentiable and never placed on the tape).
pub fn nearest_resize<T: Real>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(spec_err("nearest_resize", "zero output extent"));
    }
    let scale_h = h as f64 / out_h as f64;
    let scale_w = w as f64 / out_w as f64;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane_idx in 0..n * c {
        let base = plane_idx * h * w;
        for oy in 0..out_h {
            let iy = ((oy as f64 + 0.5) * scale_h).floor().clamp(0.0, h as f64 - 1.0) as usize;
            for ox in 0..out_w {
                let ix = ((ox as f64 + 0.5) * scale_w).floor().clamp(0.0, w as f64 - 1.0) as usize;
                out.push(x[base + iy * w + ix]);
            }
        }
    }
    Tensor::new(vec![n, c, out_h, out_w], out)
}
