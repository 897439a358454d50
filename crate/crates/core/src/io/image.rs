//! Image ingestion (binary PGM required, 8-bit gray/RGB PNG optional) and
//! the preprocessing helpers.
//!
//! Loading scales to [0, 1], replicates grayscale to three channels and
//! standardizes with mean 0.5 / std 0.5. Resizing to the network input
//! size is a separate step so same-size data passes through untouched.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ops::bilinear_resize;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// `(x - 0.5) / 0.5` per element.
pub fn standardize<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let half = T::from_f64(0.5);
    t.map(|v| (v - half) / half)
}

/// Bilinear resize of a `[3,H,W]` (or `[1,H,W]`) image tensor.
pub fn resize_image<T: Real>(t: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [c, h, w] = t.shape() else {
        return Err(Error::Input(format!("expected [C,H,W], got {:?}", t.shape())));
    };
    let (c, h, w) = (*c, *h, *w);
    let batched = t.reshape(&[1, c, h, w])?;
    let resized = bilinear_resize(&batched, out_h, out_w)?;
    resized.reshape(&[c, out_h, out_w])
}

fn is_pgm(bytes: &[u8]) -> bool {
    bytes.starts_with(b"P5")
}

fn is_png(bytes: &[u8]) -> bool {
    bytes.starts_with(&[0x89, b'P', b'N', b'G'])
}

/// Skips whitespace and `#` comment lines, netpbm style.
fn skip_pgm_separators(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_pgm_number(bytes: &[u8], pos: usize) -> Result<(u32, usize)> {
    let start = skip_pgm_separators(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(Error::Format("expected integer in PGM header".into()));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let value = text
        .parse::<u32>()
        .map_err(|_| Error::Format(format!("PGM header value {text} out of range")))?;
    Ok((value, end))
}

/// Decodes a binary (P5) PGM with maxval 255 into `[1,H,W]` in [0, 1].
pub fn decode_pgm<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    if !is_pgm(bytes) {
        return Err(Error::Format("not a P5 PGM (bad signature)".into()));
    }
    let (width, pos) = read_pgm_number(bytes, 2)?;
    let (height, pos) = read_pgm_number(bytes, pos)?;
    let (maxval, pos) = read_pgm_number(bytes, pos)?;
    if maxval != 255 {
        return Err(Error::Format(format!("PGM maxval {maxval}, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format("zero PGM extent".into()));
    }
    // exactly one whitespace byte separates header and payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format("missing separator before PGM payload".into()));
    }
    let payload = &bytes[pos + 1..];
    let expected = (width * height) as usize;
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected: (pos + 1 + expected) as u64,
            got: bytes.len() as u64,
        });
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after PGM payload",
            payload.len() - expected
        )));
    }
    let data: Vec<T> = payload.iter().map(|&b| T::from_f64(b as f64 / 255.0)).collect();
    Tensor::new(vec![1, height as usize, width as usize], data)
}

/// Encodes a `[1,H,W]` or `[H,W]` binary mask as P5 with values {0, 255}.
pub fn encode_mask_pgm<T: Real>(mask: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w) = match mask.shape() {
        [1, h, w] => (*h, *w),
        [h, w] => (*h, *w),
        other => return Err(Error::Input(format!("expected mask [1,H,W] or [H,W], got {other:?}"))),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(mask.data().iter().map(|&v| if v.to_f64() > 0.5 { 255u8 } else { 0u8 }));
    Ok(out)
}

pub fn write_mask_pgm<T: Real>(mask: &Tensor<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_mask_pgm(mask)?)?;
    Ok(())
}

/// Writes a grayscale image in [0, 1] as P5, rounding to 8 bits. For
/// `[3,H,W]` inputs the first channel is taken (fixture images replicate
/// the gray plane anyway).
pub fn write_gray_pgm<T: Real>(image: &Tensor<T>, path: &Path) -> Result<()> {
    let (h, w, plane) = match image.shape() {
        [1, h, w] | [3, h, w] => (*h, *w, &image.data()[..h * w]),
        [h, w] => (*h, *w, image.data()),
        other => return Err(Error::Input(format!("expected [1|3,H,W] or [H,W], got {other:?}"))),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        plane
            .iter()
            .map(|&v| (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out)?;
    Ok(())
}

/// Decodes an 8-bit grayscale or RGB PNG into `[C,H,W]` in [0, 1]
/// (C = 1 or 3).
pub fn decode_png<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("png bit depth {:?}, expected 8", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1usize,
        png::ColorType::Rgb => 3usize,
        other => return Err(Error::Format(format!("png color type {other:?} unsupported"))),
    };
    let pixels = &buf[..info.buffer_size()];
    // interleaved -> planar
    let mut data = vec![T::ZERO; channels * h * w];
    for i in 0..h * w {
        for c in 0..channels {
            data[c * h * w + i] = T::from_f64(pixels[i * channels + c] as f64 / 255.0);
        }
    }
    Tensor::new(vec![channels, h, w], data)
}

/// Loads a PGM or PNG, replicates grayscale to three channels and
/// standardizes. Returns `[3,H,W]` at the file's native resolution.
pub fn load_image<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path)?;
    let raw: Tensor<T> = if is_pgm(&bytes) {
        decode_pgm(&bytes)?
    } else if is_png(&bytes) {
        decode_png(&bytes)?
    } else {
        return Err(Error::Format(format!(
            "{}: unrecognized image signature (want P5 PGM or PNG)",
            path.display()
        )));
    };
    Ok(standardize(&gray_to_rgb(&raw)?))
}

/// Replicates `[1,H,W]` to `[3,H,W]`; passes `[3,H,W]` through.
pub fn gray_to_rgb<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    match t.shape() {
        [3, _, _] => Ok(t.clone()),
        [1, h, w] => {
            let mut data = Vec::with_capacity(3 * h * w);
            for _ in 0..3 {
                data.extend_from_slice(t.data());
            }
            Tensor::new(vec![3, *h, *w], data)
        }
        other => Err(Error::Input(format!("expected [1|3,H,W], got {other:?}"))),
    }
}
