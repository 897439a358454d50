//! Synthetic desk-scale fixtures: bright lesion-like disks on a dark
//! background, optionally under multiplicative speckle, with exact
//! analytic masks.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixtureKind {
    Disk,
    TwoDisks,
    SpeckledDisk,
}

impl FixtureKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(FixtureKind::Disk),
            "two-disks" => Ok(FixtureKind::TwoDisks),
            "speckled-disk" => Ok(FixtureKind::SpeckledDisk),
            other => Err(Error::Input(format!(
                "unknown fixture kind {other:?} (disk|two-disks|speckled-disk)"
            ))),
        }
    }
}

/// One image/mask pair. The image lives in [0, 1] (standardization is the
/// caller's preprocessing step); the mask is the exact analytic disk.
#[derive(Clone, Debug)]
pub struct SampleRecord<T> {
    pub image: Tensor<T>,
    pub mask: Tensor<T>,
    pub source: String,
}

const BACKGROUND: f64 = 0.18;
const FOREGROUND: f64 = 0.82;

fn disk_mask(size: usize, centers: &[(f64, f64)], radius: f64) -> Vec<bool> {
    let mut mask = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            for &(cy, cx) in centers {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                if dy * dy + dx * dx <= radius * radius {
                    mask[y * size + x] = true;
                }
            }
        }
    }
    mask
}

/// Deterministic synthetic sample.
///
/// Geometry per kind (radius scales with `size`): `disk` r = 5s/32
/// centered; `speckled-disk` r = 5s/16 centered with lognormal
/// multiplicative speckle; `two-disks` r = s/8 at (s/4, s/4) and
/// (3s/4, 3s/4), disjoint by construction.
pub fn synth_fixture<T: Real>(kind: FixtureKind, size: usize, seed: u64) -> Result<SampleRecord<T>> {
    if size < 32 {
        return Err(Error::Input(format!("fixture size {size} below 32")));
    }
    let mut rng = Rng::new(seed ^ 0xF1C5_0DA7);
    let center = (size as f64 - 1.0) / 2.0;
    let (centers, radius): (Vec<(f64, f64)>, f64) = match kind {
        FixtureKind::Disk => (vec![(center, center)], 5.0 * size as f64 / 32.0),
        FixtureKind::SpeckledDisk => (vec![(center, center)], 3.0 * size as f64 / 8.0),
        FixtureKind::TwoDisks => {
            let q = size as f64 / 4.0;
            (vec![(q, q), (3.0 * q, 3.0 * q)], size as f64 / 8.0)
        }
    };
    let mask = disk_mask(size, &centers, radius);

    let mut gray = vec![0.0f64; size * size];
    for (g, &inside) in gray.iter_mut().zip(mask.iter()) {
        *g = if inside { FOREGROUND } else { BACKGROUND };
    }
    if kind == FixtureKind::SpeckledDisk {
        // multiplicative lognormal speckle, clamped back into [0, 1]
        for g in gray.iter_mut() {
            let factor = (0.06 * rng.normal()).exp();
            *g = (*g * factor).clamp(0.0, 1.0);
        }
    }

    let mut image = Vec::with_capacity(3 * size * size);
    for _ in 0..3 {
        image.extend(gray.iter().map(|&v| T::from_f64(v)));
    }
    let mask_t = Tensor::from_fn(&[1, size, size], |i| if mask[i] { T::ONE } else { T::ZERO });
    Ok(SampleRecord {
        image: Tensor::new(vec![3, size, size], image)?,
        mask: mask_t,
        source: format!("synth:{kind:?}:{size}:{seed}"),
    })
}
