use std::path::Path;

use rand::Rng;

use super::{IntensityMap, SkyConfig};
use crate::error::{Error, Result};
use crate::grid::RawGrid;

/// Number of wide Gaussian blobs in the procedural diffuse field.
pub const BLOB_COUNT: usize = 8;
/// Share of the mean background that is spatially flat.
pub const ISOTROPIC_FRACTION: f64 = 0.3;

/// Smooth diffuse emission: a flat isotropic part plus a sum of wide Gaussian
/// blobs, scaled so the image mean is `background_amplitude` times a per-image
/// factor drawn from the configured spread.
pub fn procedural_background<R: Rng + ?Sized>(cfg: &SkyConfig, rng: &mut R) -> IntensityMap {
    let (w, h) = (cfg.width, cfg.height);
    let side = w.min(h) as f64;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..BLOB_COUNT)
        .map(|_| {
            let cx = rng.gen_range(0.0..w as f64);
            let cy = rng.gen_range(0.0..h as f64);
            let width = rng.gen_range(0.15..0.5) * side;
            let amp = rng.gen_range(0.2..1.0);
            (cx, cy, width, amp)
        })
        .collect();
    let scale = if cfg.background_spread > 1.0 {
        cfg.background_spread.powf(rng.gen_range(-1.0..1.0))
    } else {
        1.0
    };

    let mut field = vec![0.0; w * h];
    for (row, chunk) in field.chunks_mut(w).enumerate() {
        for (col, v) in chunk.iter_mut().enumerate() {
            *v = blobs
                .iter()
                .map(|&(cx, cy, s, a)| {
                    let d2 = (col as f64 - cx).powi(2) + (row as f64 - cy).powi(2);
                    a * (-d2 / (2.0 * s * s)).exp()
                })
                .sum();
        }
    }
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let level = cfg.background_amplitude * scale;
    let lambda = field
        .into_iter()
        .map(|v| level * (ISOTROPIC_FRACTION + (1.0 - ISOTROPIC_FRACTION) * v / mean))
        .collect();
    IntensityMap {
        width: w,
        height: h,
        lambda,
    }
}

/// Loads a user-supplied background template from a `.grid` file.
pub fn load_background(path: &Path) -> Result<IntensityMap> {
    let grid = RawGrid::read(path)?;
    let lambda = grid.data.to_f64();
    if let Some((index, &value)) = lambda
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(Error::InvalidIntensity { index, value });
    }
    Ok(IntensityMap {
        width: grid.width,
        height: grid.height,
        lambda,
    })
}
