use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Grid;
use crate::scalar::Scalar;
use crate::skysim::SkySample;

/// Upper bound on rejection draws for one source-bearing crop.
pub const MAX_REJECTION_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropConfig {
    pub side: usize,
    pub source_fraction: f64,
    pub batch_size: usize,
}

impl CropConfig {
    pub fn new(side: usize) -> Self {
        CropConfig {
            side,
            source_fraction: 0.5,
            batch_size: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 || self.batch_size == 0 || !(0.0..=1.0).contains(&self.source_fraction) {
            return Err(Error::config(format!("invalid crop settings {self:?}")));
        }
        Ok(())
    }
}

/// Images with their rasterized truth masks, ready for cropping.
#[derive(Debug, Clone)]
pub struct LabeledSet<T> {
    pub images: Vec<Grid<T>>,
    pub masks: Vec<Vec<u8>>,
}

impl<T: Scalar> LabeledSet<T> {
    pub fn from_samples(samples: &[SkySample]) -> Self {
        LabeledSet {
            images: samples.iter().map(count_grid).collect(),
            masks: samples
                .iter()
                .map(|s| s.truth.rasterize(s.image.width, s.image.height))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn mask_crop(&self, i: usize, left: usize, top: usize, side: usize) -> Vec<u8> {
        let w = self.images[i].width;
        let mut out = Vec::with_capacity(side * side);
        for row in top..top + side {
            out.extend_from_slice(&self.masks[i][row * w + left..row * w + left + side]);
        }
        out
    }
}

pub fn count_grid<T: Scalar>(s: &SkySample) -> Grid<T> {
    Grid {
        width: s.image.width,
        height: s.image.height,
        data: s
            .image
            .counts
            .iter()
            .map(|&c| T::of(f64::from(c)))
            .collect(),
    }
}

/// Crops and their masks; `masks` holds `s·s` values per crop, in crop order.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub crops: Vec<Grid<T>>,
    pub masks: Vec<T>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.crops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }
}

/// Draws a batch where each element, with probability `source_fraction`,
/// is resampled until its crop holds at least one source.
pub fn sample_batch<T: Scalar, R: Rng + ?Sized>(
    set: &LabeledSet<T>,
    cfg: &CropConfig,
    rng: &mut R,
) -> Result<Batch<T>> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::config("cannot sample crops from an empty set"));
    }
    let s = cfg.side;
    if let Some(g) = set.images.iter().find(|g| g.width < s || g.height < s) {
        return Err(Error::config(format!(
            "crop side {s} exceeds a {}x{} image",
            g.width, g.height
        )));
    }
    let mut batch = Batch {
        crops: Vec::with_capacity(cfg.batch_size),
        masks: Vec::with_capacity(cfg.batch_size * s * s),
    };
    for _ in 0..cfg.batch_size {
        let need_source = rng.gen_bool(cfg.source_fraction);
        let mut attempts = 0;
        let (i, left, top, mask) = loop {
            let i = rng.gen_range(0..set.len());
            let g = &set.images[i];
            let left = rng.gen_range(0..=g.width - s);
            let top = rng.gen_range(0..=g.height - s);
            let mask = set.mask_crop(i, left, top, s);
            if !need_source || mask.iter().any(|&m| m > 0) {
                break (i, left, top, mask);
            }
            attempts += 1;
            if attempts >= MAX_REJECTION_ATTEMPTS {
                return Err(Error::NoSourceCrop(attempts));
            }
        };
        batch.crops.push(set.images[i].crop(left, top, s));
        batch
            .masks
            .extend(mask.iter().map(|&m| T::of(f64::from(m))));
    }
    Ok(batch)
}
