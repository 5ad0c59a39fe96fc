//! Simulated sky segments: diffuse background, PSF-broadened point sources and
//! Poisson photon counting.

mod background;
mod dataset;
mod poisson;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use background::{load_background, procedural_background, BLOB_COUNT, ISOTROPIC_FRACTION};
pub use dataset::{
    generate_dataset, image_file, load_dataset, read_count_map, read_sources, sources_file,
    split_counts, write_count_map, write_sources, Dataset, DatasetManifest, ManifestEntry, Split,
    DEFAULT_SPLIT, MANIFEST_FORMAT,
};
pub use poisson::sample_poisson;

/// PSF kernels are evaluated out to this many standard deviations.
pub const PSF_TRUNCATION: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkyConfig {
    pub width: usize,
    pub height: usize,
    pub deg_per_pixel: f64,
    /// Gaussian PSF standard deviation in pixels.
    pub psf_sigma: f64,
    pub n_sources_base: usize,
    pub n_sources_jitter: usize,
    /// Expected total counts of the faintest source.
    pub flux_min: f64,
    pub flux_max: f64,
    /// Mean expected counts per pixel of the diffuse background.
    pub background_amplitude: f64,
    /// Per-image background scale is drawn log-uniformly from
    /// `[1/spread, spread]`; 1 keeps every image at `background_amplitude`.
    #[serde(default = "unit_spread")]
    pub background_spread: f64,
    pub seed: u64,
}

fn unit_spread() -> f64 {
    1.0
}

impl Default for SkyConfig {
    /// A 10°×10° segment at 0.05°/px. The flux range straddles the background
    /// so both bright-source and background-comparable images occur.
    fn default() -> Self {
        SkyConfig {
            width: 200,
            height: 200,
            deg_per_pixel: 0.05,
            psf_sigma: 5.0,
            n_sources_base: 7,
            n_sources_jitter: 2,
            flux_min: 300.0,
            flux_max: 4000.0,
            background_amplitude: 5.0,
            background_spread: 4.0,
            seed: 0,
        }
    }
}

impl SkyConfig {
    /// Small high-contrast maps for quick end-to-end runs: 64×64 px, five
    /// sources on average, every source well above the background.
    pub fn desk() -> Self {
        SkyConfig {
            width: 64,
            height: 64,
            psf_sigma: 2.0,
            n_sources_base: 5,
            n_sources_jitter: 2,
            flux_min: 300.0,
            flux_max: 1200.0,
            background_amplitude: 1.0,
            background_spread: 1.0,
            ..SkyConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("width and height must be positive"));
        }
        if !(self.psf_sigma > 0.0 && self.psf_sigma.is_finite()) {
            return Err(Error::config("psf_sigma must be positive"));
        }
        if !(self.flux_min >= 0.0 && self.flux_min <= self.flux_max && self.flux_max.is_finite()) {
            return Err(Error::config(
                "flux range must satisfy 0 <= flux_min <= flux_max",
            ));
        }
        if !(self.background_amplitude >= 0.0 && self.background_amplitude.is_finite()) {
            return Err(Error::config(
                "background_amplitude must be finite and nonnegative",
            ));
        }
        if !(self.background_spread >= 1.0 && self.background_spread.is_finite()) {
            return Err(Error::config("background_spread must be at least 1"));
        }
        if self.deg_per_pixel.is_nan() || self.deg_per_pixel <= 0.0 {
            return Err(Error::config("deg_per_pixel must be positive"));
        }
        Ok(())
    }

    /// Angular extent (width, height) in degrees.
    pub fn extent_deg(&self) -> (f64, f64) {
        (
            self.deg_per_pixel * self.width as f64,
            self.deg_per_pixel * self.height as f64,
        )
    }
}

/// Independent random stream for sample `index` of a run seeded with `seed`.
///
/// Streams depend only on `(seed, index)`, so samples can be produced in any
/// order or on any number of workers.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Expected photon counts per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMap {
    pub width: usize,
    pub height: usize,
    pub lambda: Vec<f64>,
}

impl IntensityMap {
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        IntensityMap {
            width,
            height,
            lambda: vec![value; width * height],
        }
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.lambda[row * self.width + col]
    }

    pub fn total(&self) -> f64 {
        self.lambda.iter().sum()
    }

    /// Adds a truncated Gaussian PSF of total mass `flux` centred at `(x, y)`.
    pub fn add_point_source(&mut self, x: f64, y: f64, flux: f64, sigma: f64) {
        let reach = (PSF_TRUNCATION * sigma).ceil() as i64;
        let norm = flux / (2.0 * std::f64::consts::PI * sigma * sigma);
        let inv_two_var = 1.0 / (2.0 * sigma * sigma);
        let (cx, cy) = (x.round() as i64, y.round() as i64);
        let row_lo = (cy - reach).max(0);
        let row_hi = (cy + reach).min(self.height as i64 - 1);
        let col_lo = (cx - reach).max(0);
        let col_hi = (cx + reach).min(self.width as i64 - 1);
        for row in row_lo..=row_hi {
            let dy = row as f64 - y;
            for col in col_lo..=col_hi {
                let dx = col as f64 - x;
                self.lambda[row as usize * self.width + col as usize] +=
                    norm * (-(dx * dx + dy * dy) * inv_two_var).exp();
            }
        }
    }
}

/// Observed photon counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMap {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u32>,
}

impl CountMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        CountMap {
            width,
            height,
            counts: vec![0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> u32 {
        self.counts[row * self.width + col]
    }
}

/// A point source in image-local pixel coordinates. Pixel `(col, row)` has
/// its centre at `x = col`, `y = row`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flux: Option<f64>,
}

impl Source {
    pub fn at(x: f64, y: f64) -> Self {
        Source { x, y, flux: None }
    }

    /// Pixel containing the source, or `None` outside a `width`×`height` grid.
    pub fn pixel(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        let col = self.x.round();
        let row = self.y.round();
        if col < 0.0 || row < 0.0 || col >= width as f64 || row >= height as f64 {
            return None;
        }
        Some((col as usize, row as usize))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceList {
    pub points: Vec<Source>,
}

impl SourceList {
    pub fn new(points: Vec<Source>) -> Self {
        SourceList { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn coords(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(|s| [s.x, s.y]).collect()
    }

    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        for s in &self.points {
            let inside = s.x.is_finite()
                && s.y.is_finite()
                && s.x >= 0.0
                && s.y >= 0.0
                && s.x < width as f64
                && s.y < height as f64;
            if !inside {
                return Err(Error::OutOfBounds {
                    x: s.x,
                    y: s.y,
                    width,
                    height,
                });
            }
        }
        Ok(())
    }

    /// Binary training mask with a single marked pixel per source.
    pub fn rasterize(&self, width: usize, height: usize) -> Vec<u8> {
        let mut mask = vec![0u8; width * height];
        for s in &self.points {
            if let Some((col, row)) = s.pixel(width, height) {
                mask[row * width + col] = 1;
            }
        }
        mask
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkySample {
    pub image: CountMap,
    pub truth: SourceList,
    pub intensity: Option<IntensityMap>,
}

impl SkySample {
    /// Brightest source peak over the mean background level of this image;
    /// values well above one mark bright-source images, values near one mark
    /// images where sources and background are comparable. Needs the
    /// intensity map.
    pub fn contrast(&self, psf_sigma: f64) -> Option<f64> {
        let intensity = self.intensity.as_ref()?;
        let fluxes: Vec<f64> = self.truth.points.iter().filter_map(|s| s.flux).collect();
        let n = intensity.lambda.len() as f64;
        let background = ((intensity.total() - fluxes.iter().sum::<f64>()) / n).max(1e-12);
        let peak = fluxes.iter().copied().fold(0.0, f64::max)
            / (2.0 * std::f64::consts::PI * psf_sigma * psf_sigma);
        Some(peak / background)
    }
}

/// Draws the number, positions and fluxes of point sources.
///
/// Sources sit on pixel centres. A draw landing on, or 8-adjacent to, an
/// existing source is repeated so every source owns a distinct pixel that no
/// neighbour suppression can merge with another.
pub fn sample_sources<R: Rng + ?Sized>(cfg: &SkyConfig, rng: &mut R) -> Result<SourceList> {
    cfg.validate()?;
    let lo = cfg.n_sources_base as i64 - cfg.n_sources_jitter as i64;
    let hi = (cfg.n_sources_base + cfg.n_sources_jitter) as i64;
    let n = rng.gen_range(lo..=hi).max(0) as usize;
    let mut taken = vec![false; cfg.width * cfg.height];
    let mut points = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while points.len() < n {
        attempts += 1;
        if attempts > 10_000 + 100 * n {
            return Err(Error::config(format!(
                "cannot place {n} separated sources on a {}x{} grid",
                cfg.width, cfg.height
            )));
        }
        let col = rng.gen_range(0..cfg.width);
        let row = rng.gen_range(0..cfg.height);
        let flux = if cfg.flux_max > cfg.flux_min {
            rng.gen_range(cfg.flux_min..cfg.flux_max)
        } else {
            cfg.flux_min
        };
        if taken[row * cfg.width + col] {
            continue;
        }
        for r in row.saturating_sub(1)..=(row + 1).min(cfg.height - 1) {
            for c in col.saturating_sub(1)..=(col + 1).min(cfg.width - 1) {
                taken[r * cfg.width + c] = true;
            }
        }
        points.push(Source {
            x: col as f64,
            y: row as f64,
            flux: Some(flux),
        });
    }
    Ok(SourceList { points })
}

/// Background plus PSF-broadened sources.
pub fn render_with_background(
    cfg: &SkyConfig,
    background: &IntensityMap,
    sources: &SourceList,
) -> Result<IntensityMap> {
    if background.width != cfg.width || background.height != cfg.height {
        return Err(Error::shape(format!(
            "background is {}x{}, sky is {}x{}",
            background.width, background.height, cfg.width, cfg.height
        )));
    }
    sources.check_bounds(cfg.width, cfg.height)?;
    let mut map = background.clone();
    for s in &sources.points {
        map.add_point_source(s.x, s.y, s.flux.unwrap_or(0.0), cfg.psf_sigma);
    }
    Ok(map)
}

/// Procedural diffuse background plus PSF-broadened sources.
pub fn render_intensity<R: Rng + ?Sized>(
    cfg: &SkyConfig,
    sources: &SourceList,
    rng: &mut R,
) -> Result<IntensityMap> {
    cfg.validate()?;
    sources.check_bounds(cfg.width, cfg.height)?;
    let background = procedural_background(cfg, rng);
    render_with_background(cfg, &background, sources)
}

/// Replaces every expected count by an independent Poisson draw.
pub fn poissonize<R: Rng + ?Sized>(intensity: &IntensityMap, rng: &mut R) -> Result<CountMap> {
    if let Some((index, &value)) = intensity
        .lambda
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(Error::InvalidIntensity { index, value });
    }
    Ok(CountMap {
        width: intensity.width,
        height: intensity.height,
        counts: intensity
            .lambda
            .iter()
            .map(|&l| sample_poisson(l, rng))
            .collect(),
    })
}

/// Simulates sample `index` of the run described by `cfg`. A supplied
/// background template replaces the procedural field.
pub fn simulate_sample(
    cfg: &SkyConfig,
    index: u64,
    template: Option<&IntensityMap>,
) -> Result<SkySample> {
    let mut rng = sample_rng(cfg.seed, index);
    let truth = sample_sources(cfg, &mut rng)?;
    let intensity = match template {
        Some(bg) => render_with_background(cfg, bg, &truth)?,
        None => render_intensity(cfg, &truth, &mut rng)?,
    };
    let image = poissonize(&intensity, &mut rng)?;
    Ok(SkySample {
        image,
        truth,
        intensity: Some(intensity),
    })
}

/// In-memory batch of consecutive samples `first..first + n`.
pub fn simulate_many(
    cfg: &SkyConfig,
    first: u64,
    n: usize,
    template: Option<&IntensityMap>,
) -> Result<Vec<SkySample>> {
    use rayon::prelude::*;
    (0..n as u64)
        .into_par_iter()
        .map(|i| simulate_sample(cfg, first + i, template))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(cfg: &SkyConfig, b: f64) -> IntensityMap {
        IntensityMap::constant(cfg.width, cfg.height, b)
    }

    #[test]
    fn defaults_cover_ten_degrees() {
        let cfg = SkyConfig::default();
        assert_eq!((cfg.width, cfg.height), (200, 200));
        let (w, h) = cfg.extent_deg();
        assert!((w - 10.0).abs() < 1e-12 && (h - 10.0).abs() < 1e-12);
    }

    #[test]
    fn no_sources_leaves_constant_background() {
        let cfg = SkyConfig::default();
        let map = render_with_background(&cfg, &flat(&cfg, 2.5), &SourceList::default()).unwrap();
        assert!(map.lambda.iter().all(|&l| l == 2.5));
    }

    #[test]
    fn psf_mass_and_peak() {
        let cfg = SkyConfig::default();
        let flux = 1234.0;
        let src = SourceList::new(vec![Source {
            x: 100.0,
            y: 100.0,
            flux: Some(flux),
        }]);
        let map = render_with_background(&cfg, &flat(&cfg, 0.0), &src).unwrap();
        assert!((map.total() - flux).abs() <= 1e-3 * flux);
        let peak = flux / (2.0 * std::f64::consts::PI * 25.0);
        assert!((map.at(100, 100) - peak).abs() < 1e-12 * peak);
    }

    #[test]
    fn truncation_error_is_negligible() {
        // Mass beyond 6 sigma of a 2-d Gaussian is exp(-18).
        let cfg = SkyConfig {
            psf_sigma: 3.0,
            ..SkyConfig::default()
        };
        let src = SourceList::new(vec![Source {
            x: 90.0,
            y: 110.0,
            flux: Some(1.0),
        }]);
        let map = render_with_background(&cfg, &flat(&cfg, 0.0), &src).unwrap();
        assert!((map.total() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn out_of_bounds_source_rejected() {
        let cfg = SkyConfig::default();
        let src = SourceList::new(vec![Source::at(200.0, 3.0)]);
        let mut rng = sample_rng(0, 0);
        assert!(matches!(
            render_intensity(&cfg, &src, &mut rng),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn poissonize_rejects_bad_means() {
        let mut rng = sample_rng(0, 0);
        let mut map = IntensityMap::constant(2, 2, 1.0);
        map.lambda[3] = -1.0;
        assert!(poissonize(&map, &mut rng).is_err());
        map.lambda[3] = f64::NAN;
        assert!(poissonize(&map, &mut rng).is_err());
        let zero = IntensityMap::constant(4, 4, 0.0);
        assert!(poissonize(&zero, &mut rng)
            .unwrap()
            .counts
            .iter()
            .all(|&c| c == 0));
    }

    #[test]
    fn fixed_count_without_jitter() {
        let cfg = SkyConfig {
            n_sources_jitter: 0,
            ..SkyConfig::default()
        };
        let mut rng = sample_rng(9, 0);
        assert_eq!(sample_sources(&cfg, &mut rng).unwrap().len(), 7);
        let empty = SkyConfig {
            n_sources_base: 0,
            n_sources_jitter: 0,
            ..SkyConfig::default()
        };
        assert!(sample_sources(&empty, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn source_counts_uniform_over_jitter_range() {
        let cfg = SkyConfig {
            width: 40,
            height: 40,
            ..SkyConfig::default()
        };
        let mut rng = sample_rng(21, 0);
        let mut hist = [0usize; 12];
        let n = 10_000;
        for _ in 0..n {
            hist[sample_sources(&cfg, &mut rng).unwrap().len()] += 1;
        }
        for (k, &count) in hist.iter().enumerate() {
            if (5..=9).contains(&k) {
                let f = count as f64 / n as f64;
                assert!((f - 0.2).abs() <= 0.02, "count {k}: {f}");
            } else {
                assert_eq!(count, 0);
            }
        }
    }

    #[test]
    fn sources_are_separated_and_in_range() {
        let cfg = SkyConfig {
            flux_min: 10.0,
            flux_max: 20.0,
            n_sources_base: 30,
            ..SkyConfig::desk()
        };
        let mut rng = sample_rng(4, 4);
        for _ in 0..50 {
            let list = sample_sources(&cfg, &mut rng).unwrap();
            list.check_bounds(cfg.width, cfg.height).unwrap();
            for (i, a) in list.points.iter().enumerate() {
                let f = a.flux.unwrap();
                assert!((10.0..20.0).contains(&f));
                for b in &list.points[i + 1..] {
                    assert!((a.x - b.x).abs().max((a.y - b.y).abs()) >= 2.0);
                }
            }
        }
    }

    #[test]
    fn clamped_count_never_negative() {
        let cfg = SkyConfig {
            n_sources_base: 1,
            n_sources_jitter: 3,
            ..SkyConfig::desk()
        };
        let mut rng = sample_rng(8, 0);
        let mut saw_zero = false;
        for _ in 0..200 {
            let n = sample_sources(&cfg, &mut rng).unwrap().len();
            assert!(n <= 4);
            saw_zero |= n == 0;
        }
        assert!(saw_zero);
    }

    #[test]
    fn simulation_is_a_function_of_seed_and_index() {
        let cfg = SkyConfig::desk();
        let a = simulate_sample(&cfg, 3, None).unwrap();
        let b = simulate_sample(&cfg, 3, None).unwrap();
        assert_eq!(a, b);
        let c = simulate_sample(&cfg, 4, None).unwrap();
        assert_ne!(a.image, c.image);
        let many = simulate_many(&cfg, 2, 3, None).unwrap();
        assert_eq!(many[1], a);
    }

    #[test]
    fn default_config_produces_both_regimes() {
        let cfg = SkyConfig {
            seed: 17,
            ..SkyConfig::default()
        };
        let contrasts: Vec<f64> = simulate_many(&cfg, 0, 40, None)
            .unwrap()
            .iter()
            .filter(|s| !s.truth.is_empty())
            .map(|s| s.contrast(cfg.psf_sigma).unwrap())
            .collect();
        assert!(contrasts.iter().any(|&c| c > 3.0), "{contrasts:?}");
        assert!(contrasts.iter().any(|&c| c < 1.5), "{contrasts:?}");
    }
}
