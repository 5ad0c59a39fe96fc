//! 2-D discrete Fourier transform in centred layout and square band masks.
//!
//! Spectra are stored with the zero frequency at index `(height/2, width/2)`;
//! centred index `i` on an axis of extent `n` carries frequency `i - n/2`.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Grid;
use crate::scalar::Scalar;

/// Crop side the auxiliary band channels are defined for.
pub const FOCNN_SIDE: usize = 20;
/// Square sides of the three band-filtered channels.
pub const FOCNN_BANDS: [usize; 3] = [0, 14, 18];

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T> {
    pub width: usize,
    pub height: usize,
    pub coeffs: Vec<Complex<T>>,
}

impl<T: Scalar> Spectrum<T> {
    #[inline]
    pub fn at(&self, col: usize, row: usize) -> Complex<T> {
        self.coeffs[row * self.width + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMode {
    /// Low-pass: keep the centred square, zero everything else.
    #[default]
    KeepCenter,
    /// High-pass: zero the centred square.
    RemoveCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandSpec {
    pub side: usize,
    pub mode: BandMode,
}

impl BandSpec {
    pub fn keep(side: usize) -> Self {
        BandSpec {
            side,
            mode: BandMode::KeepCenter,
        }
    }
}

/// Which centred indices along one axis fall inside a square of `side`.
///
/// The square covers frequencies `|f| <= side / 2`. For even `side` below the
/// extent this is the index range `[c - side/2, c + side/2)` together with its
/// mirror `c + side/2`, which keeps the mask conjugate-symmetric so filtered
/// real images stay real. Side 0 keeps only the zero frequency.
pub fn band_axis(extent: usize, side: usize) -> Vec<bool> {
    let c = (extent / 2) as i64;
    let half = (side / 2) as i64;
    (0..extent as i64)
        .map(|i| {
            let f = i - c;
            if side >= extent {
                true
            } else {
                f.abs() <= half
            }
        })
        .collect()
}

/// Centred-layout mask; `true` marks a retained coefficient.
pub fn band_mask(width: usize, height: usize, band: BandSpec) -> Vec<bool> {
    let cols = band_axis(width, band.side);
    let rows = band_axis(height, band.side);
    let mut mask = Vec::with_capacity(width * height);
    for &r in &rows {
        for &c in &cols {
            let inside = r && c;
            mask.push(match band.mode {
                BandMode::KeepCenter => inside,
                BandMode::RemoveCenter => !inside,
            });
        }
    }
    mask
}

/// Cached forward and inverse plans for one raster size.
pub struct Fourier2d<T: Scalar> {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Scalar> Fourier2d<T> {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fourier2d {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            col_fwd: planner.plan_fft_forward(height),
            row_inv: planner.plan_fft_inverse(width),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn check(&self, width: usize, height: usize) -> Result<()> {
        if (width, height) != (self.width, self.height) {
            return Err(Error::shape(format!(
                "planned for {}x{}, got {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    fn transform(&self, buf: &mut [Complex<T>], row: &Arc<dyn Fft<T>>, col: &Arc<dyn Fft<T>>) {
        let (w, h) = (self.width, self.height);
        row.process(buf);
        let mut column = vec![Complex::new(T::zero(), T::zero()); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = buf[y * w + x];
            }
            col.process(&mut column);
            for y in 0..h {
                buf[y * w + x] = column[y];
            }
        }
    }

    pub fn forward(&self, image: &Grid<T>) -> Result<Spectrum<T>> {
        self.check(image.width, image.height)?;
        let mut buf: Vec<Complex<T>> = image
            .data
            .iter()
            .map(|&v| Complex::new(v, T::zero()))
            .collect();
        self.transform(&mut buf, &self.row_fwd, &self.col_fwd);
        Ok(Spectrum {
            width: self.width,
            height: self.height,
            coeffs: shift(&buf, self.width, self.height, false),
        })
    }

    /// Normalised inverse transform of a centred spectrum.
    pub fn inverse(&self, spectrum: &Spectrum<T>) -> Result<Vec<Complex<T>>> {
        self.check(spectrum.width, spectrum.height)?;
        let mut buf = shift(&spectrum.coeffs, self.width, self.height, true);
        self.transform(&mut buf, &self.row_inv, &self.col_inv);
        let scale = T::one() / T::of((self.width * self.height) as f64);
        buf.iter_mut().for_each(|c| *c = *c * scale);
        Ok(buf)
    }

    /// Inverse transform of a spectrum known to be conjugate-symmetric.
    ///
    /// Panics if the imaginary residue is not at rounding level.
    pub fn inverse_real(&self, spectrum: &Spectrum<T>) -> Result<Grid<T>> {
        let values = self.inverse(spectrum)?;
        let scale = values.iter().fold(T::one(), |m, c| m.max(c.re.abs()));
        let tol = T::epsilon() * T::of(4096.0) * scale;
        let residue = values.iter().fold(T::zero(), |m, c| m.max(c.im.abs()));
        assert!(
            residue <= tol,
            "imaginary residue {residue:?} exceeds {tol:?}; spectrum is not conjugate-symmetric"
        );
        Grid::new(
            self.width,
            self.height,
            values.iter().map(|c| c.re).collect(),
        )
    }

    pub fn band_filter(&self, image: &Grid<T>, band: BandSpec) -> Result<Grid<T>> {
        if band.side > self.width.min(self.height) {
            return Err(Error::config(format!(
                "band side {} exceeds {}x{}",
                band.side, self.width, self.height
            )));
        }
        let mut spectrum = self.forward(image)?;
        let mask = band_mask(self.width, self.height, band);
        for (c, keep) in spectrum.coeffs.iter_mut().zip(mask) {
            if !keep {
                *c = Complex::new(T::zero(), T::zero());
            }
        }
        self.inverse_real(&spectrum)
    }
}

// Moves the zero frequency between index 0 and the centre of each axis.
fn shift<T: Copy>(src: &[T], w: usize, h: usize, inverse: bool) -> Vec<T> {
    let (sx, sy) = if inverse {
        (w - w / 2, h - h / 2)
    } else {
        (w / 2, h / 2)
    };
    let mut out = src.to_vec();
    for y in 0..h {
        for x in 0..w {
            out[((y + sy) % h) * w + (x + sx) % w] = src[y * w + x];
        }
    }
    out
}

pub fn dft2<T: Scalar>(image: &Grid<T>) -> Spectrum<T> {
    Fourier2d::new(image.width, image.height)
        .forward(image)
        .expect("plan matches image size")
}

pub fn idft2<T: Scalar>(spectrum: &Spectrum<T>) -> Vec<Complex<T>> {
    Fourier2d::new(spectrum.width, spectrum.height)
        .inverse(spectrum)
        .expect("plan matches spectrum size")
}

pub fn band_filter<T: Scalar>(image: &Grid<T>, band: BandSpec) -> Result<Grid<T>> {
    Fourier2d::new(image.width, image.height).band_filter(image, band)
}

/// Builds the four input planes of the Fourier-augmented network: the crop
/// itself followed by its band-filtered copies.
pub struct BandChannels<T: Scalar> {
    plan: Fourier2d<T>,
    pub bands: [BandSpec; 3],
}

impl<T: Scalar> BandChannels<T> {
    pub fn new(mode: BandMode) -> Self {
        BandChannels {
            plan: Fourier2d::new(FOCNN_SIDE, FOCNN_SIDE),
            bands: FOCNN_BANDS.map(|side| BandSpec { side, mode }),
        }
    }

    pub fn channels(&self, crop: &Grid<T>) -> Result<[Grid<T>; 4]> {
        if crop.width != FOCNN_SIDE || crop.height != FOCNN_SIDE {
            return Err(Error::shape(format!(
                "band channels need a {FOCNN_SIDE}x{FOCNN_SIDE} crop, got {}x{}",
                crop.width, crop.height
            )));
        }
        let [a, b, c] = self.bands;
        Ok([
            crop.clone(),
            self.plan.band_filter(crop, a)?,
            self.plan.band_filter(crop, b)?,
            self.plan.band_filter(crop, c)?,
        ])
    }
}

pub fn focnn_channels<T: Scalar>(crop: &Grid<T>) -> Result<[Grid<T>; 4]> {
    BandChannels::new(BandMode::KeepCenter).channels(crop)
}
