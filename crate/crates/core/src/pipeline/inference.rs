use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelHandle;
use crate::raster::{Grid, ProbMap};
use crate::scalar::Scalar;
use crate::skysim::{Source, SourceList};

/// Crops per forward pass during sliding-window inference.
const INFERENCE_BATCH: usize = 32;

/// Anything that maps square crops to same-size probability maps.
pub trait CropPredictor<T>: Sync {
    fn crop_side(&self) -> usize;
    fn predict_crops(&self, crops: &[Grid<T>]) -> Result<Vec<ProbMap<T>>>;
}

impl<T: Scalar> CropPredictor<T> for ModelHandle<T> {
    fn crop_side(&self) -> usize {
        ModelHandle::crop_side(self)
    }

    fn predict_crops(&self, crops: &[Grid<T>]) -> Result<Vec<ProbMap<T>>> {
        self.predict(crops)
    }
}

/// Anything that turns a full count image into a probability map.
pub trait ProbMapSource<T>: Sync {
    fn prob_map(&self, image: &Grid<T>) -> Result<ProbMap<T>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SlidingConfig {
    /// Window step; half the crop side when unset.
    pub stride: Option<usize>,
}

impl SlidingConfig {
    pub fn with_stride(stride: usize) -> Self {
        SlidingConfig {
            stride: Some(stride),
        }
    }

    pub fn resolve(&self, side: usize) -> Result<usize> {
        let stride = self.stride.unwrap_or((side / 2).max(1));
        if stride == 0 || stride > side {
            return Err(Error::config(format!(
                "stride {stride} must lie in 1..={side}"
            )));
        }
        Ok(stride)
    }
}

/// Window offsets along one axis; the last window sits flush with the edge.
pub fn window_offsets(extent: usize, side: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 0;
    while p + side < extent {
        out.push(p);
        p += stride;
    }
    out.push(extent - side);
    out
}

/// Tiles the image with overlapping windows and averages the predictions
/// covering each pixel.
pub fn predict_full<T: Scalar, P: CropPredictor<T> + ?Sized>(
    model: &P,
    image: &Grid<T>,
    slide: &SlidingConfig,
) -> Result<ProbMap<T>> {
    let s = model.crop_side();
    if image.width < s || image.height < s {
        return Err(Error::shape(format!(
            "{}x{} image is smaller than the {s}x{s} crop",
            image.width, image.height
        )));
    }
    let stride = slide.resolve(s)?;
    let xs = window_offsets(image.width, s, stride);
    let ys = window_offsets(image.height, s, stride);
    let windows: Vec<(usize, usize)> = ys
        .iter()
        .flat_map(|&top| xs.iter().map(move |&left| (left, top)))
        .collect();
    // Running mean per pixel: exact for windows that agree, so a constant
    // model gives the same map at every stride.
    let mut mean = vec![T::zero(); image.width * image.height];
    let mut count = vec![0u32; image.width * image.height];
    for chunk in windows.chunks(INFERENCE_BATCH) {
        let crops: Vec<Grid<T>> = chunk
            .iter()
            .map(|&(left, top)| image.crop(left, top, s))
            .collect();
        let preds = model.predict_crops(&crops)?;
        for (&(left, top), p) in chunk.iter().zip(&preds) {
            for r in 0..s {
                for c in 0..s {
                    let idx = (top + r) * image.width + left + c;
                    count[idx] += 1;
                    mean[idx] = mean[idx] + (p.at(c, r) - mean[idx]) / T::of(f64::from(count[idx]));
                }
            }
        }
    }
    Grid::new(image.width, image.height, mean)
}

/// Sliding-window inference as a [`ProbMapSource`].
pub struct Sliding<'a, P: ?Sized> {
    pub model: &'a P,
    pub config: SlidingConfig,
}

impl<T: Scalar, P: CropPredictor<T> + ?Sized> ProbMapSource<T> for Sliding<'_, P> {
    fn prob_map(&self, image: &Grid<T>) -> Result<ProbMap<T>> {
        predict_full(self.model, image, &self.config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub k: f64,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule { k: 25.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection<T> {
    pub col: usize,
    pub row: usize,
    pub score: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detections<T> {
    pub width: usize,
    pub height: usize,
    /// In row-major order.
    pub pixels: Vec<Detection<T>>,
}

/// Population mean and standard deviation of a map.
pub fn map_stats<T: Scalar>(prob: &ProbMap<T>) -> (f64, f64) {
    let n = prob.data.len() as f64;
    let mean = prob.data.iter().map(|v| v.f64()).sum::<f64>() / n;
    let var = prob
        .data
        .iter()
        .map(|v| (v.f64() - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Marks pixels at or above `μ + kσ` of this map. A flat map yields nothing.
pub fn threshold_detect<T: Scalar>(prob: &ProbMap<T>, rule: &ThresholdRule) -> Detections<T> {
    let mut out = Detections {
        width: prob.width,
        height: prob.height,
        pixels: Vec::new(),
    };
    let first = match prob.data.first() {
        Some(&v) => v,
        None => return out,
    };
    if prob.data.iter().all(|&v| v == first) {
        return out;
    }
    let (mean, sd) = map_stats(prob);
    if sd == 0.0 {
        return out;
    }
    let thr = mean + rule.k * sd;
    for (i, &v) in prob.data.iter().enumerate() {
        if v.f64() >= thr {
            out.pixels.push(Detection {
                col: i % prob.width,
                row: i / prob.width,
                score: v,
            });
        }
    }
    out
}

/// Keeps the highest-scoring pixel of every 8-connected group; ties go to the
/// lowest row-major index. Points sit at pixel centres.
pub fn suppress_neighbors<T: Scalar>(det: &Detections<T>) -> SourceList {
    let (w, h) = (det.width, det.height);
    let mut slot = vec![usize::MAX; w * h];
    for (k, d) in det.pixels.iter().enumerate() {
        slot[d.row * w + d.col] = k;
    }
    let mut seen = vec![false; det.pixels.len()];
    let mut keep: Vec<usize> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..det.pixels.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut best = start;
        while let Some(k) = stack.pop() {
            let d = det.pixels[k];
            let (bd, idx, bidx) = (
                det.pixels[best],
                d.row * w + d.col,
                det.pixels[best].row * w + det.pixels[best].col,
            );
            if d.score > bd.score || (d.score == bd.score && idx < bidx) {
                best = k;
            }
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (r, c) = (d.row as isize + dy, d.col as isize + dx);
                    if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                        continue;
                    }
                    let n = slot[r as usize * w + c as usize];
                    if n != usize::MAX && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        keep.push(best);
    }
    keep.sort_by_key(|&k| det.pixels[k].row * w + det.pixels[k].col);
    SourceList::new(
        keep.into_iter()
            .map(|k| Source::at(det.pixels[k].col as f64, det.pixels[k].row as f64))
            .collect(),
    )
}

/// Threshold then suppress.
pub fn extract_sources<T: Scalar>(prob: &ProbMap<T>, rule: &ThresholdRule) -> SourceList {
    suppress_neighbors(&threshold_detect(prob, rule))
}
