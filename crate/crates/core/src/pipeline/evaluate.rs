use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inference::{extract_sources, ProbMapSource, ThresholdRule};
use super::sampling::count_grid;
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_point_sets, EvalReport, MatchConfig, MatchStrategy, PenaltyConfig, PointSet,
};
use crate::raster::{Grid, ProbMap};
use crate::scalar::Scalar;
use crate::skysim::{SkySample, SourceList};

pub const DEFAULT_K_GRID: [f64; 9] = [1.0, 2.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub radius: f64,
    pub strategy: MatchStrategy,
    pub penalty_factor: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            radius: 1.6,
            strategy: MatchStrategy::Greedy,
            penalty_factor: 0.125,
        }
    }
}

/// Emits the rasterized truth mask of every image it was built from.
pub struct TruthOracle<T> {
    entries: Vec<(Grid<T>, ProbMap<T>)>,
}

impl<T: Scalar> TruthOracle<T> {
    pub fn new(samples: &[SkySample]) -> Self {
        TruthOracle {
            entries: samples
                .iter()
                .map(|s| {
                    let mask = s.truth.rasterize(s.image.width, s.image.height);
                    let map = Grid {
                        width: s.image.width,
                        height: s.image.height,
                        data: mask.iter().map(|&m| T::of(f64::from(m))).collect(),
                    };
                    (count_grid(s), map)
                })
                .collect(),
        }
    }
}

impl<T: Scalar> ProbMapSource<T> for TruthOracle<T> {
    fn prob_map(&self, image: &Grid<T>) -> Result<ProbMap<T>> {
        self.entries
            .iter()
            .find(|(img, _)| img == image)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| Error::config("oracle does not know this image"))
    }
}

fn common_height(samples: &[SkySample]) -> Result<usize> {
    let first = samples.first().ok_or(Error::EmptySet)?;
    let (w, h) = (first.image.width, first.image.height);
    if samples
        .iter()
        .any(|s| (s.image.width, s.image.height) != (w, h))
    {
        return Err(Error::shape("evaluation images differ in size"));
    }
    Ok(h)
}

fn truth_set<T: Scalar>(s: &SkySample) -> PointSet<T> {
    PointSet::new(
        s.truth
            .coords()
            .iter()
            .map(|p| [T::of(p[0]), T::of(p[1])])
            .collect(),
    )
}

fn pred_set<T: Scalar>(list: &SourceList) -> PointSet<T> {
    PointSet::new(
        list.coords()
            .iter()
            .map(|p| [T::of(p[0]), T::of(p[1])])
            .collect(),
    )
}

/// Scores already-extracted predictions against the samples' truth.
pub fn score_predictions<T: Scalar>(
    samples: &[SkySample],
    predictions: &[SourceList],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if samples.len() != predictions.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} images",
            predictions.len(),
            samples.len()
        )));
    }
    let h = common_height(samples)?;
    let pen = PenaltyConfig {
        side: T::of(h as f64),
        factor: T::of(cfg.penalty_factor),
    };
    let matching = MatchConfig {
        radius: T::of(cfg.radius),
        strategy: cfg.strategy,
    };
    let pairs: Vec<_> = samples
        .iter()
        .zip(predictions)
        .map(|(s, p)| (truth_set::<T>(s), pred_set::<T>(p)))
        .collect();
    evaluate_point_sets(&pairs, &pen, &matching)
}

/// Probability maps for every sample with per-image inference time in ms.
pub fn prob_maps<T: Scalar, S: ProbMapSource<T> + ?Sized>(
    source: &S,
    samples: &[SkySample],
) -> Result<Vec<(ProbMap<T>, f64)>> {
    samples
        .par_iter()
        .map(|s| {
            let image = count_grid::<T>(s);
            let start = Instant::now();
            let map = source.prob_map(&image)?;
            Ok((map, start.elapsed().as_secs_f64() * 1e3))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    #[serde(skip)]
    pub predictions: Vec<SourceList>,
}

/// Full inference path: probability map, threshold, suppression, scoring.
pub fn evaluate<T: Scalar, S: ProbMapSource<T> + ?Sized>(
    source: &S,
    samples: &[SkySample],
    rule: &ThresholdRule,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    let maps = prob_maps(source, samples)?;
    let predictions: Vec<SourceList> = maps
        .par_iter()
        .map(|(m, _)| extract_sources(m, rule))
        .collect();
    let mut report = score_predictions::<T>(samples, &predictions, cfg)?;
    report.t_test_ms = Some(maps.iter().map(|(_, t)| t).sum::<f64>() / maps.len() as f64);
    Ok(Evaluation {
        report,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub k: f64,
    /// `(k, mean score)` for every grid point, in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the `k` with the lowest mean validation score; ties go to the
/// smallest `k`.
pub fn calibrate_k<T: Scalar, S: ProbMapSource<T> + ?Sized>(
    source: &S,
    validation: &[SkySample],
    grid: &[f64],
    cfg: &EvalConfig,
) -> Result<Calibration> {
    if validation.is_empty() {
        return Err(Error::config("calibration needs validation images"));
    }
    if grid.is_empty() || grid.iter().any(|k| k.is_nan() || *k < 0.0) {
        return Err(Error::config(format!("invalid k grid {grid:?}")));
    }
    let maps = prob_maps(source, validation)?;
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &k in grid {
        let rule = ThresholdRule { k };
        let preds: Vec<SourceList> = maps
            .par_iter()
            .map(|(m, _)| extract_sources(m, &rule))
            .collect();
        let mean = score_predictions::<T>(validation, &preds, cfg)?.chamfer_mean;
        scores.push((k, mean));
        let better = match best {
            None => true,
            Some((bk, bm)) => mean < bm || (mean == bm && k < bk),
        };
        if better {
            best = Some((k, mean));
        }
    }
    Ok(Calibration {
        k: best.expect("grid is nonempty").0,
        scores,
    })
}
