use rayon::prelude::*;

use super::kdtree::KdTree;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Planar point set in pixel coordinates. May be empty; empty sets are scored
/// through the penalty rule.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointSet<T> {
    pub points: Vec<[T; 2]>,
}

impl<T: Scalar> PointSet<T> {
    pub fn new(points: Vec<[T; 2]>) -> Self {
        PointSet { points }
    }

    pub fn from_f64(points: &[[f64; 2]]) -> Self {
        PointSet {
            points: points.iter().map(|p| [T::of(p[0]), T::of(p[1])]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn tree(&self) -> KdTree<T> {
        KdTree::build(&self.points)
    }
}

/// Fixed per-point cost used when exactly one of the two sets is empty:
/// `factor * side * |C|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig<T> {
    /// Side length of the square image in pixels.
    pub side: T,
    pub factor: T,
}

impl<T: Scalar> PenaltyConfig<T> {
    pub fn new(side: usize) -> Self {
        PenaltyConfig {
            side: T::of(side as f64),
            factor: T::of(0.125),
        }
    }

    pub fn penalty(&self, n_points: usize) -> T {
        self.factor * self.side * T::of(n_points as f64)
    }
}

/// Distance from `query` to the closest point held by `target`.
pub fn nn_distance<T: Scalar>(query: &[T; 2], target: &KdTree<T>) -> Result<T> {
    target.nearest(query).map(|(d, _)| d).ok_or(Error::EmptySet)
}

/// Sum over `from` of the distance to the nearest point of `to`.
pub fn directed_sum<T: Scalar>(from: &[[T; 2]], to: &KdTree<T>) -> Result<T> {
    if to.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(from
        .iter()
        .map(|p| to.nearest(p).map(|(d, _)| d).unwrap_or_else(T::zero))
        .fold(T::zero(), |acc, d| acc + d))
}

/// Symmetric Chamfer distance between two nonempty sets.
pub fn chamfer<T: Scalar>(a: &PointSet<T>, b: &PointSet<T>) -> Result<T> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let ta = a.tree();
    let tb = b.tree();
    Ok(directed_sum(&a.points, &tb)? + directed_sum(&b.points, &ta)?)
}

/// Score of one image. Both sets nonempty gives the Chamfer distance, exactly
/// one empty charges the penalty for the other, both empty scores zero.
pub fn score_image<T: Scalar>(
    truth: &PointSet<T>,
    pred: &PointSet<T>,
    pen: &PenaltyConfig<T>,
) -> T {
    match (truth.is_empty(), pred.is_empty()) {
        (false, false) => chamfer(truth, pred).expect("both sets are nonempty"),
        (true, false) => pen.penalty(pred.len()),
        (false, true) => pen.penalty(truth.len()),
        (true, true) => T::zero(),
    }
}

/// Per-image scores, computed in parallel, returned in input order.
pub fn score_images<T: Scalar>(
    pairs: &[(PointSet<T>, PointSet<T>)],
    pen: &PenaltyConfig<T>,
) -> Vec<T> {
    pairs
        .par_iter()
        .map(|(truth, pred)| score_image(truth, pred, pen))
        .collect()
}

/// Mean and population variance of a score list, summed in index order.
pub fn mean_var<T: Scalar>(scores: &[T]) -> Result<(T, T)> {
    if scores.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = T::of(scores.len() as f64);
    let mean = scores.iter().fold(T::zero(), |a, &s| a + s) / n;
    let var = scores
        .iter()
        .fold(T::zero(), |a, &s| a + (s - mean) * (s - mean))
        / n;
    Ok((mean, var))
}

/// Dataset score: mean and population variance of the per-image scores.
pub fn score_dataset<T: Scalar>(
    pairs: &[(PointSet<T>, PointSet<T>)],
    pen: &PenaltyConfig<T>,
) -> Result<(T, T)> {
    mean_var(&score_images(pairs, pen))
}
