//! Point-set scoring: Chamfer distance with an empty-set penalty, and
//! radius-based F1 / true-positive rate.

mod chamfer;
mod kdtree;
mod matching;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Scalar;

pub use chamfer::{
    chamfer, directed_sum, mean_var, nn_distance, score_dataset, score_image, score_images,
    PenaltyConfig, PointSet,
};
pub use kdtree::{KdTree, LEAF_SIZE};
pub use matching::{match_points, MatchConfig, MatchCounts, MatchStrategy};

/// Scores of a prediction set against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub chamfer_mean: f64,
    pub chamfer_var: f64,
    pub f1: f64,
    pub tpr: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub per_image_scores: Vec<f64>,
    /// Mean per-image inference time; absent for externally produced
    /// predictions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_test_ms: Option<f64>,
}

impl EvalReport {
    /// Copy with timing removed, for comparisons that must be exact.
    pub fn without_timing(&self) -> EvalReport {
        EvalReport {
            t_test_ms: None,
            ..self.clone()
        }
    }
}

/// Scores `(truth, prediction)` pairs. Match counts are pooled over all images
/// before F1 and TPR are formed.
pub fn evaluate_point_sets<T: Scalar>(
    pairs: &[(PointSet<T>, PointSet<T>)],
    pen: &PenaltyConfig<T>,
    matching: &MatchConfig<T>,
) -> Result<EvalReport> {
    let scores = score_images(pairs, pen);
    let (mean, var) = mean_var(&scores)?;
    let counts = pairs
        .iter()
        .map(|(t, p)| match_points(t, p, matching))
        .fold(MatchCounts::default(), |a, b| a + b);
    Ok(EvalReport {
        chamfer_mean: mean.f64(),
        chamfer_var: var.f64(),
        f1: counts.f1(),
        tpr: counts.tpr(),
        tp: counts.tp,
        fp: counts.fp,
        fn_: counts.fn_,
        per_image_scores: scores.iter().map(|s| s.f64()).collect(),
        t_test_ms: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_pools_counts() {
        let pen = PenaltyConfig::<f64>::new(64);
        let truth = PointSet::new(vec![[1.0, 1.0], [20.0, 20.0]]);
        let pred = PointSet::new(vec![[1.0, 2.0]]);
        let pairs = vec![(truth.clone(), pred), (truth, PointSet::default())];
        let r = evaluate_point_sets(&pairs, &pen, &MatchConfig::default()).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (1, 0, 3));
        assert!((r.f1 - 2.0 / 5.0).abs() < 1e-15);
        assert!((r.tpr - 0.25).abs() < 1e-15);
        assert_eq!(r.per_image_scores[1], 16.0);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["fn"], 3);
    }
}
