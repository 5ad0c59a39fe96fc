use serde::{Deserialize, Serialize};

use super::chamfer::PointSet;
use super::kdtree::dist2;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    /// Pairs taken closest-first, each endpoint used at most once.
    #[default]
    Greedy,
    /// Largest possible one-to-one matching among pairs within the radius.
    MaxCardinality,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig<T> {
    pub radius: T,
    pub strategy: MatchStrategy,
}

impl<T: Scalar> Default for MatchConfig<T> {
    /// 1.6 px, the 0.1° localisation accuracy at 0.05°/px.
    fn default() -> Self {
        MatchConfig {
            radius: T::of(1.6),
            strategy: MatchStrategy::Greedy,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MatchCounts {
    /// `2tp / (2tp + fp + fn)`; 1 when there was nothing to find and nothing
    /// was reported.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    /// `tp / (tp + fn)`; 1 when the truth set is empty.
    pub fn tpr(&self) -> f64 {
        let denom = self.tp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        }
    }
}

impl std::ops::Add for MatchCounts {
    type Output = MatchCounts;

    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// One-to-one matching of predictions to truths within `cfg.radius`.
pub fn match_points<T: Scalar>(
    truth: &PointSet<T>,
    pred: &PointSet<T>,
    cfg: &MatchConfig<T>,
) -> MatchCounts {
    let r2 = cfg.radius * cfg.radius;
    // Candidate edges in (distance, truth index, pred index) order.
    let mut edges: Vec<(T, usize, usize)> = Vec::new();
    for (ti, t) in truth.points.iter().enumerate() {
        for (pi, p) in pred.points.iter().enumerate() {
            let d2 = dist2(t, p);
            if d2 <= r2 {
                edges.push((d2, ti, pi));
            }
        }
    }
    edges.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let tp = match cfg.strategy {
        MatchStrategy::Greedy => greedy(&edges, truth.len(), pred.len()),
        MatchStrategy::MaxCardinality => max_cardinality(&edges, truth.len(), pred.len()),
    };
    MatchCounts {
        tp,
        fp: pred.len() - tp,
        fn_: truth.len() - tp,
    }
}

fn greedy<T>(edges: &[(T, usize, usize)], n_truth: usize, n_pred: usize) -> usize {
    let mut truth_used = vec![false; n_truth];
    let mut pred_used = vec![false; n_pred];
    let mut tp = 0;
    for &(_, ti, pi) in edges {
        if !truth_used[ti] && !pred_used[pi] {
            truth_used[ti] = true;
            pred_used[pi] = true;
            tp += 1;
        }
    }
    tp
}

// Kuhn's augmenting-path algorithm; neighbour lists keep closest-first order.
fn max_cardinality<T>(edges: &[(T, usize, usize)], n_truth: usize, n_pred: usize) -> usize {
    let mut adj = vec![Vec::new(); n_truth];
    for &(_, ti, pi) in edges {
        adj[ti].push(pi);
    }
    let mut owner: Vec<Option<usize>> = vec![None; n_pred];

    fn augment(
        t: usize,
        adj: &[Vec<usize>],
        owner: &mut [Option<usize>],
        seen: &mut [bool],
    ) -> bool {
        for &p in &adj[t] {
            if seen[p] {
                continue;
            }
            seen[p] = true;
            if owner[p].is_none() || augment(owner[p].unwrap(), adj, owner, seen) {
                owner[p] = Some(t);
                return true;
            }
        }
        false
    }

    let mut tp = 0;
    for t in 0..n_truth {
        let mut seen = vec![false; n_pred];
        if augment(t, &adj, &mut owner, &mut seen) {
            tp += 1;
        }
    }
    tp
}
