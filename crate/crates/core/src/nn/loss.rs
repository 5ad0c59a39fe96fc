//! Per-pixel losses. Each returns the value and its gradient with respect to
//! the prediction so the result can seed [`Tape::backward`](super::Tape::backward).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const PROB_EPS: f64 = 1e-7;
pub const CE_COEFFICIENT: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    WeightedBce,
    Mse,
    Combined,
}

/// How much a missed source pixel costs relative to a background pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceWeight {
    /// Background pixels over source pixels in the batch, floored at 1.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default)]
    pub source_weight: SourceWeight,
    #[serde(default = "default_ce")]
    pub ce_coefficient: f64,
}

fn default_ce() -> f64 {
    CE_COEFFICIENT
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            kind: LossKind::WeightedBce,
            source_weight: SourceWeight::Auto,
            ce_coefficient: CE_COEFFICIENT,
        }
    }
}

impl LossSpec {
    pub fn of(kind: LossKind) -> Self {
        LossSpec {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let SourceWeight::Fixed(w) = self.source_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::config(format!(
                    "source weight must be positive, got {w}"
                )));
            }
        }
        if !(self.ce_coefficient > 0.0 && self.ce_coefficient.is_finite()) {
            return Err(Error::config("cross-entropy coefficient must be positive"));
        }
        Ok(())
    }

    pub fn eval<T: Scalar>(&self, pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
        match self.kind {
            LossKind::WeightedBce => {
                let w = match self.source_weight {
                    SourceWeight::Auto => auto_source_weight(target),
                    SourceWeight::Fixed(w) => w,
                };
                weighted_bce(pred, target, T::of(w))
            }
            LossKind::Mse => mse(pred, target),
            LossKind::Combined => combined(pred, target, T::of(self.ce_coefficient)),
        }
    }
}

fn check<T: Scalar>(pred: &[T], target: &[T]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

/// Clamped probability and whether the clamp was active.
fn clamp<T: Scalar>(p: T) -> (T, bool) {
    let eps = T::of(PROB_EPS);
    if p < eps {
        (eps, true)
    } else if p > T::one() - eps {
        (T::one() - eps, true)
    } else {
        (p, false)
    }
}

pub fn auto_source_weight<T: Scalar>(target: &[T]) -> f64 {
    let sources = target.iter().filter(|&&y| y > T::of(0.5)).count();
    if sources == 0 {
        return 1.0;
    }
    ((target.len() - sources) as f64 / sources as f64).max(1.0)
}

/// `−(1/M) Σ [w·y·ln p + (1−y)·ln(1−p)]` over all `M` pixels.
pub fn weighted_bce<T: Scalar>(pred: &[T], target: &[T], w: T) -> Result<(T, Vec<T>)> {
    check(pred, target)?;
    let m = T::of(pred.len() as f64);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(target) {
        let (pc, clamped) = clamp(p);
        let q = T::one() - pc;
        total = total + w * y * pc.ln() + (T::one() - y) * q.ln();
        grad.push(if clamped {
            T::zero()
        } else {
            -(w * y / pc - (T::one() - y) / q) / m
        });
    }
    Ok((-total / m, grad))
}

/// `(1/M) Σ (y − p)²`
pub fn mse<T: Scalar>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    check(pred, target)?;
    let m = T::of(pred.len() as f64);
    let two = T::of(2.0);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(target) {
        total = total + (y - p) * (y - p);
        grad.push(two * (p - y) / m);
    }
    Ok((total / m, grad))
}

/// MSE plus `coef · (−(1/M) Σ y·ln p)`.
pub fn combined<T: Scalar>(pred: &[T], target: &[T], coef: T) -> Result<(T, Vec<T>)> {
    let (mut total, mut grad) = mse(pred, target)?;
    let m = T::of(pred.len() as f64);
    let mut ce = T::zero();
    for ((&p, &y), g) in pred.iter().zip(target).zip(grad.iter_mut()) {
        let (pc, clamped) = clamp(p);
        ce = ce + y * pc.ln();
        if !clamped {
            *g = *g - coef * y / (pc * m);
        }
    }
    total = total - coef * ce / m;
    Ok((total, grad))
}
