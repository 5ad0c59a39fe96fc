use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

/// Adam with bias correction; moments are kept in `f64` regardless of `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new<T: Scalar>(config: AdamConfig, params: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Ok(OptimState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    /// Applies one update. Nothing is modified when any gradient is non-finite.
    pub fn step<T: Scalar>(&mut self, params: &mut ParamStore<T>, grads: &[Vec<T>]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "{} gradient buffers for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != self.m[i].len() {
                return Err(Error::shape(format!("gradient {i} has wrong length")));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {i} at element {j} is {:?}",
                    g[j]
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - b2.powi(self.step.min(i32::MAX as u64) as i32);
        for ((t, g), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for k in 0..g.len() {
                let gk = g[k].f64();
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                let update = lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                t.data[k] = T::of(t.data[k].f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    fn scalar_store(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.push("w", Tensor::new(&[1], vec![w]).unwrap());
        s
    }

    #[test]
    fn quadratic_converges() {
        let mut p = scalar_store(1.0);
        let mut st = OptimState::new(AdamConfig::with_lr(0.1), &p).unwrap();
        for _ in 0..200 {
            let w = p.tensors_mut()[0].data[0];
            st.step(&mut p, &[vec![2.0 * w]]).unwrap();
        }
        assert!(p.tensors_mut()[0].data[0].abs() < 1e-3);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = scalar_store(0.7);
        let mut st = OptimState::new(AdamConfig::default(), &p).unwrap();
        st.step(&mut p, &[vec![0.0]]).unwrap();
        assert_eq!(p.tensors_mut()[0].data[0], 0.7);
    }

    #[test]
    fn nan_gradient_rejected() {
        let mut p = scalar_store(0.7);
        let mut st = OptimState::new(AdamConfig::default(), &p).unwrap();
        let err = st.step(&mut p, &[vec![f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(st.step, 0);
        assert_eq!(p.tensors_mut()[0].data[0], 0.7);
    }
}
