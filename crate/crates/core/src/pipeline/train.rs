use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampling::{sample_batch, Batch, CropConfig, LabeledSet};
use crate::error::{Error, Result};
use crate::models::ModelHandle;
use crate::nn::{AdamConfig, LossSpec, OptimState, ParamStore, Tape};
use crate::scalar::Scalar;

/// Smallest validation-loss drop that counts as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub patience: usize,
    pub optimizer: AdamConfig,
    pub loss: LossSpec,
    pub seed: u64,
    /// Size of the fixed validation crop set.
    pub val_crops: usize,
    /// Hard cap on optimizer steps across all epochs.
    #[serde(default)]
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            steps_per_epoch: 50,
            patience: 3,
            optimizer: AdamConfig::default(),
            loss: LossSpec::default(),
            seed: 0,
            val_crops: 64,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.patience == 0
            || self.steps_per_epoch == 0
            || self.val_crops == 0
        {
            return Err(Error::config(format!(
                "epochs, patience, steps per epoch and validation crops must be >= 1: {self:?}"
            )));
        }
        self.optimizer.validate()?;
        self.loss.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a loss that should decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    /// 1-based epoch of the best loss.
    pub best_epoch: usize,
    epochs_seen: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            epochs_seen: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> StopDecision {
        self.epochs_seen += 1;
        match self.best {
            Some(b) if loss > b - MIN_IMPROVEMENT => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some(loss);
                self.best_epoch = self.epochs_seen;
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub initial_loss: f64,
}

/// Loss on a batch and its gradient, for one parameter update.
pub fn batch_loss<T: Scalar>(
    model: &ModelHandle<T>,
    batch: &Batch<T>,
    loss: &LossSpec,
) -> Result<(f64, Vec<Vec<T>>)> {
    let mut tape = Tape::new();
    let y = model.forward(&mut tape, &batch.crops)?;
    let (value, seed) = loss.eval(&tape.value(y).data, &batch.masks)?;
    let grads = tape.backward(y, &seed, &model.params)?;
    Ok((value.f64(), grads.params))
}

pub fn eval_loss<T: Scalar>(
    model: &ModelHandle<T>,
    batches: &[Batch<T>],
    loss: &LossSpec,
) -> Result<f64> {
    let mut total = 0.0;
    for b in batches {
        let mut tape = Tape::new();
        let y = model.forward(&mut tape, &b.crops)?;
        total += loss.eval(&tape.value(y).data, &b.masks)?.0.f64();
    }
    Ok(total / batches.len() as f64)
}

fn fixed_validation<T: Scalar>(
    val: &LabeledSet<T>,
    crop: &CropConfig,
    cfg: &TrainConfig,
) -> Result<Vec<Batch<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut left = cfg.val_crops;
    let mut out = Vec::new();
    while left > 0 {
        let n = left.min(crop.batch_size);
        out.push(sample_batch(
            val,
            &CropConfig {
                batch_size: n,
                ..*crop
            },
            &mut rng,
        )?);
        left -= n;
    }
    Ok(out)
}

/// Trains with Adam and early stopping; on return the model holds the
/// parameters of the epoch with the lowest validation loss.
pub fn train<T: Scalar>(
    model: &mut ModelHandle<T>,
    train_set: &LabeledSet<T>,
    val_set: &LabeledSet<T>,
    cfg: &TrainConfig,
    crop: &CropConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if crop.side != model.crop_side() {
        return Err(Error::config(format!(
            "crop side {} does not match the model's {}",
            crop.side,
            model.crop_side()
        )));
    }
    if val_set.is_empty() {
        return Err(Error::config("training needs a validation split"));
    }
    let val_batches = fixed_validation(val_set, crop, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimState::new(cfg.optimizer, &model.params)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: ParamStore<T> = model.params.clone();
    let mut best_step = model.step;
    let initial_loss = eval_loss(model, &val_batches, &cfg.loss)?;
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: initial_loss,
        stopped_early: false,
        initial_loss,
    };
    let budget = cfg.max_steps.unwrap_or(u64::MAX);
    let mut steps = 0u64;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        let mut taken = 0usize;
        for _ in 0..cfg.steps_per_epoch {
            if steps >= budget {
                break;
            }
            let batch = sample_batch(train_set, crop, &mut rng)?;
            let (loss, grads) = batch_loss(model, &batch, &cfg.loss)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {loss} at epoch {epoch}, step {}",
                    steps + 1
                )));
            }
            opt.step(&mut model.params, &grads)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, step {}: {e}", steps + 1)))?;
            steps += 1;
            model.step += 1;
            sum += loss;
            taken += 1;
        }
        if taken == 0 {
            break;
        }
        let val_loss = eval_loss(model, &val_batches, &cfg.loss)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss {val_loss} after epoch {epoch}"
            )));
        }
        history.epochs.push(EpochRecord {
            epoch,
            steps,
            train_loss: sum / taken as f64,
            val_loss,
        });
        match stopper.observe(val_loss) {
            StopDecision::Improved => {
                best = model.params.clone();
                best_step = model.step;
                history.best_epoch = epoch;
                history.best_val_loss = val_loss;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                history.stopped_early = true;
                break 'epochs;
            }
        }
    }
    model.params = best;
    model.step = best_step;
    Ok(history)
}
