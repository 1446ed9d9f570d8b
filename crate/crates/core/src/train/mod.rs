//! BCE training loop, evaluation and history records.

mod optim;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{Optimizer, OptimizerKind};

use crate::data::{stack_batch, Sample};
use crate::engine::{bce_loss, bce_loss_backward, Layer, Mode};
use crate::error::{Error, Result};
use crate::metrics::{
    binarize, confusion, Averaging, ConfusionCounts, MetricsRecord, DEFAULT_THRESHOLD,
};
use crate::tensor::Scalar;
use crate::zoo::{save_checkpoint, LayerGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Evaluate on the validation split every this many epochs (and after the last).
    pub eval_every: usize,
    /// Where the best-JS checkpoint goes.
    pub checkpoint: Option<PathBuf>,
    /// Stop after the first evaluation whose validation JS reaches this value.
    pub stop_at_js: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.001,
            batch_size: 4,
            seed: 0,
            optimizer: OptimizerKind::default(),
            eval_every: 1,
            checkpoint: None,
            stop_at_js: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "epochs, batch_size and eval_every must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} is invalid",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<MetricsRecord>,
}

impl EpochRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_js: Option<f64>,
    pub best_epoch: Option<usize>,
}

/// One optimizer step on a batch; returns the batch loss before the update.
pub fn train_step<T: Scalar>(
    model: &mut LayerGraph<T>,
    opt: &mut Optimizer,
    batch: &[&Sample],
) -> Result<f64> {
    let (x, t) = stack_batch::<T>(batch)?;
    model.zero_grad();
    let y = model.forward(&x, Mode::Train)?;
    let loss = bce_loss(&y, &t)?.as_f64();
    if !loss.is_finite() {
        return Err(Error::NonFinite("bce loss"));
    }
    model.backward(&bce_loss_backward(&y, &t)?)?;
    opt.step(model)?;
    Ok(loss)
}

/// Train with a seeded shuffle per epoch. `on_epoch` sees each record as it is produced.
///
/// A non-finite loss aborts with [`Error::Divergence`]; any best-JS checkpoint
/// already written is left untouched.
pub fn train<T: Scalar>(
    model: &mut LayerGraph<T>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut out = TrainOutcome::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = match train_step(model, &mut opt, &batch) {
                Ok(l) => l,
                Err(Error::NonFinite(_)) | Err(Error::NonFiniteGradient(_)) => {
                    return Err(Error::Divergence {
                        epoch,
                        step,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            total += loss * batch.len() as f64;
        }
        let train_loss = total / train_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step: order.len().div_ceil(cfg.batch_size),
                loss: train_loss,
            });
        }

        let val = if !val_set.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            Some(evaluate(model, val_set, Averaging::Pooled, cfg.batch_size)?)
        } else {
            None
        };
        if let Some(rec) = &val {
            if out.best_js.is_none_or(|b| rec.js > b) {
                out.best_js = Some(rec.js);
                out.best_epoch = Some(epoch);
                if let Some(path) = &cfg.checkpoint {
                    save_checkpoint(model, path)?;
                }
            }
        }
        let reached = matches!((&val, cfg.stop_at_js), (Some(rec), Some(goal)) if rec.js >= goal);
        let record = EpochRecord {
            epoch,
            train_loss,
            val,
        };
        on_epoch(&record);
        out.history.push(record);
        if reached {
            break;
        }
    }
    if out.best_epoch.is_none() {
        if let Some(path) = &cfg.checkpoint {
            save_checkpoint(model, path)?;
        }
    }
    Ok(out)
}

/// Per-image confusion counts with eval-mode batch norm.
pub fn confusion_per_image<T: Scalar>(
    model: &mut LayerGraph<T>,
    samples: &[Sample],
    batch_size: usize,
) -> Result<Vec<ConfusionCounts>> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let mut counts = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = stack_batch::<T>(&refs)?;
        let pred = binarize(&model.forward(&x, Mode::Eval)?, DEFAULT_THRESHOLD)?;
        for (b, s) in chunk.iter().enumerate() {
            counts.push(confusion(&s.mask, &pred.sample(b))?);
        }
    }
    Ok(counts)
}

pub fn evaluate<T: Scalar>(
    model: &mut LayerGraph<T>,
    samples: &[Sample],
    averaging: Averaging,
    batch_size: usize,
) -> Result<MetricsRecord> {
    MetricsRecord::aggregate(&confusion_per_image(model, samples, batch_size)?, averaging)
}

/// Mean BCE over `samples` in eval mode.
pub fn mean_loss<T: Scalar>(
    model: &mut LayerGraph<T>,
    samples: &[Sample],
    batch_size: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("loss split"));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, t) = stack_batch::<T>(&refs)?;
        total += bce_loss(&model.forward(&x, Mode::Eval)?, &t)?.as_f64() * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}
