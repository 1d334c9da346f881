//! The training loop.

use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig, FlipAxis};
use super::dataset::{collate, Sample};
use super::eval::evaluate;
use super::optim::{poly_lr, OptimizerState, Sgd};
use crate::error::{Error, Result};
use crate::model::{backward_full, forward_full, ModelConfig, ModelParams};
use crate::ops::{softmax_cross_entropy, Mode};
use crate::params::Parameters;
use crate::rng::SplitMix64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.001,
            power: 0.9,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 30,
            batch_size: 8,
            augment: AugmentConfig {
                crop_size: 64,
                scale_min: 0.5,
                scale_max: 2.0,
                flip: FlipAxis::Vertical,
            },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.power > 0.0) {
            return Err(Error::InvalidConfig("weight_decay must be >= 0 and power > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        self.augment.validate()
    }

    pub fn iterations_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_miou: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Parameters after the epoch with the highest validation mIoU.
    pub best: Option<(usize, f64, ModelParams)>,
    pub log: Vec<EpochRecord>,
}

/// Name of the first tensor holding a NaN or infinity.
pub fn first_non_finite(p: &dyn Parameters) -> Option<String> {
    let mut found = None;
    p.visit("", &mut |name, v| {
        if found.is_none() && v.iter().any(|x| !x.is_finite()) {
            found = Some(name.to_string());
        }
    });
    found
}

/// Runs `epochs` of SGD with the poly schedule. `on_epoch` sees every
/// record as soon as it is produced.
pub fn train(
    model: &ModelConfig,
    init: ModelParams,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    run(model, init, train_set, val_set, cfg, on_epoch)
}

fn run(
    model: &ModelConfig,
    init: ModelParams,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    model.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let mut params = init;
    let mut state = OptimizerState::new(&params);
    let sgd = Sgd {
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    };
    let mut rng = SplitMix64::new(cfg.seed);
    let per_epoch = cfg.iterations_per_epoch(train_set.len());
    let max_iter = per_epoch * cfg.epochs;
    let mut iter = 0;
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| augment(&train_set[i], &cfg.augment, &mut rng))
                .collect::<Result<_>>()?;
            let refs: Vec<&Sample> = batch.iter().collect();
            let (x, y) = collate(&refs)?;
            let (logits, cache) = forward_full(&x, model, &mut params, Mode::Train)?;
            if !logits.is_finite() {
                let culprit = first_non_finite(&params).unwrap_or_else(|| "logits".into());
                return Err(Error::NonFinite(format!("{culprit} at epoch {epoch}, iteration {iter}")));
            }
            let lv = match softmax_cross_entropy(&logits, &y) {
                Ok(lv) => lv,
                // A crop can land entirely on padding.
                Err(Error::Empty(_)) => {
                    iter += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !lv.loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, iteration {iter}")));
            }
            let grads = backward_full(&cache, model, &params, &lv.grad)?;
            if let Some(name) = first_non_finite(&grads) {
                return Err(Error::NonFinite(format!("gradient of {name} at epoch {epoch}, iteration {iter}")));
            }
            let lr = poly_lr(cfg.base_lr, iter, max_iter, cfg.power);
            sgd.step(&mut params, &grads, &mut state, lr)?;
            loss_sum += lv.loss;
            batches += 1;
            iter += 1;
        }
        let val_miou = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(val_set, model, &params, &[1.0], cfg.batch_size)?.mean_iou)
        };
        let record = EpochRecord {
            epoch,
            mean_loss: if batches == 0 { 0.0 } else { loss_sum / batches as f64 },
            val_miou,
        };
        log::info!("epoch {epoch}: loss {:.5} val mIoU {:?}", record.mean_loss, record.val_miou);
        on_epoch(&record);
        if let Some(m) = val_miou {
            if best.as_ref().is_none_or(|b| m > b.1) {
                best = Some((epoch, m, params.clone()));
            }
        }
        log.push(record);
    }
    Ok(TrainOutcome { params, best, log })
}
