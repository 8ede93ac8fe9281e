//! Epoch loop with shuffling, Adam and early stopping, shared by every
//! trainable model in the crate.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numcore::{Adam, AdamConfig, Matrix};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Stop once this many epochs pass without a validation improvement.
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            patience: 10,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-step training loss over the epoch.
    pub train_loss: f64,
    /// Validation score (higher is better; AUC unless noted in the log).
    pub valid_score: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_score: f64,
}

impl TrainLog {
    /// Tab-separated `epoch train_loss valid_score` table.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tvalid_score\tbest_valid_score\n");
        let mut best = f64::NEG_INFINITY;
        for e in &self.epochs {
            best = best.max(e.valid_score);
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}\t{:.6}", e.epoch, e.train_loss, e.valid_score, best);
        }
        out
    }
}

/// Loss over one minibatch: summed loss, number of scored steps, and the
/// gradients of the summed loss for each trainable tensor (in the order the
/// model hands them to the optimizer).
pub(crate) struct BatchResult {
    pub loss_sum: f64,
    pub count: usize,
    pub grads: Vec<Matrix>,
}

/// Runs the shuffled-minibatch loop. `batch` evaluates one minibatch of
/// training indices; `trainable` exposes the tensors Adam updates, in the
/// same order as the gradients; `validate` scores the current model.
///
/// Gradients are divided by the batch step count, so updates follow the
/// mean per-step loss. The model from the best-scoring epoch is restored.
pub(crate) fn fit<M: Clone>(
    model: &mut M,
    n_train: usize,
    config: &TrainConfig,
    stream: &str,
    mut batch: impl FnMut(&M, &[usize]) -> Result<BatchResult>,
    mut trainable: impl FnMut(&mut M) -> Vec<&mut Matrix>,
    mut validate: impl FnMut(&M) -> Result<f64>,
) -> Result<TrainLog> {
    config.validate()?;
    if n_train == 0 {
        return Err(Error::EmptyDataset("training split"));
    }
    let mut rng = substream(config.seed, stream);
    let mut adam = Adam::new(
        AdamConfig::with_lr(config.lr),
        trainable(model).into_iter().map(|m| &*m),
    );
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut log = TrainLog {
        best_score: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best = model.clone();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let (mut total, mut steps) = (0.0, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut res = batch(model, chunk)?;
            if !res.loss_sum.is_finite() || res.grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    message: format!("non-finite loss {}", res.loss_sum),
                });
            }
            if res.count == 0 {
                continue;
            }
            let inv = 1.0 / res.count as f64;
            for g in &mut res.grads {
                g.as_mut_slice().iter_mut().for_each(|v| *v *= inv);
            }
            adam.step(&mut trainable(model), &mut res.grads);
            total += res.loss_sum;
            steps += res.count;
        }
        let score = validate(model)?;
        if !score.is_finite() {
            return Err(Error::Training {
                epoch,
                batch: 0,
                message: format!("non-finite validation score {score}"),
            });
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: if steps > 0 { total / steps as f64 } else { 0.0 },
            valid_score: score,
        });
        if score > log.best_score {
            log.best_score = score;
            log.best_epoch = epoch;
            best = model.clone();
        }
        if epoch - log.best_epoch >= config.patience {
            break;
        }
    }
    *model = best;
    Ok(log)
}
