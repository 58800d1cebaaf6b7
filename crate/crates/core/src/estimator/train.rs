use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{loss_and_gradient, LstmModel, LstmParams, ModelError};
use crate::dataset::InputWindow;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("target {target} at example {index} outside [0, 1]")]
    TargetOutOfRange { index: usize, target: f64 },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (gradient norm {grad_norm}, last finite loss {last_loss})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        grad_norm: f64,
        last_loss: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain mini-batch gradient descent.
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.3,
            batch_size: 8,
            seed: 0,
            optimizer: Optimizer::Sgd,
            clip_norm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-example loss seen during each epoch.
    pub loss_history: Vec<f64>,
    /// MSE of the returned model over the whole training set.
    pub final_mse: f64,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Trains on `(window, target)` pairs by minimizing mean squared error with
/// full BPTT. Results are bit-reproducible for a given seed: per-example
/// gradients are computed in parallel but summed in batch order.
pub fn train(
    model: &LstmModel,
    data: &[(InputWindow, f64)],
    config: &TrainConfig,
) -> Result<(LstmModel, TrainReport), TrainError> {
    model.validate()?;
    if data.is_empty() || config.batch_size == 0 {
        return Err(TrainError::EmptyDataset);
    }
    for (index, (w, target)) in data.iter().enumerate() {
        if !(0.0..=1.0).contains(target) {
            return Err(TrainError::TargetOutOfRange { index, target: *target });
        }
        if w.frames.len() != model.window {
            return Err(ModelError::DimensionMismatch {
                expected: model.window,
                got: w.frames.len(),
            }
            .into());
        }
    }

    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let n_params = model.params.len();
    let mut adam = AdamState {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut history = Vec::with_capacity(config.epochs);
    let mut last_loss = f64::NAN;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_ix, batch) in order.chunks(config.batch_size).enumerate() {
            let per_example: Vec<(f64, LstmParams)> = batch
                .par_iter()
                .map(|&k| loss_and_gradient(&model, &data[k].0.frames, data[k].1))
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let mut grad = LstmParams::zeros(model.hidden());
            let mut batch_loss = 0.0;
            for (loss, g) in &per_example {
                batch_loss += loss;
                grad.add_scaled(g, scale);
            }
            let grad_norm = grad.norm();
            if !batch_loss.is_finite() || !grad_norm.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_ix,
                    grad_norm,
                    last_loss,
                });
            }
            epoch_loss += batch_loss;
            last_loss = batch_loss * scale;

            if config.clip_norm > 0.0 && grad_norm > config.clip_norm {
                let s = config.clip_norm / grad_norm;
                for v in grad.iter_mut() {
                    *v *= s;
                }
            }
            step(&mut model.params, &grad, config, &mut adam);
        }
        history.push(epoch_loss / data.len() as f64);
    }

    let final_mse = data
        .par_iter()
        .map(|(w, t)| {
            let e = model.run(&w.frames) - t;
            e * e
        })
        .collect::<Vec<_>>()
        .iter()
        .sum::<f64>()
        / data.len() as f64;
    if !final_mse.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            epoch: config.epochs,
            batch: 0,
            grad_norm: f64::NAN,
            last_loss,
        });
    }
    Ok((
        model,
        TrainReport {
            loss_history: history,
            final_mse,
        },
    ))
}

fn step(params: &mut LstmParams, grad: &LstmParams, config: &TrainConfig, adam: &mut AdamState) {
    let lr = config.learning_rate;
    match config.optimizer {
        Optimizer::Sgd => params.add_scaled(grad, -lr),
        Optimizer::Adam { beta1, beta2, epsilon } => {
            adam.t += 1;
            let bc1 = 1.0 - beta1.powi(adam.t);
            let bc2 = 1.0 - beta2.powi(adam.t);
            for (((p, g), m), v) in params.iter_mut().zip(grad.iter()).zip(&mut adam.m).zip(&mut adam.v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}
