//! Descent-only fine-tuning with AdamW until the mean training NLL falls
//! below a threshold.

use serde::{Deserialize, Serialize};

use super::{adamw_step, AdamWConfig, OptimizerState, StepMode};
use crate::error::{Error, Result};
use crate::model::{Sample, TinyLM};
use crate::numerics::{Seed, Stream};
use rand::seq::SliceRandom;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once the mean per-sample NLL is below this value.
    pub nll_threshold: f64,
    pub seed: Seed,
    pub adamw: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-2,
            batch_size: 16,
            max_epochs: 500,
            nll_threshold: 0.05,
            seed: Seed(0),
            adamw: AdamWConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub final_nll: f64,
    pub converged: bool,
}

fn mean_nll(model: &TinyLM, samples: &[Sample]) -> Result<f64> {
    let v = model.batch_nll(samples)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Trains `model` in place on `samples`.
pub fn train(model: &mut TinyLM, samples: &[Sample], config: &TrainConfig) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut theta = model.params().clone();
    let mut state = OptimizerState::new(theta.dim());
    let mut nll = mean_nll(model, samples)?;
    let mut epochs = 0;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    while nll >= config.nll_threshold && epochs < config.max_epochs {
        let mut rng = config.seed.rng_indexed(Stream::Shuffle, epochs as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let g = model.grad_sequence_nll(&batch)?;
            adamw_step(&mut state, &config.adamw, config.lr, &mut theta, &g, StepMode::Descent)?;
            model.set_params(theta.clone())?;
        }
        epochs += 1;
        nll = mean_nll(model, samples)?;
    }
    Ok(TrainReport { epochs, final_nll: nll, converged: nll < config.nll_threshold })
}
