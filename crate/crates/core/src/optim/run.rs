//! Iterative unlearning driver.
//!
//! GA/GradDiff (alternating schedule): each iteration takes an ascent step on
//! the gradient of the forget-batch NLL, then a descent step on `λ·∇NLL` of a
//! retain batch, with one shared optimizer state. The longer of the two batch
//! lists sets the epoch length; the shorter one is cycled.
//!
//! PO/NPO, and GradDiff in the combined schedule: each iteration takes one
//! descent step on the gradient of the full regularized loss.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LrSchedule, OptimizerKind, OptimizerState, StepMode};
use crate::error::{Error, Result};
use crate::losses::{self, Method, MethodConfig, UnlearnBatch};
use crate::model::{ReferenceModel, Sample, TinyLM, TokenSequence};
use crate::numerics::{ParamVector, Seed, Stream};

/// Forget set, retain set, objective, and the reject-answer pool used by PO.
#[derive(Clone, Debug)]
pub struct UnlearnTask {
    pub forget: Vec<Sample>,
    pub retain: Vec<Sample>,
    pub method: MethodConfig,
    pub reject_pool: Vec<TokenSequence>,
}

impl UnlearnTask {
    fn validate(&self) -> Result<()> {
        self.method.validate()?;
        if self.forget.is_empty() {
            return Err(Error::EmptyForgetSet);
        }
        let lambda = self.method.effective_lambda();
        if lambda > 0.0 && self.retain.is_empty() {
            return Err(Error::EmptyRetainSet { lambda });
        }
        if self.method.method == Method::Po && self.reject_pool.is_empty() {
            return Err(Error::MissingForgetTargets);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Separate ascent (forget) and descent (retain) steps.
    #[default]
    Alternating,
    /// One descent step on the combined loss.
    Combined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub optimizer: OptimizerKind,
    pub lr: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: Seed,
    pub schedule: Schedule,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub mode: StepMode,
    pub loss: f64,
    pub forget_nll: Option<f64>,
    pub retain_nll: Option<f64>,
    pub update_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    /// Parameters at the start (index 0) and after each epoch.
    pub epoch_params: Vec<ParamVector>,
}

impl Trajectory {
    pub fn final_params(&self) -> &ParamVector {
        self.epoch_params.last().expect("trajectory holds the initial parameters")
    }

    /// Tab-separated step log with a header line:
    /// `step mode loss forget_nll retain_nll update_norm`, `NA` for absent values.
    pub fn to_log(&self) -> String {
        let mut out = String::from("step\tepoch\tmode\tloss\tforget_nll\tretain_nll\tupdate_norm\n");
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.17e}"));
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.17e}\t{}\t{}\t{:.17e}",
                r.step,
                r.epoch,
                r.mode.name(),
                r.loss,
                opt(r.forget_nll),
                opt(r.retain_nll),
                r.update_norm
            );
        }
        out
    }
}

fn shuffled(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

fn batches(samples: &[Sample], order: &[usize], size: usize) -> Vec<Vec<Sample>> {
    order.chunks(size).map(|c| c.iter().map(|&i| samples[i].clone()).collect()).collect()
}

/// Runs iterative unlearning from `model`'s parameters.
pub fn run_unlearning(model: &TinyLM, task: &UnlearnTask, config: &RunConfig) -> Result<Trajectory> {
    task.validate()?;
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let reference = (task.method.method == Method::Npo).then(|| ReferenceModel::capture(model));
    let mut current = model.clone();
    let mut theta = model.params().clone();
    let mut state = OptimizerState::new(theta.dim());
    let mut records = Vec::new();
    let mut epoch_params = vec![theta.clone()];
    let lambda = task.method.effective_lambda();
    let alternating =
        matches!(task.method.method, Method::Ga | Method::GradDiff) && config.schedule == Schedule::Alternating;

    for epoch in 0..config.epochs {
        let mut rng = config.seed.rng_indexed(Stream::Shuffle, epoch as u64);
        let forget_order = shuffled(task.forget.len(), &mut rng);
        let retain_order = shuffled(task.retain.len(), &mut rng);
        let forget_batches = batches(&task.forget, &forget_order, config.batch_size);
        let retain_batches =
            if lambda > 0.0 { batches(&task.retain, &retain_order, config.batch_size) } else { Vec::new() };
        let targets: Option<Vec<TokenSequence>> = (task.method.method == Method::Po).then(|| {
            let mut trng = config.seed.rng_indexed(Stream::Targets, epoch as u64);
            forget_order
                .iter()
                .map(|_| task.reject_pool[trng.random_range(0..task.reject_pool.len())].clone())
                .collect()
        });
        let iterations = forget_batches.len().max(retain_batches.len());

        for i in 0..iterations {
            let forget = &forget_batches[i % forget_batches.len()];
            let retain = (!retain_batches.is_empty()).then(|| &retain_batches[i % retain_batches.len()]);
            if alternating {
                let (nll, g) = current.nll_and_grad(forget)?;
                let lr = config.lr.at(state.t);
                let norm = config.optimizer.step(&mut state, lr, &mut theta, &g, StepMode::Ascent)?;
                current.set_params(theta.clone())?;
                records.push(StepRecord {
                    step: state.t,
                    epoch,
                    mode: StepMode::Ascent,
                    loss: -nll,
                    forget_nll: Some(nll),
                    retain_nll: None,
                    update_norm: norm,
                });
                if let Some(retain) = retain {
                    let (nll, g) = current.nll_and_grad(retain)?;
                    let lr = config.lr.at(state.t);
                    let norm =
                        config.optimizer.step(&mut state, lr, &mut theta, &g.scale(lambda), StepMode::Descent)?;
                    current.set_params(theta.clone())?;
                    records.push(StepRecord {
                        step: state.t,
                        epoch,
                        mode: StepMode::Descent,
                        loss: lambda * nll,
                        forget_nll: None,
                        retain_nll: Some(nll),
                        update_norm: norm,
                    });
                }
            } else {
                let batch_targets = targets.as_ref().map(|t| {
                    let start = (i % forget_batches.len()) * config.batch_size;
                    t[start..start + forget.len()].to_vec()
                });
                let batch = UnlearnBatch {
                    forget: forget.clone(),
                    retain: retain.cloned().unwrap_or_default(),
                    forget_targets: batch_targets,
                };
                let out = losses::unlearning_loss(&current, reference.as_ref(), &batch, &task.method)?;
                let lr = config.lr.at(state.t);
                let norm = config.optimizer.step(&mut state, lr, &mut theta, &out.grad, StepMode::Descent)?;
                current.set_params(theta.clone())?;
                records.push(StepRecord {
                    step: state.t,
                    epoch,
                    mode: StepMode::Descent,
                    loss: out.loss,
                    forget_nll: Some(out.forget_nll),
                    retain_nll: out.retain_nll,
                    update_norm: norm,
                });
            }
        }
        epoch_params.push(theta.clone());
    }
    Ok(Trajectory { records, epoch_params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Arch, ModelConfig};
    use crate::optim::{AdamWConfig, SophiaConfig};

    fn tiny() -> TinyLM {
        let cfg = ModelConfig {
            arch: Arch::Mlp,
            vocab_size: 6,
            context_window: 6,
            window: 6,
            embed_dim: 2,
            hidden_dim: 4,
            depth: 2,
        };
        TinyLM::init(cfg, Seed(1)).unwrap()
    }

    fn s(x: &[u32], y: &[u32]) -> Sample {
        Sample::new(x.to_vec().into(), y.to_vec().into())
    }

    fn task(method: Method, lambda: f64) -> UnlearnTask {
        UnlearnTask {
            forget: vec![s(&[1], &[2, 3]), s(&[2], &[4])],
            retain: vec![s(&[3], &[1]), s(&[4], &[5, 1]), s(&[5], &[2])],
            method: MethodConfig::new(method, lambda),
            reject_pool: vec![vec![0, 5].into(), vec![1].into()],
        }
    }

    fn cfg(optimizer: OptimizerKind, epochs: usize) -> RunConfig {
        RunConfig {
            optimizer,
            lr: LrSchedule::Constant(0.05),
            epochs,
            batch_size: 1,
            seed: Seed(3),
            schedule: Schedule::Alternating,
        }
    }

    #[test]
    fn zero_epochs_returns_start() {
        let m = tiny();
        let tr =
            run_unlearning(&m, &task(Method::GradDiff, 1.0), &cfg(OptimizerKind::Sophia(SophiaConfig::default()), 0))
                .unwrap();
        assert_eq!(tr.final_params(), m.params());
        assert!(tr.records.is_empty());
    }

    #[test]
    fn alternating_step_counts_and_modes() {
        let m = tiny();
        let tr =
            run_unlearning(&m, &task(Method::GradDiff, 1.0), &cfg(OptimizerKind::Sophia(SophiaConfig::default()), 2))
                .unwrap();
        // 3 iterations (retain is longer) × 2 steps × 2 epochs.
        assert_eq!(tr.records.len(), 12);
        assert!(tr.records.iter().step_by(2).all(|r| r.mode == StepMode::Ascent));
        assert!(tr.records.iter().skip(1).step_by(2).all(|r| r.mode == StepMode::Descent));
        assert_eq!(tr.epoch_params.len(), 3);
        let ga = run_unlearning(&m, &task(Method::Ga, 5.0), &cfg(OptimizerKind::Sophia(SophiaConfig::default()), 1))
            .unwrap();
        assert_eq!(ga.records.len(), 2);
    }

    #[test]
    fn combined_cancellation_keeps_trajectory_constant() {
        let m = tiny();
        // A single sample: batch order cannot perturb the summation order.
        let forget = vec![s(&[1], &[2, 3])];
        let t = UnlearnTask {
            forget: forget.clone(),
            retain: forget,
            method: MethodConfig::new(Method::GradDiff, 1.0),
            reject_pool: vec![],
        };
        for opt in [OptimizerKind::Sophia(SophiaConfig::default()), OptimizerKind::AdamW(AdamWConfig::default())] {
            let c = RunConfig { schedule: Schedule::Combined, ..cfg(opt, 3) };
            let tr = run_unlearning(&m, &t, &c).unwrap();
            assert!(tr.epoch_params.iter().all(|p| p == m.params()));
        }
    }

    #[test]
    fn po_and_npo_run_in_descent() {
        let m = tiny();
        for method in [Method::Po, Method::Npo] {
            let tr =
                run_unlearning(&m, &task(method, 0.5), &cfg(OptimizerKind::AdamW(AdamWConfig::default()), 1)).unwrap();
            assert!(tr.records.iter().all(|r| r.mode == StepMode::Descent));
            assert_eq!(tr.records.len(), 3);
        }
    }

    #[test]
    fn deterministic_and_logged() {
        let m = tiny();
        let c = cfg(OptimizerKind::Sophia(SophiaConfig::default()), 2);
        let a = run_unlearning(&m, &task(Method::Po, 1.0), &c).unwrap();
        let b = run_unlearning(&m, &task(Method::Po, 1.0), &c).unwrap();
        assert_eq!(a, b);
        let log = a.to_log();
        assert_eq!(log.lines().count(), a.records.len() + 1);
        assert!(log.starts_with("step\tepoch\tmode\tloss\tforget_nll\tretain_nll\tupdate_norm"));
    }

    #[test]
    fn invalid_tasks() {
        let m = tiny();
        let c = cfg(OptimizerKind::Sophia(SophiaConfig::default()), 1);
        let mut t = task(Method::GradDiff, 1.0);
        t.retain.clear();
        assert!(matches!(run_unlearning(&m, &t, &c), Err(Error::EmptyRetainSet { .. })));
        let mut t = task(Method::Po, 1.0);
        t.reject_pool.clear();
        assert!(run_unlearning(&m, &t, &c).is_err());
        let mut t = task(Method::Npo, 1.0);
        t.method.beta = 0.0;
        assert!(matches!(run_unlearning(&m, &t, &c), Err(Error::InvalidBeta(_))));
    }
}
