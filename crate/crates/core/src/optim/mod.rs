//! Optimizer state machines: AdamW, the diagonal Newton step, and the clipped
//! second-order Sophia step, each runnable in descent or ascent mode.
//!
//! The step mode is folded into the gradient before it reaches the moment
//! buffers: an ascent step on `g` feeds `−g` into the EMAs and then takes the
//! usual descent update. `ascent(g)` and `descent(−g)` are therefore the same
//! operation on any state, and one set of buffers can serve forget-set ascent
//! and retain-set descent steps in the same run.

mod run;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{clip_scalar, ParamVector};

pub use run::{run_unlearning, RunConfig, Schedule, StepRecord, Trajectory, UnlearnTask};
pub use train::{train, TrainConfig, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    Descent,
    Ascent,
}

impl StepMode {
    pub fn name(self) -> &'static str {
        match self {
            StepMode::Descent => "descent",
            StepMode::Ascent => "ascent",
        }
    }

    fn signed(self, g: f64) -> f64 {
        match self {
            StepMode::Descent => g,
            StepMode::Ascent => -g,
        }
    }
}

/// Learning rate per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant(f64),
    /// Per-step table; the last entry repeats past the end.
    Table(Vec<f64>),
}

impl LrSchedule {
    /// Rate for the step with zero-based index `t`.
    pub fn at(&self, t: u64) -> f64 {
        match self {
            LrSchedule::Constant(lr) => *lr,
            LrSchedule::Table(v) => v.get(t as usize).or(v.last()).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SophiaConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
    pub eps: f64,
    /// Elementwise clip threshold on `m / max(γh, ε)`; `f64::INFINITY` disables it.
    pub clip: f64,
    /// Refresh the Hessian EMA every this many steps.
    pub hessian_interval: u64,
}

impl Default for SophiaConfig {
    fn default() -> Self {
        SophiaConfig { beta1: 0.9, beta2: 0.95, gamma: 0.04, eps: 1e-5, clip: 1.0, hessian_interval: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Moment buffers shared by both optimizers. `h` is Sophia's Hessian-diagonal
/// EMA, `v` AdamW's second moment; each optimizer leaves the other's untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    pub m: ParamVector,
    pub h: ParamVector,
    pub v: ParamVector,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        OptimizerState { t: 0, m: ParamVector::zeros(dim), h: ParamVector::zeros(dim), v: ParamVector::zeros(dim) }
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    fn check(&self, theta: &ParamVector, g: &ParamVector) -> Result<()> {
        theta.check_dim(self.dim())?;
        g.check_dim(self.dim())?;
        self.h.check_dim(self.dim())?;
        self.v.check_dim(self.dim())
    }
}

/// Gauss-Newton style diagonal estimate `g ⊙ g`.
pub fn estimate_hessian_diag(g: &ParamVector) -> ParamVector {
    g.hadamard(g)
}

/// `β·prev + (1−β)·new`
pub fn ema_update(prev: &ParamVector, new: &ParamVector, beta: f64) -> Result<ParamVector> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("EMA coefficient must be in [0, 1), got {beta}")));
    }
    new.check_dim(prev.dim())?;
    Ok(ParamVector::from(prev.iter().zip(new.iter()).map(|(&p, &n)| beta * p + (1.0 - beta) * n).collect::<Vec<_>>()))
}

/// `θ − η·(g / H)` elementwise; every curvature entry must be positive.
pub fn newton_step(theta: &ParamVector, g: &ParamVector, h_diag: &ParamVector, lr: f64) -> Result<ParamVector> {
    g.check_dim(theta.dim())?;
    h_diag.check_dim(theta.dim())?;
    if let Some((index, &value)) = h_diag.iter().enumerate().find(|(_, &h)| !(h > 0.0)) {
        return Err(Error::NonPositiveCurvature { index, value });
    }
    Ok(ParamVector::from(
        theta.iter().zip(g.iter()).zip(h_diag.iter()).map(|((&t, &gi), &hi)| t - lr * (gi / hi)).collect::<Vec<_>>(),
    ))
}

/// One Sophia step in place; returns the norm of the parameter change.
///
/// `m ← β1·m + (1−β1)·g`, `h ← β2·h + (1−β2)·ĥ` on the configured cadence with
/// `ĥ = g⊙g`, then `θ ← θ − η·clip(m / max(γ·h, ε), clip)`.
pub fn sophia_step(
    state: &mut OptimizerState,
    config: &SophiaConfig,
    lr: f64,
    theta: &mut ParamVector,
    g: &ParamVector,
    mode: StepMode,
) -> Result<f64> {
    sophia_step_with_hessian(state, config, lr, theta, g, None, mode)
}

/// As [`sophia_step`], with an explicit Hessian-diagonal estimate in place of `g⊙g`.
pub fn sophia_step_with_hessian(
    state: &mut OptimizerState,
    config: &SophiaConfig,
    lr: f64,
    theta: &mut ParamVector,
    g: &ParamVector,
    hessian: Option<&ParamVector>,
    mode: StepMode,
) -> Result<f64> {
    state.check(theta, g)?;
    if let Some(h) = hessian {
        h.check_dim(state.dim())?;
    }
    let refresh = config.hessian_interval <= 1 || state.t.is_multiple_of(config.hessian_interval);
    let (b1, b2) = (config.beta1, config.beta2);
    let mut sq = 0.0;
    let m = state.m.as_mut_slice();
    let h = state.h.as_mut_slice();
    for (i, th) in theta.as_mut_slice().iter_mut().enumerate() {
        let gi = mode.signed(g[i]);
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        if refresh {
            let est = match hessian {
                Some(hd) => hd[i],
                None => gi * gi,
            };
            h[i] = b2 * h[i] + (1.0 - b2) * est;
        }
        let ratio = m[i] / (config.gamma * h[i]).max(config.eps);
        let delta = lr * clip_scalar(ratio, config.clip);
        *th -= delta;
        sq += delta * delta;
    }
    state.t += 1;
    theta.check_finite("sophia_step")?;
    Ok(sq.sqrt())
}

/// One AdamW step in place (bias-corrected moments, decoupled weight decay);
/// returns the norm of the parameter change.
pub fn adamw_step(
    state: &mut OptimizerState,
    config: &AdamWConfig,
    lr: f64,
    theta: &mut ParamVector,
    g: &ParamVector,
    mode: StepMode,
) -> Result<f64> {
    state.check(theta, g)?;
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    let decay = 1.0 - lr * config.weight_decay;
    let mut sq = 0.0;
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for (i, th) in theta.as_mut_slice().iter_mut().enumerate() {
        let gi = mode.signed(g[i]);
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        let denom = (v[i] / bc2).sqrt() + config.eps;
        let before = *th;
        *th = *th * decay - lr * (m[i] / bc1) / denom;
        let d = *th - before;
        sq += d * d;
    }
    theta.check_finite("adamw_step")?;
    Ok(sq.sqrt())
}

/// Optimizer choice with its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    AdamW(AdamWConfig),
    Sophia(SophiaConfig),
}

impl OptimizerKind {
    pub fn step(
        &self,
        state: &mut OptimizerState,
        lr: f64,
        theta: &mut ParamVector,
        g: &ParamVector,
        mode: StepMode,
    ) -> Result<f64> {
        match self {
            OptimizerKind::AdamW(c) => adamw_step(state, c, lr, theta, g, mode),
            OptimizerKind::Sophia(c) => sophia_step(state, c, lr, theta, g, mode),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            OptimizerKind::AdamW(_) => "fo",
            OptimizerKind::Sophia(_) => "so",
        }
    }
}
