//! Unlearning objectives and their analytic gradients.
//!
//! Every term is a batch mean of per-sample mean-token NLLs:
//!
//! * GA:       `−NLL(forget)`
//! * GradDiff: `−NLL(forget) + λ·NLL(retain)`
//! * PO:       `NLL(forget prompts → reject targets) + λ·NLL(retain)`
//! * NPO:      `(2/β)·mean log(1 + r^β) + λ·NLL(retain)` with the
//!   length-normalized ratio `log r = NLL_ref − NLL_θ` (a ratio of
//!   geometric-mean token probabilities), evaluated as a softplus in log space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ReferenceModel, Sample, TinyLM, TokenSequence};
use crate::numerics::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ga,
    GradDiff,
    Po,
    Npo,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ga => "ga",
            Method::GradDiff => "graddiff",
            Method::Po => "po",
            Method::Npo => "npo",
        }
    }

    /// Retain weights λ mirroring the tuned TOFU grid: `(first-order, second-order)`.
    pub fn default_lambda(self) -> (f64, f64) {
        match self {
            Method::Ga => (0.0, 0.0),
            Method::GradDiff => (0.3, 2.0),
            Method::Po => (1.0, 5.0),
            Method::Npo => (5.0, 1.0),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ga" => Ok(Method::Ga),
            "graddiff" => Ok(Method::GradDiff),
            "po" => Ok(Method::Po),
            "npo" => Ok(Method::Npo),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    pub lambda: f64,
    pub beta: f64,
}

impl MethodConfig {
    pub fn new(method: Method, lambda: f64) -> Self {
        MethodConfig { method, lambda, beta: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.method == Method::Npo && !(self.beta > 0.0) {
            return Err(Error::InvalidBeta(self.beta));
        }
        Ok(())
    }

    /// GA is GradDiff with λ = 0.
    pub fn effective_lambda(&self) -> f64 {
        if self.method == Method::Ga {
            0.0
        } else {
            self.lambda
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UnlearnBatch {
    pub forget: Vec<Sample>,
    pub retain: Vec<Sample>,
    /// PO reject targets, one per forget sample.
    pub forget_targets: Option<Vec<TokenSequence>>,
}

/// Loss value, gradient, and the mean NLLs that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: ParamVector,
    pub forget_nll: f64,
    pub retain_nll: Option<f64>,
}

fn require_forget(batch: &UnlearnBatch) -> Result<()> {
    if batch.forget.is_empty() {
        Err(Error::EmptyForgetSet)
    } else {
        Ok(())
    }
}

/// Adds `λ·NLL(retain)` and its gradient to `out`.
fn add_retain(model: &TinyLM, batch: &UnlearnBatch, lambda: f64, out: &mut LossOutput) -> Result<()> {
    if lambda == 0.0 {
        return Ok(());
    }
    if batch.retain.is_empty() {
        return Err(Error::EmptyRetainSet { lambda });
    }
    let (nll, g) = model.nll_and_grad(&batch.retain)?;
    out.loss += lambda * nll;
    out.grad.axpy(lambda, &g);
    out.retain_nll = Some(nll);
    Ok(())
}

pub fn ga_loss(model: &TinyLM, batch: &UnlearnBatch) -> Result<LossOutput> {
    require_forget(batch)?;
    let (nll, g) = model.nll_and_grad(&batch.forget)?;
    Ok(LossOutput { loss: -nll, grad: g.scale(-1.0), forget_nll: nll, retain_nll: None })
}

pub fn graddiff_loss(model: &TinyLM, batch: &UnlearnBatch, lambda: f64) -> Result<LossOutput> {
    if lambda > 0.0 && batch.retain.is_empty() {
        return Err(Error::EmptyRetainSet { lambda });
    }
    let mut out = ga_loss(model, batch)?;
    add_retain(model, batch, lambda, &mut out)?;
    Ok(out)
}

pub fn po_loss(model: &TinyLM, batch: &UnlearnBatch, lambda: f64) -> Result<LossOutput> {
    require_forget(batch)?;
    let targets = batch.forget_targets.as_ref().ok_or(Error::MissingForgetTargets)?;
    if targets.len() != batch.forget.len() {
        return Err(Error::MissingForgetTargets);
    }
    if lambda > 0.0 && batch.retain.is_empty() {
        return Err(Error::EmptyRetainSet { lambda });
    }
    let relabeled: Vec<Sample> =
        batch.forget.iter().zip(targets).map(|(s, y)| Sample::new(s.prompt.clone(), y.clone())).collect();
    let (nll, g) = model.nll_and_grad(&relabeled)?;
    let mut out = LossOutput { loss: nll, grad: g, forget_nll: nll, retain_nll: None };
    add_retain(model, batch, lambda, &mut out)?;
    Ok(out)
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// NPO forget term as a function of per-sample NLLs under the model and the
/// reference: `(2/β)·mean softplus(β·(nll_ref − nll))`.
pub fn npo_forget_term(nll: &[f64], nll_ref: &[f64], beta: f64) -> f64 {
    let n = nll.len() as f64;
    nll.iter().zip(nll_ref).map(|(a, r)| softplus(beta * (r - a))).sum::<f64>() * 2.0 / (beta * n)
}

pub fn npo_loss(
    model: &TinyLM,
    reference: &ReferenceModel,
    batch: &UnlearnBatch,
    lambda: f64,
    beta: f64,
) -> Result<LossOutput> {
    if !(beta > 0.0) {
        return Err(Error::InvalidBeta(beta));
    }
    require_forget(batch)?;
    if lambda > 0.0 && batch.retain.is_empty() {
        return Err(Error::EmptyRetainSet { lambda });
    }
    let nll_ref = reference.model().batch_nll(&batch.forget)?;
    let nll = model.batch_nll(&batch.forget)?;
    let n = batch.forget.len() as f64;
    // d/dθ (2/β)·softplus(β(ref − nll)) = −2·σ(β(ref − nll))·∇nll
    let weights: Vec<f64> = nll.iter().zip(&nll_ref).map(|(a, r)| -2.0 * sigmoid(beta * (r - a)) / n).collect();
    let (_, grad) = model.weighted_grad(&batch.forget, &weights)?;
    let mean_nll = nll.iter().sum::<f64>() / n;
    let mut out =
        LossOutput { loss: npo_forget_term(&nll, &nll_ref, beta), grad, forget_nll: mean_nll, retain_nll: None };
    add_retain(model, batch, lambda, &mut out)?;
    Ok(out)
}

/// Dispatches on `config.method`. NPO requires `reference`.
pub fn unlearning_loss(
    model: &TinyLM,
    reference: Option<&ReferenceModel>,
    batch: &UnlearnBatch,
    config: &MethodConfig,
) -> Result<LossOutput> {
    config.validate()?;
    match config.method {
        Method::Ga => ga_loss(model, batch),
        Method::GradDiff => graddiff_loss(model, batch, config.lambda),
        Method::Po => po_loss(model, batch, config.lambda),
        Method::Npo => {
            let reference = reference.ok_or_else(|| Error::InvalidArgument("NPO needs a reference model".into()))?;
            npo_loss(model, reference, batch, config.lambda, config.beta)
        }
    }
}
