//! One-shot influence unlearning.
//!
//! With `ℓ(θ, w) = Σ_i w_i ℓ_i(θ)` and `θ_o` the minimizer at `w = 𝟙`, the
//! update is
//!
//! ```text
//! θ_MU = θ_o + (H + δI)⁻¹ ∇ℓ(θ_o, 𝟙 − w_MU)
//! ```
//!
//! where `w_MU` is the retain indicator, so the gradient term sums the forget
//! examples' gradients. By default `H = ∇²ℓ(θ_o, 𝟙/N)`, the Hessian of the
//! mean loss. That choice comes from a first-order expansion in `w` and is
//! not exact even on quadratics once more than a vanishing fraction of the
//! data is removed. [`HessianWeighting::Retain`] uses the retain-set Hessian
//! `∇²ℓ(θ_o, w_MU)` instead, which turns the update into one exact Newton
//! step on the retain objective and so recovers the retrained minimizer on
//! least-squares instances.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Sample, TinyLM};
use crate::numerics::{ParamVector, Seed, Stream};
use crate::optim::{sophia_step_with_hessian, OptimizerState, SophiaConfig, StepMode};

/// Per-example weights in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataWeights(Vec<f64>);

impl DataWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidArgument(format!("weight {i} = {} outside [0, 1]", w[i])));
        }
        Ok(DataWeights(w))
    }

    pub fn ones(n: usize) -> Self {
        DataWeights(vec![1.0; n])
    }

    /// `𝟙_{D_r}`: one on retained examples, zero on `forget`.
    pub fn retain_indicator(n: usize, forget: &[usize]) -> Result<Self> {
        let mut w = vec![1.0; n];
        for &i in forget {
            if i >= n {
                return Err(Error::InvalidArgument(format!("forget index {i} out of range for {n} examples")));
            }
            w[i] = 0.0;
        }
        Ok(DataWeights(w))
    }

    /// `𝟙 − w`.
    pub fn complement(&self) -> Self {
        DataWeights(self.0.iter().map(|w| 1.0 - w).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-example least-squares losses `ℓ_i(θ) = ‖A_i θ − b_i‖² / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticInstance {
    a: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
    dim: usize,
}

impl QuadraticInstance {
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DVector<f64>>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::InvalidArgument("need one (A_i, b_i) pair per example".into()));
        }
        let dim = a[0].ncols();
        for (ai, bi) in a.iter().zip(&b) {
            if ai.ncols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: ai.ncols() });
            }
            if ai.nrows() != bi.len() {
                return Err(Error::DimensionMismatch { expected: ai.nrows(), found: bi.len() });
            }
        }
        Ok(QuadraticInstance { a, b, dim })
    }

    /// Scalar examples `ℓ_i = (θ − a_i)² / 2`.
    pub fn scalar(points: &[f64]) -> Result<Self> {
        let a = points.iter().map(|_| DMatrix::from_element(1, 1, 1.0)).collect();
        let b = points.iter().map(|&p| DVector::from_element(1, p)).collect();
        Self::new(a, b)
    }

    /// `n` examples of `rows` Gaussian rows each in dimension `d`.
    pub fn random(seed: Seed, index: u64, d: usize, n: usize, rows: usize) -> Result<Self> {
        let mut rng = seed.rng_indexed(Stream::Test, index);
        let a = (0..n).map(|_| DMatrix::from_fn(rows, d, |_, _| rng.sample::<f64, _>(StandardNormal))).collect();
        let b = (0..n).map(|_| DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(StandardNormal))).collect();
        Self::new(a, b)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    fn check(&self, theta: &DVector<f64>, w: &DataWeights) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: theta.len() });
        }
        if w.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: w.len() });
        }
        Ok(())
    }

    pub fn example_loss(&self, i: usize, theta: &DVector<f64>) -> f64 {
        (&self.a[i] * theta - &self.b[i]).norm_squared() / 2.0
    }

    /// `Σ_i w_i A_iᵀ(A_i θ − b_i)`.
    pub fn weighted_gradient(&self, theta: &DVector<f64>, w: &DataWeights) -> Result<DVector<f64>> {
        self.check(theta, w)?;
        let mut g = DVector::zeros(self.dim);
        for (i, &wi) in w.as_slice().iter().enumerate() {
            if wi != 0.0 {
                g += (self.a[i].transpose() * (&self.a[i] * theta - &self.b[i])) * wi;
            }
        }
        Ok(g)
    }

    /// `Σ_i w_i A_iᵀA_i` (independent of θ).
    pub fn weighted_hessian(&self, w: &DataWeights) -> Result<DMatrix<f64>> {
        if w.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: w.len() });
        }
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for (i, &wi) in w.as_slice().iter().enumerate() {
            if wi != 0.0 {
                h += self.a[i].transpose() * &self.a[i] * wi;
            }
        }
        Ok(h)
    }
}

/// `ℓ(θ, w) = Σ_i w_i ℓ_i(θ)`.
pub fn weighted_loss(theta: &DVector<f64>, w: &DataWeights, instance: &QuadraticInstance) -> Result<f64> {
    instance.check(theta, w)?;
    Ok(w.as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &wi)| wi != 0.0)
        .map(|(i, wi)| wi * instance.example_loss(i, theta))
        .sum())
}

/// Which Hessian the influence update inverts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HessianWeighting {
    /// `∇²ℓ(θ_o, 𝟙/N)`.
    #[default]
    Mean,
    /// `∇²ℓ(θ_o, w_MU)`: exact Newton step to the retain minimizer on quadratics.
    Retain,
}

/// Gradient-norm tolerance for accepting `θ_o` as the full-data minimizer.
pub const MINIMIZER_TOL: f64 = 1e-8;

/// `1e-4 · trace(H) / d`.
pub fn default_damping(h: &DMatrix<f64>) -> f64 {
    1e-4 * h.trace() / h.nrows() as f64
}

pub fn influence_unlearn(
    theta_o: &DVector<f64>,
    instance: &QuadraticInstance,
    forget: &[usize],
    damping: Option<f64>,
) -> Result<DVector<f64>> {
    influence_unlearn_with(theta_o, instance, forget, damping, HessianWeighting::Mean)
}

/// `damping = None` uses [`default_damping`]; `Some(0.0)` inverts `H` as is.
pub fn influence_unlearn_with(
    theta_o: &DVector<f64>,
    instance: &QuadraticInstance,
    forget: &[usize],
    damping: Option<f64>,
    weighting: HessianWeighting,
) -> Result<DVector<f64>> {
    let n = instance.len();
    let ones = DataWeights::ones(n);
    let gnorm = instance.weighted_gradient(theta_o, &ones)?.norm();
    if gnorm >= MINIMIZER_TOL {
        return Err(Error::NotAMinimizer(gnorm));
    }
    let w_mu = DataWeights::retain_indicator(n, forget)?;
    let g_forget = instance.weighted_gradient(theta_o, &w_mu.complement())?;
    if forget.is_empty() {
        return Ok(theta_o.clone());
    }
    let h = match weighting {
        HessianWeighting::Mean => instance.weighted_hessian(&DataWeights(vec![1.0 / n as f64; n]))?,
        HessianWeighting::Retain => instance.weighted_hessian(&w_mu)?,
    };
    let delta = match damping {
        Some(d) if d < 0.0 || !d.is_finite() => {
            return Err(Error::InvalidArgument(format!("damping must be >= 0, got {d}")))
        }
        Some(d) => d,
        None => default_damping(&h),
    };
    let mut m = h;
    for i in 0..m.nrows() {
        m[(i, i)] += delta;
    }
    let chol = Cholesky::new(m).ok_or(Error::SingularHessian)?;
    Ok(theta_o + chol.solve(&g_forget))
}

/// Exact minimizer of `Σ_{i ∈ retain} ℓ_i` via the normal equations.
pub fn exact_retrain_oracle(instance: &QuadraticInstance, retain: &[usize]) -> Result<DVector<f64>> {
    let mut w = vec![0.0; instance.len()];
    for &i in retain {
        if i >= instance.len() {
            return Err(Error::InvalidArgument(format!("retain index {i} out of range")));
        }
        w[i] = 1.0;
    }
    let w = DataWeights(w);
    let h = instance.weighted_hessian(&w)?;
    let rhs = -instance.weighted_gradient(&DVector::zeros(instance.dim()), &w)?;
    let chol = Cholesky::new(h).ok_or(Error::RankDeficient)?;
    Ok(chol.solve(&rhs))
}

/// The `w = 𝟙` minimizer.
pub fn full_minimizer(instance: &QuadraticInstance) -> Result<DVector<f64>> {
    exact_retrain_oracle(instance, &(0..instance.len()).collect::<Vec<_>>())
}

/// Forget/retain objective values reached by one-shot IU and by the
/// iterative second-order counterpart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceComparison {
    pub iu_forget: f64,
    pub iu_retain: f64,
    pub soul_forget: f64,
    pub soul_retain: f64,
}

/// Iterative counterpart on a quadratic: Sophia descent on the retain
/// objective with the exact Hessian diagonal as curvature (β1 = β2 = 0,
/// γ = 1, no clip), i.e. damped Jacobi–Newton steps. The step size `1/d`
/// keeps `η·λ_max(D⁻¹H) ≤ 1`, so the iteration converges.
pub fn iterative_retain_descent(
    theta_o: &DVector<f64>,
    instance: &QuadraticInstance,
    forget: &[usize],
    max_steps: usize,
) -> Result<DVector<f64>> {
    let w_mu = DataWeights::retain_indicator(instance.len(), forget)?;
    let h = instance.weighted_hessian(&w_mu)?;
    let diag = ParamVector::new(h.diagonal().iter().copied().collect())?;
    if let Some(i) = diag.iter().position(|&v| v <= 0.0) {
        return Err(Error::NonPositiveCurvature { index: i, value: diag[i] });
    }
    let cfg =
        SophiaConfig { beta1: 0.0, beta2: 0.0, gamma: 1.0, eps: 1e-300, clip: f64::INFINITY, hessian_interval: 1 };
    let lr = 1.0 / instance.dim() as f64;
    let mut theta = ParamVector::new(theta_o.iter().copied().collect())?;
    let mut state = OptimizerState::new(theta.dim());
    for _ in 0..max_steps {
        let t = DVector::from_column_slice(theta.as_slice());
        let g = instance.weighted_gradient(&t, &w_mu)?;
        if g.norm() < 1e-12 {
            break;
        }
        let g = ParamVector::new(g.iter().copied().collect())?;
        sophia_step_with_hessian(&mut state, &cfg, lr, &mut theta, &g, Some(&diag), StepMode::Descent)?;
    }
    Ok(DVector::from_column_slice(theta.as_slice()))
}

pub fn influence_vs_soul_report(
    instance: &QuadraticInstance,
    forget: &[usize],
    damping: Option<f64>,
    weighting: HessianWeighting,
    soul_steps: usize,
) -> Result<InfluenceComparison> {
    let theta_o = full_minimizer(instance)?;
    let iu = influence_unlearn_with(&theta_o, instance, forget, damping, weighting)?;
    let soul = iterative_retain_descent(&theta_o, instance, forget, soul_steps)?;
    let w_mu = DataWeights::retain_indicator(instance.len(), forget)?;
    let w_f = w_mu.complement();
    Ok(InfluenceComparison {
        iu_forget: weighted_loss(&iu, &w_f, instance)?,
        iu_retain: weighted_loss(&iu, &w_mu, instance)?,
        soul_forget: weighted_loss(&soul, &w_f, instance)?,
        soul_retain: weighted_loss(&soul, &w_mu, instance)?,
    })
}

/// Diagnostics of the language-model variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmInfluenceStats {
    pub damping: f64,
    pub update_norm: f64,
    pub update_max_abs: f64,
}

/// Influence unlearning on the toy LM with the diagonal empirical-Fisher
/// estimate `H ≈ (1/N) Σ_i g_i ⊙ g_i` in place of the Hessian, `g_i` the
/// gradient of example `i`'s NLL. No exactness is claimed here.
pub fn influence_unlearn_lm(
    model: &TinyLM,
    train: &[Sample],
    forget: &[usize],
    damping: Option<f64>,
) -> Result<(TinyLM, LmInfluenceStats)> {
    let n = train.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let mut is_forget = vec![false; n];
    for &i in forget {
        if i >= n {
            return Err(Error::InvalidArgument(format!("forget index {i} out of range for {n} samples")));
        }
        is_forget[i] = true;
    }
    let dim = model.params().dim();
    // Fixed chunking and a sequential fold keep the sums bitwise reproducible.
    let partials: Vec<(Vec<f64>, Vec<f64>)> = train
        .par_chunks(8)
        .enumerate()
        .map(|(c, chunk)| {
            let mut h = vec![0.0; dim];
            let mut gf = vec![0.0; dim];
            for (k, s) in chunk.iter().enumerate() {
                let (_, g) = model.weighted_grad(std::slice::from_ref(s), &[1.0])?;
                for (hj, gj) in h.iter_mut().zip(g.iter()) {
                    *hj += gj * gj;
                }
                if is_forget[c * 8 + k] {
                    for (fj, gj) in gf.iter_mut().zip(g.iter()) {
                        *fj += gj;
                    }
                }
            }
            Ok((h, gf))
        })
        .collect::<Result<_>>()?;
    let mut h = vec![0.0; dim];
    let mut gf = vec![0.0; dim];
    for (ph, pf) in partials {
        for j in 0..dim {
            h[j] += ph[j];
            gf[j] += pf[j];
        }
    }
    h.iter_mut().for_each(|v| *v /= n as f64);
    let delta = match damping {
        Some(d) if d < 0.0 || !d.is_finite() => {
            return Err(Error::InvalidArgument(format!("damping must be >= 0, got {d}")))
        }
        Some(d) => d,
        None => 1e-4 * h.iter().sum::<f64>() / dim as f64,
    };
    let mut update = vec![0.0; dim];
    for j in 0..dim {
        let denom = h[j] + delta;
        if gf[j] != 0.0 {
            if denom <= 0.0 {
                return Err(Error::SingularHessian);
            }
            update[j] = gf[j] / denom;
        }
    }
    let update = ParamVector::from(update);
    let stats = LmInfluenceStats { damping: delta, update_norm: update.norm(), update_max_abs: update.max_abs() };
    let unlearned = model.with_params(model.params().add(&update))?;
    unlearned.params().check_finite("influence update")?;
    Ok((unlearned, stats))
}
