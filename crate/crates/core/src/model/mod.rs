//! Tiny causal token-prediction model with exact analytic gradients.
//!
//! Two architectures share one parameter vector layout convention:
//!
//! * [`Arch::Mlp`]: for the token at position `r`, the embeddings of the
//!   `window` most recent tokens (positions `r - W + 1 ..= r`, zero vectors
//!   before the sequence start) are concatenated and passed through
//!   `depth - 1` affine+tanh layers and a final affine layer producing logits
//!   for position `r + 1`.
//! * [`Arch::Linear`]: a bigram logit table; row `r` of the logits is the
//!   table row of token `r`.
//!
//! Layout of the MLP parameter vector: embedding `V×E`, then for each layer
//! its weight matrix (row-major, `out×in`) followed by its bias.

pub mod checkpoint;
pub mod tokenizer;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamVector, Seed, Stream};
pub use tokenizer::{TokenSequence, EOS, VOCAB_SIZE};

/// Per-example gradients are accumulated in chunks of this many examples,
/// then chunks are summed in index order. The reduction order therefore does
/// not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Linear,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub vocab_size: usize,
    /// Maximum `|x| + |y|`.
    pub context_window: usize,
    /// Number of trailing tokens the MLP sees; must not exceed `context_window`.
    pub window: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::Mlp,
            vocab_size: VOCAB_SIZE,
            context_window: 32,
            window: 32,
            embed_dim: 8,
            hidden_dim: 32,
            depth: 2,
        }
    }
}

impl ModelConfig {
    pub fn linear(vocab_size: usize, context_window: usize) -> Self {
        ModelConfig { arch: Arch::Linear, vocab_size, context_window, window: 1, embed_dim: 0, hidden_dim: 0, depth: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("model config: {m}")));
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        if self.context_window == 0 {
            return bad("context_window must be positive");
        }
        if self.arch == Arch::Mlp {
            if self.embed_dim == 0 || self.hidden_dim == 0 {
                return bad("embed_dim and hidden_dim must be positive");
            }
            if self.depth < 2 {
                return bad("an MLP needs depth >= 2");
            }
            if self.window == 0 || self.window > self.context_window {
                return bad("window must be in 1..=context_window");
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    fn layout(&self) -> Layout {
        let v = self.vocab_size;
        match self.arch {
            Arch::Linear => Layout { embed: 0, layers: Vec::new(), total: v * v },
            Arch::Mlp => {
                let mut offset = v * self.embed_dim;
                let mut layers = Vec::with_capacity(self.depth);
                let mut fan_in = self.window * self.embed_dim;
                for l in 0..self.depth {
                    let rows = if l + 1 == self.depth { v } else { self.hidden_dim };
                    let w = offset;
                    let b = w + rows * fan_in;
                    layers.push(Dense { w, b, rows, cols: fan_in });
                    offset = b + rows;
                    fan_in = rows;
                }
                Layout { embed: 0, layers, total: offset }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    embed: usize,
    layers: Vec<Dense>,
    total: usize,
}

/// A `(prompt, response)` pair: the conditioning text `x` and the scored text `y`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub prompt: TokenSequence,
    pub response: TokenSequence,
}

impl Sample {
    pub fn new(prompt: TokenSequence, response: TokenSequence) -> Self {
        Sample { prompt, response }
    }
}

#[derive(Clone, Debug)]
pub struct TinyLM {
    config: ModelConfig,
    params: ParamVector,
    layout: Layout,
}

impl PartialEq for TinyLM {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

/// Frozen copy of a model captured at the start of unlearning.
#[derive(Clone, Debug)]
pub struct ReferenceModel(TinyLM);

impl ReferenceModel {
    pub fn capture(model: &TinyLM) -> Self {
        ReferenceModel(model.clone())
    }

    pub fn model(&self) -> &TinyLM {
        &self.0
    }
}

/// Scratch buffers for one position's forward/backward pass.
struct Workspace {
    input: Vec<f64>,
    acts: Vec<Vec<f64>>,
    logits: Vec<f64>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl TinyLM {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let n = config.param_count();
        Ok(Self::from_parts_unchecked(config, ParamVector::zeros(n)))
    }

    /// Embeddings and weights uniform in (−0.1, 0.1), biases zero.
    pub fn init(config: ModelConfig, seed: Seed) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = seed.rng(Stream::Init);
        let layout = model.layout.clone();
        let p = model.params.as_mut_slice();
        match model.config.arch {
            Arch::Linear => p.iter_mut().for_each(|x| *x = rng.random_range(-0.1..0.1)),
            Arch::Mlp => {
                let v = model.config.vocab_size;
                let e = model.config.embed_dim;
                p[layout.embed..layout.embed + v * e].iter_mut().for_each(|x| *x = rng.random_range(-0.1..0.1));
                for d in &layout.layers {
                    p[d.w..d.b].iter_mut().for_each(|x| *x = rng.random_range(-0.1..0.1));
                }
            }
        }
        Ok(model)
    }

    pub fn from_params(config: ModelConfig, params: ParamVector) -> Result<Self> {
        config.validate()?;
        params.check_dim(config.param_count())?;
        params.check_finite("model parameters")?;
        Ok(Self::from_parts_unchecked(config, params))
    }

    fn from_parts_unchecked(config: ModelConfig, params: ParamVector) -> Self {
        let layout = config.layout();
        TinyLM { config, params, layout }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// Replaces the parameters; the dimension must not change.
    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        params.check_dim(self.params.dim())?;
        params.check_finite("model parameters")?;
        self.params = params;
        Ok(())
    }

    pub fn with_params(&self, params: ParamVector) -> Result<TinyLM> {
        let mut m = self.clone();
        m.set_params(params)?;
        Ok(m)
    }

    fn workspace(&self) -> Workspace {
        let c = &self.config;
        let acts = match c.arch {
            Arch::Linear => Vec::new(),
            Arch::Mlp => (0..c.depth - 1).map(|_| vec![0.0; c.hidden_dim]).collect(),
        };
        Workspace {
            input: vec![0.0; c.window * c.embed_dim],
            acts,
            logits: vec![0.0; c.vocab_size],
            delta: vec![0.0; c.vocab_size.max(c.hidden_dim)],
            delta_next: vec![0.0; c.vocab_size.max(c.hidden_dim).max(c.window * c.embed_dim)],
        }
    }

    fn check_sequence(&self, seq: &[u32]) -> Result<()> {
        if seq.len() > self.config.context_window {
            return Err(Error::ContextTooLong { len: seq.len(), max: self.config.context_window });
        }
        let vocab = self.config.vocab_size;
        match seq.iter().find(|&&t| t as usize >= vocab) {
            Some(&token) => Err(Error::TokenOutOfRange { token, vocab }),
            None => Ok(()),
        }
    }

    fn check_pair(&self, x: &TokenSequence, y: &TokenSequence) -> Result<()> {
        if y.is_empty() {
            return Err(Error::EmptyResponse);
        }
        if x.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        if x.len() + y.len() > self.config.context_window {
            return Err(Error::ContextTooLong { len: x.len() + y.len(), max: self.config.context_window });
        }
        x.check_vocab(self.config.vocab_size)?;
        y.check_vocab(self.config.vocab_size)
    }

    /// Computes the logits for the token following `seq[pos]` into `ws.logits`.
    fn position_forward(&self, seq: &[u32], pos: usize, ws: &mut Workspace) {
        let p = self.params.as_slice();
        let v = self.config.vocab_size;
        match self.config.arch {
            Arch::Linear => {
                let row = seq[pos] as usize * v;
                ws.logits.copy_from_slice(&p[row..row + v]);
            }
            Arch::Mlp => {
                let layout = &self.layout;
                let c = self.config.window;
                let e = self.config.embed_dim;
                let first_slot = (c - 1).saturating_sub(pos);
                ws.input[..first_slot * e].iter_mut().for_each(|x| *x = 0.0);
                for slot in first_slot..c {
                    let tok = seq[pos + slot + 1 - c] as usize;
                    let src = layout.embed + tok * e;
                    ws.input[slot * e..(slot + 1) * e].copy_from_slice(&p[src..src + e]);
                }
                let start_col = first_slot * e;
                let n_layers = layout.layers.len();
                for (l, d) in layout.layers.iter().enumerate() {
                    let mut out = std::mem::take(if l + 1 == n_layers { &mut ws.logits } else { &mut ws.acts[l] });
                    let (input, col0): (&[f64], usize) =
                        if l == 0 { (&ws.input, start_col) } else { (&ws.acts[l - 1], 0) };
                    for (r, o) in out.iter_mut().enumerate().take(d.rows) {
                        let wrow = &p[d.w + r * d.cols + col0..d.w + (r + 1) * d.cols];
                        let dot: f64 = wrow.iter().zip(&input[col0..]).map(|(a, b)| a * b).sum();
                        let a = p[d.b + r] + dot;
                        *o = if l + 1 == n_layers { a } else { a.tanh() };
                    }
                    if l + 1 == n_layers {
                        ws.logits = out;
                    } else {
                        ws.acts[l] = out;
                    }
                }
            }
        }
    }

    /// Backpropagates `ws.delta[..V]` (dLoss/dlogits) of the last
    /// `position_forward` call into `grad`.
    fn position_backward(&self, seq: &[u32], pos: usize, ws: &mut Workspace, grad: &mut [f64]) {
        let p = self.params.as_slice();
        let v = self.config.vocab_size;
        match self.config.arch {
            Arch::Linear => {
                let row = seq[pos] as usize * v;
                for (g, d) in grad[row..row + v].iter_mut().zip(&ws.delta[..v]) {
                    *g += d;
                }
            }
            Arch::Mlp => {
                let layout = &self.layout;
                let c = self.config.window;
                let e = self.config.embed_dim;
                let first_slot = (c - 1).saturating_sub(pos);
                let start_col = first_slot * e;
                let n_layers = layout.layers.len();
                for l in (0..n_layers).rev() {
                    let d = layout.layers[l];
                    let (input, col0): (&[f64], usize) =
                        if l == 0 { (&ws.input, start_col) } else { (&ws.acts[l - 1], 0) };
                    let delta = &ws.delta[..d.rows];
                    for (r, &dr) in delta.iter().enumerate() {
                        if dr == 0.0 {
                            continue;
                        }
                        grad[d.b + r] += dr;
                        let grow = &mut grad[d.w + r * d.cols + col0..d.w + (r + 1) * d.cols];
                        for (g, x) in grow.iter_mut().zip(&input[col0..]) {
                            *g += dr * x;
                        }
                    }
                    // dLoss/dinput
                    let next = &mut ws.delta_next[..d.cols - col0];
                    next.iter_mut().for_each(|x| *x = 0.0);
                    for (r, &dr) in delta.iter().enumerate() {
                        if dr == 0.0 {
                            continue;
                        }
                        let wrow = &p[d.w + r * d.cols + col0..d.w + (r + 1) * d.cols];
                        for (n, w) in next.iter_mut().zip(wrow) {
                            *n += dr * w;
                        }
                    }
                    if l > 0 {
                        let act = &ws.acts[l - 1];
                        for (i, n) in next.iter().enumerate() {
                            ws.delta[i] = n * (1.0 - act[i] * act[i]);
                        }
                    } else {
                        for slot in first_slot..c {
                            let tok = seq[pos + slot + 1 - c] as usize;
                            let dst = layout.embed + tok * e;
                            let src = &ws.delta_next[(slot - first_slot) * e..(slot - first_slot + 1) * e];
                            for (g, s) in grad[dst..dst + e].iter_mut().zip(src) {
                                *g += s;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Logits for every position of `context`; row `r` scores the token at `r + 1`.
    pub fn forward_logits(&self, context: &TokenSequence) -> Result<Vec<Vec<f64>>> {
        self.check_sequence(context.as_slice())?;
        let mut ws = self.workspace();
        Ok((0..context.len())
            .map(|pos| {
                self.position_forward(context.as_slice(), pos, &mut ws);
                ws.logits.clone()
            })
            .collect())
    }

    /// `log p(y_t | x, y_<t)` for each response token.
    pub fn per_token_logprobs(&self, x: &TokenSequence, y: &TokenSequence) -> Result<Vec<f64>> {
        self.check_pair(x, y)?;
        let seq = x.concat(y);
        let mut ws = self.workspace();
        Ok((0..y.len())
            .map(|t| {
                let pos = x.len() + t - 1;
                self.position_forward(seq.as_slice(), pos, &mut ws);
                log_softmax_at(&ws.logits, y.0[t] as usize)
            })
            .collect())
    }

    /// Mean per-token negative log-likelihood of `y` given `x`.
    pub fn sequence_nll(&self, x: &TokenSequence, y: &TokenSequence) -> Result<f64> {
        let lp = self.per_token_logprobs(x, y)?;
        Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
    }

    /// Per-sample mean NLL, evaluated in parallel.
    pub fn batch_nll(&self, batch: &[Sample]) -> Result<Vec<f64>> {
        batch.par_iter().map(|s| self.sequence_nll(&s.prompt, &s.response)).collect()
    }

    /// Accumulates `scale · ∇ NLL(y|x)` into `grad` and returns the NLL.
    fn accumulate_grad(&self, s: &Sample, scale: f64, ws: &mut Workspace, grad: &mut [f64]) -> f64 {
        let seq = s.prompt.concat(&s.response);
        let n = s.response.len();
        let per_tok = scale / n as f64;
        let v = self.config.vocab_size;
        let mut nll = 0.0;
        for t in 0..n {
            let pos = s.prompt.len() + t - 1;
            let target = s.response.0[t] as usize;
            self.position_forward(seq.as_slice(), pos, ws);
            let max = ws.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (d, &l) in ws.delta[..v].iter_mut().zip(&ws.logits) {
                *d = (l - max).exp();
                z += *d;
            }
            nll -= ws.logits[target] - max - z.ln();
            if per_tok != 0.0 {
                for d in ws.delta[..v].iter_mut() {
                    *d *= per_tok / z;
                }
                ws.delta[target] -= per_tok;
                self.position_backward(seq.as_slice(), pos, ws, grad);
            }
        }
        nll / n as f64
    }

    /// Returns per-sample NLLs and `Σ_i weights[i] · ∇ NLL_i`.
    pub fn weighted_grad(&self, batch: &[Sample], weights: &[f64]) -> Result<(Vec<f64>, ParamVector)> {
        if weights.len() != batch.len() {
            return Err(Error::DimensionMismatch { expected: batch.len(), found: weights.len() });
        }
        for s in batch {
            self.check_pair(&s.prompt, &s.response)?;
        }
        let dim = self.params.dim();
        let partials: Vec<(Vec<f64>, Vec<f64>)> = batch
            .par_chunks(GRAD_CHUNK)
            .zip(weights.par_chunks(GRAD_CHUNK))
            .map(|(samples, ws_)| {
                let mut ws = self.workspace();
                let mut grad = vec![0.0; dim];
                let nlls =
                    samples.iter().zip(ws_).map(|(s, &w)| self.accumulate_grad(s, w, &mut ws, &mut grad)).collect();
                (nlls, grad)
            })
            .collect();
        let mut total = vec![0.0; dim];
        let mut nlls = Vec::with_capacity(batch.len());
        for (n, g) in partials {
            nlls.extend(n);
            for (t, x) in total.iter_mut().zip(&g) {
                *t += x;
            }
        }
        Ok((nlls, ParamVector::from(total)))
    }

    /// Mean NLL of the batch and its gradient.
    pub fn nll_and_grad(&self, batch: &[Sample]) -> Result<(f64, ParamVector)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let w = vec![1.0 / batch.len() as f64; batch.len()];
        let (nlls, g) = self.weighted_grad(batch, &w)?;
        Ok((nlls.iter().sum::<f64>() / nlls.len() as f64, g))
    }

    /// Gradient of the batch-mean `sequence_nll`.
    pub fn grad_sequence_nll(&self, batch: &[Sample]) -> Result<ParamVector> {
        self.nll_and_grad(batch).map(|(_, g)| g)
    }

    /// Appends argmax tokens (lowest id wins ties) until `max_new` tokens, an
    /// end-of-sequence token (kept in the output), or the context window is full.
    pub fn greedy_decode(&self, prompt: &TokenSequence, max_new: usize) -> Result<TokenSequence> {
        if prompt.is_empty() && max_new > 0 {
            return Err(Error::EmptyPrompt);
        }
        self.check_sequence(prompt.as_slice())?;
        let mut seq = prompt.0.clone();
        let mut ws = self.workspace();
        for _ in 0..max_new {
            if seq.len() >= self.config.context_window {
                break;
            }
            self.position_forward(&seq, seq.len() - 1, &mut ws);
            let next = argmax_lowest(&ws.logits) as u32;
            seq.push(next);
            if next == EOS {
                break;
            }
        }
        Ok(TokenSequence(seq))
    }
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `log softmax(logits)[target]`, stabilized by the max logit.
pub fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    logits[target] - max - z.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_gradient;

    fn toks(v: &[u32]) -> TokenSequence {
        TokenSequence(v.to_vec())
    }

    fn small_mlp() -> ModelConfig {
        ModelConfig {
            arch: Arch::Mlp,
            vocab_size: 7,
            context_window: 6,
            window: 4,
            embed_dim: 3,
            hidden_dim: 4,
            depth: 3,
        }
    }

    /// Independent softmax: normalizes exp(logits) directly, no max shift.
    fn naive_log_prob(logits: &[f64], target: usize) -> f64 {
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        (logits[target].exp() / z).ln()
    }

    #[test]
    fn param_counts() {
        let c = ModelConfig::default();
        let expected = 64 * 8 + (32 * 8 * 32 + 32) + (64 * 32 + 64);
        assert_eq!(c.param_count(), expected);
        assert_eq!(ModelConfig::linear(5, 4).param_count(), 25);
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let m = TinyLM::zeros(ModelConfig::default()).unwrap();
        let logits = m.forward_logits(&toks(&[1, 2, 3])).unwrap();
        assert_eq!(logits.len(), 3);
        assert!(logits.iter().all(|r| r.len() == 64 && r.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn context_too_long_is_rejected() {
        let m = TinyLM::zeros(ModelConfig { context_window: 3, window: 3, ..ModelConfig::default() }).unwrap();
        assert!(matches!(m.forward_logits(&toks(&[1, 2, 3, 4])), Err(Error::ContextTooLong { len: 4, max: 3 })));
    }

    #[test]
    fn linear_selects_table_row() {
        // Hand-set 2x2 table: row 0 = [0.5, -1.0], row 1 = [2.0, 3.0].
        let cfg = ModelConfig::linear(2, 4);
        let m = TinyLM::from_params(cfg, ParamVector::from(vec![0.5, -1.0, 2.0, 3.0])).unwrap();
        assert_eq!(m.forward_logits(&toks(&[0])).unwrap(), vec![vec![0.5, -1.0]]);
        assert_eq!(m.forward_logits(&toks(&[1, 0])).unwrap(), vec![vec![2.0, 3.0], vec![0.5, -1.0]]);
        // One-token response after context [0]: log-softmax of row 0 at target 1.
        let lp = m.per_token_logprobs(&toks(&[0]), &toks(&[1])).unwrap();
        let by_hand = -1.0 - ((0.5f64).exp() + (-1.0f64).exp()).ln();
        assert!((lp[0] - by_hand).abs() < 1e-15);
    }

    #[test]
    fn uniform_model_nll_is_ln_v() {
        let m = TinyLM::zeros(ModelConfig { vocab_size: 4, ..ModelConfig::default() }).unwrap();
        let nll = m.sequence_nll(&toks(&[0, 1]), &toks(&[2, 3, 1])).unwrap();
        assert!((nll - 4f64.ln()).abs() < 1e-15);
        let lp = m.per_token_logprobs(&toks(&[0]), &toks(&[2, 3, 1])).unwrap();
        assert!(lp.iter().all(|&x| (x + 4f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn empty_response_and_prompt_errors() {
        let m = TinyLM::zeros(small_mlp()).unwrap();
        assert!(matches!(m.sequence_nll(&toks(&[1]), &toks(&[])), Err(Error::EmptyResponse)));
        assert!(matches!(m.sequence_nll(&toks(&[]), &toks(&[1])), Err(Error::EmptyPrompt)));
        assert!(matches!(m.sequence_nll(&toks(&[9]), &toks(&[1])), Err(Error::TokenOutOfRange { token: 9, .. })));
    }

    #[test]
    fn nll_matches_independent_softmax() {
        let cfg = small_mlp();
        for case in 0..10u64 {
            let m = TinyLM::init(cfg.clone(), Seed(100 + case)).unwrap();
            let mut rng = Seed(case).rng(Stream::Test);
            let x: Vec<u32> = (0..rng.random_range(1..3)).map(|_| rng.random_range(0..7)).collect();
            let y: Vec<u32> = (0..rng.random_range(1..3)).map(|_| rng.random_range(0..7)).collect();
            let seq = toks(&x).concat(&toks(&y));
            let logits = m.forward_logits(&seq).unwrap();
            let expected: f64 =
                -(0..y.len()).map(|t| naive_log_prob(&logits[x.len() + t - 1], y[t] as usize)).sum::<f64>()
                    / y.len() as f64;
            let got = m.sequence_nll(&toks(&x), &toks(&y)).unwrap();
            assert!((got - expected).abs() < 1e-12, "case {case}: {got} vs {expected}");
        }
    }

    #[test]
    fn logprobs_mean_is_negative_nll() {
        let m = TinyLM::init(small_mlp(), Seed(3)).unwrap();
        let (x, y) = (toks(&[1, 2]), toks(&[3, 4, 5]));
        let lp = m.per_token_logprobs(&x, &y).unwrap();
        let mean = lp.iter().sum::<f64>() / 3.0;
        assert!((mean + m.sequence_nll(&x, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn probabilities_normalize() {
        let m = TinyLM::init(small_mlp(), Seed(4)).unwrap();
        let x = toks(&[1, 2, 3]);
        for target_pos in 0..2 {
            let total: f64 = (0..7u32)
                .map(|v| {
                    let mut y = vec![2u32; target_pos];
                    y.push(v);
                    m.per_token_logprobs(&x, &toks(&y)).unwrap()[target_pos].exp()
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    fn random_batch(seed: u64, vocab: u32, n: usize) -> Vec<Sample> {
        let mut rng = Seed(seed).rng(Stream::Test);
        (0..n)
            .map(|_| {
                let x: Vec<u32> = (0..rng.random_range(1..3)).map(|_| rng.random_range(0..vocab)).collect();
                let y: Vec<u32> = (0..rng.random_range(1..3)).map(|_| rng.random_range(0..vocab)).collect();
                Sample::new(toks(&x), toks(&y))
            })
            .collect()
    }

    pub(crate) fn max_rel_err(a: &ParamVector, b: &ParamVector) -> f64 {
        let scale = a.max_abs().max(b.max_abs()).max(1e-12);
        a.sub(b).max_abs() / scale
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for case in 0..20u64 {
            let cfg = small_mlp();
            let m = TinyLM::init(cfg.clone(), Seed(200 + case)).unwrap();
            // Larger weights so that tanh curvature matters.
            let m = m.with_params(m.params().scale(5.0)).unwrap();
            let batch = random_batch(case, 7, 3);
            let g = m.grad_sequence_nll(&batch).unwrap();
            let f = |p: &ParamVector| {
                let mm = m.with_params(p.clone()).unwrap();
                let n = mm.batch_nll(&batch).unwrap();
                n.iter().sum::<f64>() / n.len() as f64
            };
            let fd = finite_diff_gradient(f, m.params(), 1e-6).unwrap();
            let err = max_rel_err(&g, &fd);
            assert!(err < 1e-5, "case {case}: rel err {err}");
        }
    }

    #[test]
    fn linear_gradient_matches_and_dead_rows_are_zero() {
        let cfg = ModelConfig::linear(5, 6);
        let m = TinyLM::init(cfg, Seed(9)).unwrap();
        // Token 4 never appears as a context token.
        let batch = vec![Sample::new(toks(&[0, 1]), toks(&[2, 4])), Sample::new(toks(&[3]), toks(&[1]))];
        let g = m.grad_sequence_nll(&batch).unwrap();
        assert!(g.as_slice()[20..25].iter().all(|&x| x == 0.0));
        let f = |p: &ParamVector| {
            let mm = m.with_params(p.clone()).unwrap();
            let n = mm.batch_nll(&batch).unwrap();
            n.iter().sum::<f64>() / n.len() as f64
        };
        let fd = finite_diff_gradient(f, m.params(), 1e-6).unwrap();
        assert!(max_rel_err(&g, &fd) < 1e-6);
    }

    #[test]
    fn greedy_decode_edge_cases() {
        let m = TinyLM::zeros(ModelConfig::default()).unwrap();
        let p = toks(&[5, 6]);
        assert_eq!(m.greedy_decode(&p, 0).unwrap(), p);
        assert_eq!(m.greedy_decode(&p, 3).unwrap(), toks(&[5, 6, 0, 0, 0]));
        // Stops at the window.
        let short = TinyLM::zeros(ModelConfig { context_window: 4, window: 4, ..ModelConfig::default() }).unwrap();
        assert_eq!(short.greedy_decode(&p, 10).unwrap().len(), 4);
    }

    #[test]
    fn computations_are_deterministic() {
        let m = TinyLM::init(small_mlp(), Seed(11)).unwrap();
        let batch = random_batch(77, 7, 20);
        let a = m.nll_and_grad(&batch).unwrap();
        let b = m.nll_and_grad(&batch).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = TinyLM::init(ModelConfig::default(), Seed(1)).unwrap();
        let b = TinyLM::init(ModelConfig::default(), Seed(1)).unwrap();
        assert_eq!(a.params(), b.params());
        assert!(a.params().max_abs() < 0.1);
    }
}
