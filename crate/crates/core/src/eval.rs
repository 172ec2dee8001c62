//! Evaluation metrics: KS forget quality over truth ratios, likelihood
//! multiple-choice accuracy, Min-k% membership scores and AUC, Rouge-L
//! recall, sentence BLEU and perplexity.
//!
//! Text metrics work on whitespace-split words of decoded text.

use std::collections::HashMap;
use std::hash::Hash;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{tokenizer, Sample, TinyLM, TokenSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Forget,
    Retain,
    Holdout,
    WorldFacts,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Forget => "forget",
            Split::Retain => "retain",
            Split::Holdout => "holdout",
            Split::WorldFacts => "worldfacts",
        }
    }
}

/// A QA item with its correct answer and distractors. Stored as text; the
/// token views are derived on demand (the alphabet is lossless).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalExample {
    pub id: String,
    pub split: Split,
    pub author: String,
    pub prompt: String,
    pub answer: String,
    pub perturbed: Vec<String>,
}

impl EvalExample {
    pub fn validate(&self) -> Result<()> {
        if self.perturbed.is_empty() {
            return Err(Error::InvalidArgument(format!("{}: no perturbed answers", self.id)));
        }
        if self.perturbed.iter().any(|p| p == &self.answer) {
            return Err(Error::InvalidArgument(format!("{}: perturbed answer equals the correct one", self.id)));
        }
        for text in std::iter::once(&self.prompt).chain(std::iter::once(&self.answer)).chain(&self.perturbed) {
            if let Some(c) = text.chars().find(|&c| !tokenizer::is_representable(&c.to_string())) {
                return Err(Error::UnknownCharacter(c));
            }
        }
        Ok(())
    }

    pub fn prompt_tokens(&self) -> Result<TokenSequence> {
        tokenizer::encode(&self.prompt)
    }

    /// Correct answer followed by EOS, as the model is trained on it.
    pub fn response_tokens(&self) -> Result<TokenSequence> {
        tokenizer::encode_response(&self.answer)
    }

    pub fn sample(&self) -> Result<Sample> {
        Ok(Sample::new(self.prompt_tokens()?, self.response_tokens()?))
    }

    /// `[correct, perturbed...]` as samples sharing the prompt.
    fn candidate_samples(&self) -> Result<Vec<Sample>> {
        let x = self.prompt_tokens()?;
        std::iter::once(&self.answer)
            .chain(&self.perturbed)
            .map(|a| Ok(Sample::new(x.clone(), tokenizer::encode_response(a)?)))
            .collect()
    }
}

/// NLLs of every candidate answer for every example, `out[i][0]` being the
/// correct one. One parallel batch over all candidates.
fn candidate_nlls(model: &TinyLM, examples: &[EvalExample]) -> Result<Vec<Vec<f64>>> {
    let mut flat = Vec::new();
    let mut counts = Vec::with_capacity(examples.len());
    for ex in examples {
        if ex.perturbed.is_empty() {
            return Err(Error::InvalidArgument(format!("{}: no perturbed answers", ex.id)));
        }
        let c = ex.candidate_samples()?;
        counts.push(c.len());
        flat.extend(c);
    }
    let nlls = model.batch_nll(&flat)?;
    let mut out = Vec::with_capacity(examples.len());
    let mut at = 0;
    for n in counts {
        out.push(nlls[at..at + n].to_vec());
        at += n;
    }
    Ok(out)
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// `P̄(correct) / mean_j P̄(perturbed_j)` from candidate NLLs, where
/// `P̄ = exp(-nll)`. Evaluated in log space.
fn ratio_from_nlls(nlls: &[f64]) -> f64 {
    let neg: Vec<f64> = nlls[1..].iter().map(|n| -n).collect();
    (-nlls[0] - log_mean_exp(&neg)).exp()
}

pub fn truth_ratio(model: &TinyLM, example: &EvalExample) -> Result<f64> {
    Ok(ratio_from_nlls(&candidate_nlls(model, std::slice::from_ref(example))?[0]))
}

pub fn truth_ratios(model: &TinyLM, examples: &[EvalExample]) -> Result<Vec<f64>> {
    Ok(candidate_nlls(model, examples)?.iter().map(|n| ratio_from_nlls(n)).collect())
}

/// Fraction of examples whose correct answer is strictly the most likely
/// candidate under per-token geometric-mean probability. Ties lose.
pub fn mc_accuracy(model: &TinyLM, examples: &[EvalExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("mc_accuracy needs examples".into()));
    }
    let nlls = candidate_nlls(model, examples)?;
    let hits = nlls.iter().filter(|n| n[1..].iter().all(|&p| n[0] < p)).count();
    Ok(hits as f64 / examples.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution,
/// `P(K > x) = 2 Σ_{k≥1} (-1)^{k-1} exp(-2k²x²)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.0 {
        // The alternating series converges slowly here; use the Jacobi
        // theta form of the CDF instead.
        let s = (2.0 * std::f64::consts::PI).sqrt() / x;
        let c = std::f64::consts::PI.powi(2) / (8.0 * x * x);
        let cdf: f64 = s * (1..=20).map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp()).sum::<f64>();
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test with the two-sided asymptotic p-value
/// evaluated at `sqrt(nm/(n+m))·D`.
pub fn ks_test(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("ks_test: NaN in sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = a[i].min(b[j]);
        while i < n && a[i] <= v {
            i += 1;
        }
        while j < m && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = (n * m) as f64 / (n + m) as f64;
    Ok(KsResult { statistic: d, p_value: kolmogorov_sf(en.sqrt() * d) })
}

/// `1 - p` of the KS test between forget and retain truth ratios.
pub fn forget_quality(model: &TinyLM, forget: &[EvalExample], retain: &[EvalExample]) -> Result<f64> {
    let f = truth_ratios(model, forget)?;
    let r = truth_ratios(model, retain)?;
    Ok(1.0 - ks_test(&f, &r)?.p_value)
}

/// Mean of the `max(1, floor(k%·n))` smallest values.
pub fn min_k_of(logprobs: &[f64], k_percent: f64) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::EmptyResponse);
    }
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::InvalidArgument(format!("k_percent must be in (0, 100], got {k_percent}")));
    }
    let mut v = logprobs.to_vec();
    v.sort_by(f64::total_cmp);
    // Small tolerance so that e.g. 30% of 10 is 3, not 2.
    let raw = k_percent / 100.0 * v.len() as f64;
    let k = ((raw + 1e-9).floor() as usize).clamp(1, v.len());
    Ok(v[..k].iter().sum::<f64>() / k as f64)
}

pub fn min_k_score(model: &TinyLM, x: &TokenSequence, y: &TokenSequence, k_percent: f64) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptyResponse);
    }
    min_k_of(&model.per_token_logprobs(x, y)?, k_percent)
}

pub fn min_k_scores(model: &TinyLM, examples: &[EvalExample], k_percent: f64) -> Result<Vec<f64>> {
    examples.par_iter().map(|ex| min_k_score(model, &ex.prompt_tokens()?, &ex.response_tokens()?, k_percent)).collect()
}

/// Probability that a random member outscores a random non-member, ties
/// counting one half. Exact pairwise count.
pub fn mia_auc(members: &[f64], nonmembers: &[f64]) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut wins = 0.0;
    for &m in members {
        for &n in nonmembers {
            if m > n {
                wins += 1.0;
            } else if m == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (members.len() * nonmembers.len()) as f64)
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l_recall<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::InvalidArgument("empty reference".into()));
    }
    Ok(lcs_len(hypothesis, reference) as f64 / reference.len() as f64)
}

pub fn rouge_l_recall_text(hypothesis: &str, reference: &str) -> Result<f64> {
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    rouge_l_recall(&h, &r)
}

fn ngram_counts<T: Eq + Hash>(s: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if s.len() >= n {
        for w in s.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU with uniform weights over orders `1..=max_n`, brevity
/// penalty, and add-one smoothing of orders ≥ 2 (numerator and
/// denominator). Orders whose smoothed precision is still zero drop out of
/// the geometric mean. Zero when there is no unigram overlap or the
/// hypothesis is empty.
pub fn bleu<T: Eq + Hash>(hypothesis: &[T], reference: &[T], max_n: usize) -> f64 {
    if hypothesis.is_empty() || max_n == 0 {
        return 0.0;
    }
    let w = 1.0 / max_n as f64;
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let hyp = ngram_counts(hypothesis, n);
        let refc = ngram_counts(reference, n);
        let total: usize = hyp.values().sum();
        let clipped: usize = hyp.iter().map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0))).sum();
        let (mut num, mut den) = (clipped as f64, total.max(1) as f64);
        if n == 1 && clipped == 0 {
            return 0.0;
        }
        if n > 1 {
            num += 1.0;
            den += 1.0;
        }
        if num > 0.0 {
            log_sum += w * (num / den).ln();
        }
    }
    let (h, r) = (hypothesis.len() as f64, reference.len() as f64);
    let bp = if h > r { 1.0 } else { (1.0 - r / h).exp() };
    bp * log_sum.exp()
}

pub fn bleu_text(hypothesis: &str, reference: &str) -> f64 {
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    bleu(&h, &r, 4)
}

/// `exp` of the token-weighted mean NLL, each sequence scored as a
/// continuation of its first token.
pub fn perplexity(model: &TinyLM, corpus: &[TokenSequence]) -> Result<f64> {
    let samples: Vec<Sample> = corpus
        .iter()
        .map(|s| {
            if s.len() < 2 {
                return Err(Error::InvalidArgument("perplexity needs sequences of length >= 2".into()));
            }
            Ok(Sample::new(TokenSequence::new(s.0[..1].to_vec()), TokenSequence::new(s.0[1..].to_vec())))
        })
        .collect::<Result<_>>()?;
    conditional_perplexity(model, &samples)
}

/// Perplexity of responses given their prompts, token-weighted.
pub fn conditional_perplexity(model: &TinyLM, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("perplexity needs a non-empty corpus".into()));
    }
    let nlls = model.batch_nll(samples)?;
    let tokens: usize = samples.iter().map(|s| s.response.len()).sum();
    let total: f64 = nlls.iter().zip(samples).map(|(n, s)| n * s.response.len() as f64).sum();
    Ok((total / tokens as f64).exp())
}

/// Greedy answer for a prompt, decoded up to (excluding) EOS.
pub fn generate_answer(model: &TinyLM, example: &EvalExample, max_new: usize) -> Result<String> {
    let x = example.prompt_tokens()?;
    let room = model.config().context_window.saturating_sub(x.len());
    let out = model.greedy_decode(&x, max_new.min(room))?;
    Ok(tokenizer::decode(&out.as_slice()[x.len()..]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub min_k_percent: f64,
    pub max_new_tokens: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { min_k_percent: 20.0, max_new_tokens: 24 }
    }
}

/// One row of the results table, efficacy block first, then utility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub forget_quality: f64,
    pub forget_acc: f64,
    pub rouge_forget: f64,
    pub mia_auc: f64,
    pub retain_acc: f64,
    pub rouge_retain: f64,
    pub holdout_acc: f64,
    pub bleu: f64,
    pub perplexity: f64,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 9] = [
        "forget_quality",
        "forget_acc",
        "rouge_forget",
        "mia_auc",
        "retain_acc",
        "rouge_retain",
        "holdout_acc",
        "bleu",
        "perplexity",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.forget_quality,
            self.forget_acc,
            self.rouge_forget,
            self.mia_auc,
            self.retain_acc,
            self.rouge_retain,
            self.holdout_acc,
            self.bleu,
            self.perplexity,
        ]
    }

    pub fn check_ranges(&self) -> Result<()> {
        let v = self.values();
        for (name, x) in Self::COLUMNS.iter().zip(v) {
            let ok = if *name == "perplexity" { x.is_finite() && x > 0.0 } else { (0.0..=1.0).contains(&x) };
            if !ok {
                return Err(Error::InvalidArgument(format!("{name} out of range: {x}")));
            }
        }
        Ok(())
    }
}

fn mean_generation_score(
    model: &TinyLM,
    examples: &[EvalExample],
    cfg: &EvalConfig,
    score: impl Fn(&str, &str) -> Result<f64> + Sync,
) -> Result<f64> {
    let v: Vec<f64> = examples
        .par_iter()
        .map(|ex| score(&generate_answer(model, ex, cfg.max_new_tokens)?, &ex.answer))
        .collect::<Result<_>>()?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Full metric row. MIA contrasts forget members with holdout non-members;
/// BLEU and Rouge-L compare greedy generations with the stored answers;
/// perplexity is of retain answers given their prompts.
pub fn evaluate(
    model: &TinyLM,
    forget: &[EvalExample],
    retain: &[EvalExample],
    holdout: &[EvalExample],
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let members = min_k_scores(model, forget, cfg.min_k_percent)?;
    let nonmembers = min_k_scores(model, holdout, cfg.min_k_percent)?;
    let retain_samples: Vec<Sample> = retain.iter().map(EvalExample::sample).collect::<Result<_>>()?;
    let report = MetricsReport {
        forget_quality: forget_quality(model, forget, retain)?,
        forget_acc: mc_accuracy(model, forget)?,
        rouge_forget: mean_generation_score(model, forget, cfg, rouge_l_recall_text)?,
        mia_auc: mia_auc(&members, &nonmembers)?,
        retain_acc: mc_accuracy(model, retain)?,
        rouge_retain: mean_generation_score(model, retain, cfg, rouge_l_recall_text)?,
        holdout_acc: mc_accuracy(model, holdout)?,
        bleu: mean_generation_score(model, forget, cfg, |h, r| Ok(bleu_text(h, r)))?,
        perplexity: conditional_perplexity(model, &retain_samples)?,
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, TinyLM};
    use crate::numerics::Seed;
    use crate::optim::{train, TrainConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn uniform() -> TinyLM {
        TinyLM::zeros(ModelConfig::default()).unwrap()
    }

    fn ex(prompt: &str, answer: &str, perturbed: &[&str]) -> EvalExample {
        EvalExample {
            id: format!("{prompt}{answer}"),
            split: Split::Retain,
            author: "A".into(),
            prompt: prompt.into(),
            answer: answer.into(),
            perturbed: perturbed.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn ks_trivial_cases() {
        let a: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let r = ks_test(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let b: Vec<f64> = a.iter().map(|x| x + 100.0).collect();
        let r = ks_test(&a, &b).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(r.p_value < 1e-10);
        assert!(ks_test(&[], &a).is_err());
    }

    #[test]
    fn ks_matches_frozen_reference() {
        #[derive(Deserialize)]
        struct Case {
            a: Vec<f64>,
            b: Vec<f64>,
            d: f64,
            p: f64,
        }
        let cases: Vec<Case> = serde_json::from_str(include_str!("../tests/golden/ks.json")).unwrap();
        assert_eq!(cases.len(), 10);
        for c in cases {
            let r = ks_test(&c.a, &c.b).unwrap();
            assert!((r.statistic - c.d).abs() < 1e-6, "D {} vs {}", r.statistic, c.d);
            assert!((r.p_value - c.p).abs() < 1e-4, "p {} vs {}", r.p_value, c.p);
        }
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // Both series are valid near the switch point.
        for x in [0.9, 1.0, 1.1] {
            let series: f64 = 2.0
                * (1..200)
                    .map(|k| if k % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * (k * k) as f64 * x * x).exp())
                    .sum::<f64>();
            assert!((kolmogorov_sf(x) - series).abs() < 1e-12);
        }
    }

    #[test]
    fn bleu_matches_frozen_reference() {
        #[derive(Deserialize)]
        struct Case {
            hypothesis: String,
            reference: String,
            bleu: f64,
        }
        let cases: Vec<Case> = serde_json::from_str(include_str!("../tests/golden/bleu.json")).unwrap();
        assert_eq!(cases.len(), 10);
        for c in cases {
            let got = bleu_text(&c.hypothesis, &c.reference);
            assert!((got - c.bleu).abs() < 1e-6, "{:?}: {got} vs {}", c.hypothesis, c.bleu);
        }
    }

    #[test]
    fn bleu_edges() {
        assert_eq!(bleu_text("a b c d e", "a b c d e"), 1.0);
        assert_eq!(bleu_text("x y z", "a b c"), 0.0);
        assert_eq!(bleu_text("", "a b c"), 0.0);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l_recall_text("the cat sat", "the dog sat").unwrap(), 2.0 / 3.0);
        assert_eq!(rouge_l_recall_text("a b", "a b").unwrap(), 1.0);
        assert_eq!(rouge_l_recall_text("x y", "a b").unwrap(), 0.0);
        assert!(rouge_l_recall_text("a", "").is_err());
    }

    fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
        // Longest subsequence of `a` (by bitmask) that is also a subsequence of `b`.
        let is_subseq = |s: &[u8]| {
            let mut it = b.iter();
            s.iter().all(|c| it.any(|d| d == c))
        };
        (0u32..1 << a.len())
            .filter_map(|mask| {
                let s: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
                is_subseq(&s).then_some(s.len())
            })
            .max()
            .unwrap()
    }

    #[test]
    fn lcs_matches_brute_force_on_small_alphabet() {
        let mut rng = Seed(8).rng(crate::numerics::Stream::Test);
        for _ in 0..300 {
            let la = rng.random_range(0..=8);
            let lb = rng.random_range(0..=8);
            let a: Vec<u8> = (0..la).map(|_| rng.random_range(0..3)).collect();
            let b: Vec<u8> = (0..lb).map(|_| rng.random_range(0..3)).collect();
            assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b), "{a:?} {b:?}");
        }
    }

    #[test]
    fn mia_examples() {
        assert_eq!(mia_auc(&[0.9, 0.8], &[0.85, 0.1]).unwrap(), 0.75);
        assert_eq!(mia_auc(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.5);
        assert_eq!(mia_auc(&[5.0, 6.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(mia_auc(&[], &[1.0]).is_err());
    }

    #[test]
    fn min_k_examples() {
        assert_eq!(min_k_of(&[-1.0, -3.0, -2.0], 34.0).unwrap(), -3.0);
        assert_eq!(min_k_of(&[-1.0, -3.0, -2.0], 100.0).unwrap(), -2.0);
        assert_eq!(min_k_of(&[-1.0, -3.0, -2.0], 67.0).unwrap(), -2.5);
        assert_eq!(min_k_of(&[-1.0, -3.0, -2.0], 66.0).unwrap(), -3.0);
        assert!(min_k_of(&[-1.0], 0.0).is_err());
        assert!(min_k_of(&[], 20.0).is_err());

        let m = TinyLM::zeros(ModelConfig::linear(4, 8)).unwrap();
        let x = TokenSequence::new(vec![1, 2]);
        let y = TokenSequence::new(vec![0, 3, 2]);
        for k in [10.0, 50.0, 100.0] {
            assert!((min_k_score(&m, &x, &y, k).unwrap() + 4f64.ln()).abs() < 1e-12);
        }
        let full = min_k_score(&m, &x, &y, 100.0).unwrap();
        assert!((full + m.sequence_nll(&x, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn uniform_model_metrics() {
        let m = uniform();
        let e = ex("Q: a? A: ", "abc", &["xyz", "pqr", "lmn"]);
        assert!((truth_ratio(&m, &e).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mc_accuracy(&m, &[e]).unwrap(), 0.0);
        let corpus = vec![tokenizer::encode("hello there").unwrap(), tokenizer::encode("ab").unwrap()];
        assert!((perplexity(&m, &corpus).unwrap() - 64.0).abs() < 1e-9);
    }

    #[test]
    fn truth_ratio_two_answer_swap() {
        let m = TinyLM::init(ModelConfig::default(), Seed(3)).unwrap();
        let e = ex("Q: b? A: ", "cat", &["dog"]);
        let swapped = ex("Q: b? A: ", "dog", &["cat"]);
        let r = truth_ratio(&m, &e).unwrap();
        let rs = truth_ratio(&m, &swapped).unwrap();
        assert!((r * rs - 1.0).abs() < 1e-12);
        assert!(r > 0.0);
    }

    #[test]
    fn perplexity_identity() {
        let m = TinyLM::init(ModelConfig::default(), Seed(4)).unwrap();
        let seqs = vec![tokenizer::encode("abc de").unwrap(), tokenizer::encode("Q: x").unwrap()];
        let mut lp = Vec::new();
        for s in &seqs {
            let x = TokenSequence::new(s.0[..1].to_vec());
            let y = TokenSequence::new(s.0[1..].to_vec());
            lp.extend(m.per_token_logprobs(&x, &y).unwrap());
        }
        let expect = (-lp.iter().sum::<f64>() / lp.len() as f64).exp();
        assert!((perplexity(&m, &seqs).unwrap() - expect).abs() < 1e-9);
    }

    fn overfit(examples: &[EvalExample]) -> TinyLM {
        let samples: Vec<Sample> = examples.iter().map(|e| e.sample().unwrap()).collect();
        let mut m = TinyLM::init(ModelConfig::default(), Seed(1)).unwrap();
        let cfg = TrainConfig { lr: 0.02, nll_threshold: 0.01, batch_size: 4, ..Default::default() };
        assert!(train(&mut m, &samples, &cfg).unwrap().converged);
        m
    }

    #[test]
    fn trained_model_metrics() {
        let examples = vec![
            ex("Q: Ada? A: ", "Oslo", &["Lima", "Riga"]),
            ex("Q: Bo? A: ", "poet", &["baker", "judge"]),
            ex("Q: Cy? A: ", "teal", &["ivory", "ochre"]),
        ];
        let m = overfit(&examples);
        assert_eq!(mc_accuracy(&m, &examples).unwrap(), 1.0);
        for e in &examples {
            assert!(truth_ratio(&m, e).unwrap() > 10.0);
            assert_eq!(generate_answer(&m, e, 10).unwrap(), e.answer);
        }
        // Distractors that are the trained answers.
        let adversarial: Vec<EvalExample> = examples
            .iter()
            .map(|e| EvalExample { answer: e.perturbed[0].clone(), perturbed: vec![e.answer.clone()], ..e.clone() })
            .collect();
        assert_eq!(mc_accuracy(&m, &adversarial).unwrap(), 0.0);
        let full: Vec<TokenSequence> = examples
            .iter()
            .map(|e| {
                let s = e.sample().unwrap();
                s.prompt.concat(&s.response)
            })
            .collect();
        let samples: Vec<Sample> = examples.iter().map(|e| e.sample().unwrap()).collect();
        assert!(conditional_perplexity(&m, &samples).unwrap() < 1.01);
        assert!(perplexity(&m, &full).unwrap() > 1.0);
    }

    #[test]
    fn forget_quality_cases() {
        let m = TinyLM::init(ModelConfig::default(), Seed(6)).unwrap();
        let set = vec![ex("Q: a? A: ", "x", &["y", "z"]), ex("Q: b? A: ", "yy", &["zz"])];
        assert_eq!(forget_quality(&m, &set, &set).unwrap(), 0.0);
    }

    #[test]
    fn report_columns() {
        assert_eq!(
            MetricsReport::COLUMNS.join(","),
            "forget_quality,forget_acc,rouge_forget,mia_auc,retain_acc,rouge_retain,holdout_acc,bleu,perplexity"
        );
    }

    proptest! {
        #[test]
        fn auc_complement(a in prop::collection::vec(-100i32..100, 1..12), b in prop::collection::vec(-100i32..100, 1..12)) {
            let a: Vec<f64> = a.iter().map(|&v| v as f64 * 2.0).collect();
            let b: Vec<f64> = b.iter().map(|&v| v as f64 * 2.0 + 1.0).collect();
            let s = mia_auc(&a, &b).unwrap() + mia_auc(&b, &a).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn min_k_monotone(v in prop::collection::vec(-20.0f64..0.0, 1..30), k1 in 1.0f64..100.0, k2 in 1.0f64..100.0) {
            let (lo, hi) = if k1 < k2 { (k1, k2) } else { (k2, k1) };
            prop_assert!(min_k_of(&v, lo).unwrap() <= min_k_of(&v, hi).unwrap() + 1e-12);
        }

        #[test]
        fn rouge_ignores_non_extending_duplicates(r in prop::collection::vec(0u8..4, 1..8), h in prop::collection::vec(0u8..4, 0..8)) {
            // Appending a token absent from the reference never changes the LCS.
            let base = rouge_l_recall(&h, &r).unwrap();
            let mut h2 = h.clone();
            h2.push(9);
            h2.insert(0, 9);
            prop_assert_eq!(rouge_l_recall(&h2, &r).unwrap(), base);
        }
    }
}
