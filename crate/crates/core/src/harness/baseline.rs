//! Input-based unlearning: leave the weights alone and prefix every query
//! with a system prompt asking the model not to answer about the forget
//! authors.

use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::eval::{evaluate, mia_auc, min_k_scores, EvalConfig, EvalExample, MetricsReport, Split};
use crate::model::{tokenizer, Sample, TinyLM};

pub const DEFAULT_SYSTEM_PROMPT: &str = "Please refrain from responding to the following authors' information: {names}";

/// Substitutes the comma-separated author names for `{names}`, ending the
/// prompt with a period. Templates without the placeholder are used verbatim.
pub fn render_system_prompt(template: &str, names: &[&str]) -> Result<String> {
    let text = if template.contains("{names}") {
        template.replace("{names}", &format!("{}.", names.join(", ")))
    } else {
        template.to_string()
    };
    if text.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    tokenizer::encode(&text)?;
    Ok(text)
}

/// Copies of `examples` with `system` and a space in front of each prompt.
pub fn with_system_prompt(examples: &[EvalExample], system: &str) -> Vec<EvalExample> {
    examples.iter().map(|e| EvalExample { prompt: format!("{system} {}", e.prompt), ..e.clone() }).collect()
}

fn check_fits(model: &TinyLM, examples: &[EvalExample]) -> Result<()> {
    let max = model.config().context_window;
    for e in examples {
        let x = e.prompt_tokens()?.len();
        for a in std::iter::once(&e.answer).chain(&e.perturbed) {
            let len = x + tokenizer::encode_response(a)?.len();
            if len > max {
                return Err(Error::ContextTooLong { len, max });
            }
        }
    }
    Ok(())
}

/// Evaluates `model` unchanged with the rendered system prompt in front of
/// every forget, retain and holdout query. Membership inference still scores
/// the bare queries: the prompt is a deployment-time defense and does not
/// change what an attacker with likelihood access observes.
pub fn input_based_baseline(
    model: &TinyLM,
    corpus: &Corpus,
    system_prompt: &str,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let system = render_system_prompt(system_prompt, &corpus.authors_in(Split::Forget))?;
    let forget = corpus.split(Split::Forget);
    let holdout = corpus.split(Split::Holdout);
    let pf = with_system_prompt(&forget, &system);
    let pr = with_system_prompt(&corpus.split(Split::Retain), &system);
    let ph = with_system_prompt(&holdout, &system);
    for set in [&pf, &pr, &ph] {
        check_fits(model, set)?;
    }
    let mut report = evaluate(model, &pf, &pr, &ph, cfg)?;
    report.mia_auc =
        mia_auc(&min_k_scores(model, &forget, cfg.min_k_percent)?, &min_k_scores(model, &holdout, cfg.min_k_percent)?)?;
    Ok(report)
}

/// Training pairs teaching a model to obey the system prompt: prefixed
/// forget queries map to refusals from the corpus's reject pool (cycled),
/// prefixed retain queries keep their answers.
pub fn prefix_convention_samples(corpus: &Corpus, template: &str) -> Result<Vec<Sample>> {
    let system = render_system_prompt(template, &corpus.authors_in(Split::Forget))?;
    let refusals = corpus.reject_pool.token_sequences()?;
    let mut out = Vec::new();
    for (i, e) in with_system_prompt(&corpus.split(Split::Forget), &system).iter().enumerate() {
        out.push(Sample::new(e.prompt_tokens()?, refusals[i % refusals.len()].clone()));
    }
    for e in with_system_prompt(&corpus.split(Split::Retain), &system) {
        out.push(e.sample()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_corpus;
    use crate::model::ModelConfig;
    use crate::numerics::Seed;

    #[test]
    fn renders_names() {
        let s = render_system_prompt(DEFAULT_SYSTEM_PROMPT, &["Ada Lee", "Bo Ng"]).unwrap();
        assert_eq!(s, "Please refrain from responding to the following authors' information: Ada Lee, Bo Ng.");
        assert!(render_system_prompt("bad\u{e9}", &[]).is_err());
    }

    #[test]
    fn baseline_leaves_parameters_and_mia_untouched() {
        let corpus = generate_corpus(Seed(3), 10, 2, 0.2).unwrap();
        let cfg = ModelConfig { context_window: 192, window: 16, hidden_dim: 8, ..ModelConfig::default() };
        let model = TinyLM::init(cfg, Seed(1)).unwrap();
        let before = model.clone();
        let eval = EvalConfig { min_k_percent: 20.0, max_new_tokens: 4 };
        let base = input_based_baseline(&model, &corpus, DEFAULT_SYSTEM_PROMPT, &eval).unwrap();
        assert_eq!(model, before);
        let plain = evaluate(
            &model,
            &corpus.split(Split::Forget),
            &corpus.split(Split::Retain),
            &corpus.split(Split::Holdout),
            &eval,
        )
        .unwrap();
        assert_eq!(base.mia_auc, plain.mia_auc);
        let forget = corpus.split(Split::Forget);
        let nll: Vec<f64> = model.batch_nll(&Corpus::samples(&forget).unwrap()).unwrap();
        assert_eq!(nll, before.batch_nll(&Corpus::samples(&forget).unwrap()).unwrap());
    }

    #[test]
    fn prompt_longer_than_context_is_rejected() {
        let corpus = generate_corpus(Seed(3), 10, 2, 0.2).unwrap();
        let model = TinyLM::init(ModelConfig::default(), Seed(1)).unwrap();
        let r = input_based_baseline(&model, &corpus, DEFAULT_SYSTEM_PROMPT, &EvalConfig::default());
        assert!(matches!(r, Err(Error::ContextTooLong { .. })));
    }
}
