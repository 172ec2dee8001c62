//! Experiment configuration. Every field has a default; files are TOML and
//! may specify any subset. The resolved configuration is written next to
//! each run's outputs.
//!
//! ```toml
//! seed = 42
//!
//! [data]
//! n_authors = 40
//! qa_per_author = 10
//! forget_ratio = 0.1
//! # corpus_path = "corpus.jsonl"   # load instead of generating
//!
//! [unlearn]
//! method = "graddiff"       # ga | graddiff | po | npo
//! optimizer = "so"          # fo (AdamW) | so (Sophia) | iu (one-shot influence)
//! epochs = 5
//! lr_multiplier = 4.0       # applied to the tuned TOFU rates
//! # lr = 2e-5               # overrides the table rate and multiplier
//! # lambda = 2.0            # defaults per method and optimizer
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::CorpusSpec;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::losses::{Method, MethodConfig};
use crate::model::{Arch, ModelConfig};
use crate::optim::{AdamWConfig, OptimizerKind, Schedule, SophiaConfig};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "UNLEARN_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

/// Output root: `$UNLEARN_OUTPUT_DIR` if set, else `./runs`.
pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT), PathBuf::from)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerChoice {
    /// AdamW.
    Fo,
    /// Sophia.
    So,
    /// One-shot influence update; no iterations.
    Iu,
}

impl OptimizerChoice {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerChoice::Fo => "fo",
            OptimizerChoice::So => "so",
            OptimizerChoice::Iu => "iu",
        }
    }
}

impl FromStr for OptimizerChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fo" => Ok(OptimizerChoice::Fo),
            "so" => Ok(OptimizerChoice::So),
            "iu" => Ok(OptimizerChoice::Iu),
            other => Err(Error::InvalidArgument(format!("unknown optimizer {other:?} (fo, so, iu)"))),
        }
    }
}

/// Tuned TOFU learning rates (batch size 1, 5 epochs) before the toy-model
/// multiplier. GA only has a first-order entry; it is reused for Sophia.
pub fn table_learning_rate(method: Method, optimizer: OptimizerChoice) -> f64 {
    let so = optimizer == OptimizerChoice::So;
    match method {
        Method::Ga => 4e-6,
        Method::GradDiff => 5e-6,
        Method::Po if so => 1e-5,
        Method::Po => 2e-5,
        Method::Npo if so => 1e-5,
        Method::Npo => 2e-5,
    }
}

pub fn display_method(method: Method) -> &'static str {
    match method {
        Method::Ga => "GA",
        Method::GradDiff => "GradDiff",
        Method::Po => "PO",
        Method::Npo => "NPO",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub corpus_path: Option<PathBuf>,
    pub n_authors: usize,
    pub qa_per_author: usize,
    pub forget_ratio: f64,
    pub n_holdout: Option<usize>,
    pub n_perturbed: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = CorpusSpec::default();
        DataConfig {
            corpus_path: None,
            n_authors: s.n_authors,
            qa_per_author: s.qa_per_author,
            forget_ratio: s.forget_ratio,
            n_holdout: s.n_holdout,
            n_perturbed: s.n_perturbed,
        }
    }
}

impl DataConfig {
    pub fn spec(&self) -> CorpusSpec {
        CorpusSpec {
            n_authors: self.n_authors,
            qa_per_author: self.qa_per_author,
            forget_ratio: self.forget_ratio,
            n_holdout: self.n_holdout,
            n_perturbed: self.n_perturbed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Arch,
    pub context_window: usize,
    pub window: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        // Long enough for a system-prompt prefix; only `window` costs compute.
        ModelSection { arch: Arch::Mlp, context_window: 256, window: 32, embed_dim: 8, hidden_dim: 64, depth: 2 }
    }
}

impl ModelSection {
    pub fn from_config(c: &ModelConfig) -> Self {
        ModelSection {
            arch: c.arch,
            context_window: c.context_window,
            window: c.window,
            embed_dim: c.embed_dim,
            hidden_dim: c.hidden_dim,
            depth: c.depth,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            arch: self.arch,
            vocab_size: crate::model::tokenizer::VOCAB_SIZE,
            context_window: self.context_window,
            window: self.window,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            depth: self.depth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub nll_threshold: f64,
    /// Also train refusals for prompts prefixed with the system prompt that
    /// names the forget authors (needs a window wide enough to see it).
    pub obey_system_prompt: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig { lr: 1e-2, batch_size: 16, max_epochs: 500, nll_threshold: 0.05, obey_system_prompt: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnConfig {
    pub method: Method,
    pub optimizer: OptimizerChoice,
    /// Retain weight; `None` takes the tuned per-method value.
    pub lambda: Option<f64>,
    /// NPO inverse temperature.
    pub beta: f64,
    /// Absolute learning rate; `None` means table rate × `lr_multiplier`.
    pub lr: Option<f64>,
    pub lr_multiplier: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    /// Influence damping; `None` is `1e-4 · trace(H) / d`.
    pub damping: Option<f64>,
    pub sophia: SophiaConfig,
    pub adamw: AdamWConfig,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            method: Method::GradDiff,
            optimizer: OptimizerChoice::So,
            lambda: None,
            beta: 1.0,
            lr: None,
            lr_multiplier: 4.0,
            epochs: 5,
            batch_size: 1,
            schedule: Schedule::Alternating,
            damping: None,
            sophia: SophiaConfig::default(),
            adamw: AdamWConfig::default(),
        }
    }
}

impl UnlearnConfig {
    pub fn effective_lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| {
            let (fo, so) = self.method.default_lambda();
            if self.optimizer == OptimizerChoice::So {
                so
            } else {
                fo
            }
        })
    }

    pub fn effective_lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| table_learning_rate(self.method, self.optimizer) * self.lr_multiplier)
    }

    pub fn method_config(&self) -> MethodConfig {
        MethodConfig { method: self.method, lambda: self.effective_lambda(), beta: self.beta }
    }

    pub fn optimizer_kind(&self) -> Option<OptimizerKind> {
        match self.optimizer {
            OptimizerChoice::Fo => Some(OptimizerKind::AdamW(self.adamw)),
            OptimizerChoice::So => Some(OptimizerKind::Sophia(self.sophia)),
            OptimizerChoice::Iu => None,
        }
    }

    /// `SO-GradDiff`, `FO-PO`, `IU`, ...
    pub fn label(&self) -> String {
        match self.optimizer {
            OptimizerChoice::Iu => "IU".into(),
            o => format!("{}-{}", o.name().to_ascii_uppercase(), display_method(self.method)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub min_k_percent: f64,
    pub max_new_tokens: usize,
    /// Evaluate every this many unlearning epochs (the last epoch always).
    pub every: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalSection { min_k_percent: e.min_k_percent, max_new_tokens: e.max_new_tokens, every: 1 }
    }
}

impl EvalSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { min_k_percent: self.min_k_percent, max_new_tokens: self.max_new_tokens }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelSection,
    pub finetune: FinetuneConfig,
    pub unlearn: UnlearnConfig,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            output_dir: None,
            data: DataConfig::default(),
            model: ModelSection::default(),
            finetune: FinetuneConfig::default(),
            unlearn: UnlearnConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(default_output_root)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.model_config().validate()?;
        self.unlearn.method_config().validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.unlearn.effective_lr() > 0.0) {
            return bad("unlearn learning rate must be positive");
        }
        if self.unlearn.batch_size == 0 || self.finetune.batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if self.eval.every == 0 {
            return bad("eval.every must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::default();
        c.unlearn.method = Method::Npo;
        c.unlearn.optimizer = OptimizerChoice::Fo;
        c.unlearn.lambda = Some(0.5);
        c.data.corpus_path = Some("x.jsonl".into());
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml("sed = 1").is_err());
        assert!(ExperimentConfig::from_toml("[unlearn]\nbatch_size = 0").is_err());
        assert!(ExperimentConfig::from_toml("[unlearn]\nmethod = \"dpo\"").is_err());
    }

    #[test]
    fn table_defaults() {
        let mut u = UnlearnConfig::default();
        assert_eq!(u.effective_lambda(), 2.0);
        assert_eq!(u.label(), "SO-GradDiff");
        u.optimizer = OptimizerChoice::Fo;
        assert_eq!(u.effective_lambda(), 0.3);
        assert_eq!(u.effective_lr(), 5e-6 * 4.0);
        u.method = Method::Po;
        assert_eq!(table_learning_rate(u.method, u.optimizer), 2e-5);
        assert_eq!(table_learning_rate(Method::Npo, OptimizerChoice::So), 1e-5);
        u.optimizer = OptimizerChoice::Iu;
        assert_eq!(u.label(), "IU");
    }
}
