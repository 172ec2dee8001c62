//! Experiment orchestration: corpus, fine-tuning, unlearning, per-epoch
//! evaluation, and the files each run leaves behind.
//!
//! A run directory holds `config.toml` (the resolved configuration, which
//! re-runs to identical results), `model.ckpt`, `record.json`,
//! `trajectory.tsv` (iterative optimizers only), and the report files
//! written by [`emit_report`].

mod baseline;
mod config;
mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_corpus_with, Corpus};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport, Split};
use crate::influence::{influence_unlearn_lm, LmInfluenceStats};
use crate::model::{checkpoint, Sample, TinyLM};
use crate::numerics::{ParamVector, Seed};
use crate::optim::{run_unlearning, train, LrSchedule, RunConfig, TrainConfig, TrainReport, Trajectory, UnlearnTask};

pub use baseline::{
    input_based_baseline, prefix_convention_samples, render_system_prompt, with_system_prompt, DEFAULT_SYSTEM_PROMPT,
};
pub use config::{
    default_output_root, display_method, table_learning_rate, DataConfig, EvalSection, ExperimentConfig,
    FinetuneConfig, ModelSection, OptimizerChoice, UnlearnConfig, DEFAULT_OUTPUT_ROOT, OUTPUT_ROOT_ENV,
};
pub use report::{
    emit_report, emit_table, parse_results_csv, plot_tsv, render_table, results_csv, results_row, timings_csv,
    ReportFiles, ResultRow, RESULTS_HEADER,
};

/// Wall-clock seconds per phase. Kept out of the results CSV so that file
/// stays byte-reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub finetune_secs: f64,
    pub unlearn_secs: f64,
    pub eval_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    epochs: Vec<EpochMetrics>,
    pub checkpoint: Option<PathBuf>,
    pub timings: Timings,
    pub influence: Option<LmInfluenceStats>,
}

impl RunRecord {
    pub fn new(label: impl Into<String>, config: ExperimentConfig) -> Self {
        RunRecord {
            label: label.into(),
            seed: config.seed,
            config,
            epochs: Vec::new(),
            checkpoint: None,
            timings: Timings::default(),
            influence: None,
        }
    }

    /// Appends one evaluation; epochs must be strictly increasing.
    pub fn push_epoch(&mut self, epoch: usize, metrics: MetricsReport) -> Result<()> {
        if let Some(last) = self.epochs.last() {
            if epoch <= last.epoch {
                return Err(Error::InvalidArgument(format!("epoch {epoch} after epoch {}", last.epoch)));
            }
        }
        self.epochs.push(EpochMetrics { epoch, metrics });
        Ok(())
    }

    pub fn epochs(&self) -> &[EpochMetrics] {
        &self.epochs
    }

    pub fn final_metrics(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Generates the corpus, or loads it when `data.corpus_path` is set.
pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    match &cfg.data.corpus_path {
        Some(p) => Corpus::load(p),
        None => generate_corpus_with(Seed(cfg.seed), &cfg.data.spec()),
    }
}

/// Training set of the original model: forget and retain QA pairs, plus the
/// system-prompt convention samples when `finetune.obey_system_prompt` is set.
pub fn finetune_samples(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Vec<Sample>> {
    let mut samples = Corpus::samples(&corpus.training_examples())?;
    if cfg.finetune.obey_system_prompt {
        samples.extend(prefix_convention_samples(corpus, DEFAULT_SYSTEM_PROMPT)?);
    }
    Ok(samples)
}

/// Trains the original model from a seeded initialization.
pub fn finetune(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<(TinyLM, TrainReport)> {
    let mut model = TinyLM::init(cfg.model.model_config(), Seed(cfg.seed))?;
    let tc = TrainConfig {
        lr: cfg.finetune.lr,
        batch_size: cfg.finetune.batch_size,
        max_epochs: cfg.finetune.max_epochs,
        nll_threshold: cfg.finetune.nll_threshold,
        seed: Seed(cfg.seed),
        ..TrainConfig::default()
    };
    let report = train(&mut model, &finetune_samples(cfg, corpus)?, &tc)?;
    Ok((model, report))
}

/// Parameters after each unlearning epoch (index 0 is the input model).
pub struct UnlearnOutcome {
    pub epoch_params: Vec<ParamVector>,
    pub trajectory: Option<Trajectory>,
    pub influence: Option<LmInfluenceStats>,
    pub secs: f64,
}

impl UnlearnOutcome {
    pub fn final_params(&self) -> &ParamVector {
        self.epoch_params.last().expect("outcome holds the input parameters")
    }
}

/// Unlearns the corpus's forget split from `model` with the configured
/// method and optimizer. The influence variant is a single step, reported as
/// epoch 1 (or not at all when `epochs = 0`).
pub fn unlearn(cfg: &ExperimentConfig, model: &TinyLM, corpus: &Corpus) -> Result<UnlearnOutcome> {
    let u = &cfg.unlearn;
    let forget_ex = corpus.split(Split::Forget);
    let retain_ex = corpus.split(Split::Retain);
    let start = Instant::now();
    match u.optimizer_kind() {
        Some(optimizer) => {
            let task = UnlearnTask {
                forget: Corpus::samples(&forget_ex)?,
                retain: Corpus::samples(&retain_ex)?,
                method: u.method_config(),
                reject_pool: corpus.reject_pool.token_sequences()?,
            };
            let rc = RunConfig {
                optimizer,
                lr: LrSchedule::Constant(u.effective_lr()),
                epochs: u.epochs,
                batch_size: u.batch_size,
                seed: Seed(cfg.seed),
                schedule: u.schedule,
            };
            let traj = run_unlearning(model, &task, &rc)?;
            Ok(UnlearnOutcome {
                epoch_params: traj.epoch_params.clone(),
                trajectory: Some(traj),
                influence: None,
                secs: start.elapsed().as_secs_f64(),
            })
        }
        None => {
            let mut epoch_params = vec![model.params().clone()];
            let mut influence = None;
            if u.epochs > 0 {
                let train_ex = corpus.training_examples();
                let forget_idx: Vec<usize> =
                    train_ex.iter().enumerate().filter(|(_, e)| e.split == Split::Forget).map(|(i, _)| i).collect();
                let (m, stats) = influence_unlearn_lm(model, &Corpus::samples(&train_ex)?, &forget_idx, u.damping)?;
                epoch_params.push(m.params().clone());
                influence = Some(stats);
            }
            Ok(UnlearnOutcome { epoch_params, trajectory: None, influence, secs: start.elapsed().as_secs_f64() })
        }
    }
}

/// Epochs evaluated under `eval.every`: 0, every k-th, and the last.
pub fn eval_epochs(last: usize, every: usize) -> Vec<usize> {
    (0..=last).filter(|&e| e % every.max(1) == 0 || e == last).collect()
}

pub fn evaluate_model(cfg: &ExperimentConfig, model: &TinyLM, corpus: &Corpus) -> Result<MetricsReport> {
    evaluate(
        model,
        &corpus.split(Split::Forget),
        &corpus.split(Split::Retain),
        &corpus.split(Split::Holdout),
        &cfg.eval.eval_config(),
    )
}

/// Original model and the data it was trained on, shared by every
/// unlearning run of a sweep.
pub struct Prepared {
    pub corpus: Corpus,
    pub model: TinyLM,
    pub finetune: Option<TrainReport>,
    pub finetune_secs: f64,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let start = Instant::now();
    let (model, report) = finetune(cfg, &corpus)?;
    Ok(Prepared { corpus, model, finetune: Some(report), finetune_secs: start.elapsed().as_secs_f64() })
}

/// Everything a finished run produced.
pub struct RunOutput {
    pub record: RunRecord,
    pub model: TinyLM,
    pub trajectory: Option<Trajectory>,
}

/// Unlearns from the prepared model and evaluates at the configured cadence.
pub fn run_experiment(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<RunOutput> {
    cfg.validate()?;
    let outcome = unlearn(cfg, &prepared.model, &prepared.corpus)?;
    let mut record = RunRecord::new(cfg.unlearn.label(), cfg.clone());
    record.timings.finetune_secs = prepared.finetune_secs;
    record.timings.unlearn_secs = outcome.secs;
    record.influence = outcome.influence.clone();
    let start = Instant::now();
    let last = outcome.epoch_params.len() - 1;
    for e in eval_epochs(last, cfg.eval.every) {
        let m = prepared.model.with_params(outcome.epoch_params[e].clone())?;
        record.push_epoch(e, evaluate_model(cfg, &m, &prepared.corpus)?)?;
    }
    record.timings.eval_secs = start.elapsed().as_secs_f64();
    let model = prepared.model.with_params(outcome.final_params().clone())?;
    Ok(RunOutput { record, model, trajectory: outcome.trajectory })
}

/// Writes the run's artifacts into `dir` and returns the record with its
/// checkpoint path filled in.
pub fn write_run(dir: impl AsRef<Path>, run: &RunOutput) -> Result<RunRecord> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(p, e))
    };
    write("config.toml", &run.record.config.to_toml())?;
    let ckpt = dir.join("model.ckpt");
    checkpoint::save(&run.model, &ckpt)?;
    let mut record = run.record.clone();
    record.checkpoint = Some(ckpt);
    write("record.json", &record.to_json())?;
    if let Some(t) = &run.trajectory {
        write("trajectory.tsv", &t.to_log())?;
    }
    emit_report(std::slice::from_ref(&record), dir)?;
    Ok(record)
}

/// The tuned grid: every method under AdamW and Sophia, otherwise `base`.
pub fn sweep_configs(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    use crate::losses::Method;
    let mut out = Vec::new();
    for method in [Method::Ga, Method::GradDiff, Method::Po, Method::Npo] {
        for optimizer in [OptimizerChoice::Fo, OptimizerChoice::So] {
            let mut c = base.clone();
            c.unlearn.method = method;
            c.unlearn.optimizer = optimizer;
            c.unlearn.lambda = None;
            c.unlearn.lr = None;
            out.push(c);
        }
    }
    out
}

/// Subdirectory name of a run inside a sweep.
pub fn run_dir_name(cfg: &ExperimentConfig) -> String {
    format!("{}-s{}", cfg.unlearn.label(), cfg.seed)
}

/// Runs configs that share data, model and fine-tuning settings in
/// parallel from one fine-tuned model; each run writes its own
/// subdirectory of `out_root`, and the combined report goes to `out_root`.
pub fn run_sweep(configs: &[ExperimentConfig], out_root: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let first = configs.first().ok_or_else(|| Error::InvalidArgument("empty sweep".into()))?;
    for c in configs {
        if c.seed != first.seed || c.data != first.data || c.model != first.model || c.finetune != first.finetune {
            return Err(Error::Config("sweep configs must share seed, data, model and finetune sections".into()));
        }
    }
    let out_root = out_root.as_ref();
    let prepared = prepare(first)?;
    let records: Vec<RunRecord> = configs
        .par_iter()
        .map(|c| {
            let run = run_experiment(c, &prepared)?;
            write_run(out_root.join(run_dir_name(c)), &run)
        })
        .collect::<Result<_>>()?;
    emit_report(&records, out_root)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::MetricsReport;

    fn metrics(x: f64) -> MetricsReport {
        MetricsReport {
            forget_quality: x,
            forget_acc: x,
            rouge_forget: x,
            mia_auc: x,
            retain_acc: x,
            rouge_retain: x,
            holdout_acc: x,
            bleu: x,
            perplexity: 1.0 + x,
        }
    }

    #[test]
    fn record_is_append_only() {
        let mut r = RunRecord::new("SO-GradDiff", ExperimentConfig::default());
        r.push_epoch(0, metrics(0.1)).unwrap();
        r.push_epoch(2, metrics(0.2)).unwrap();
        assert!(r.push_epoch(2, metrics(0.3)).is_err());
        assert!(r.push_epoch(1, metrics(0.3)).is_err());
        assert_eq!(r.epochs().len(), 2);
        let back = RunRecord::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn eval_cadence() {
        assert_eq!(eval_epochs(5, 1), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(eval_epochs(5, 2), vec![0, 2, 4, 5]);
        assert_eq!(eval_epochs(0, 3), vec![0]);
    }

    #[test]
    fn sweep_grid_covers_methods_and_optimizers() {
        let g = sweep_configs(&ExperimentConfig::default());
        assert_eq!(g.len(), 8);
        let labels: Vec<String> = g.iter().map(|c| c.unlearn.label()).collect();
        assert!(labels.contains(&"FO-GA".to_string()));
        assert!(labels.contains(&"SO-NPO".to_string()));
    }
}
