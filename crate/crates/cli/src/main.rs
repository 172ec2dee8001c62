use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use unlearn_core::data::Corpus;
use unlearn_core::eval::EvalConfig;
use unlearn_core::harness::{
    self, emit_report, emit_table, input_based_baseline, parse_results_csv, results_csv, results_row, ExperimentConfig,
    ModelSection, OptimizerChoice, Prepared, ResultRow, RunRecord, RESULTS_HEADER,
};
use unlearn_core::losses::Method;
use unlearn_core::model::checkpoint;
use unlearn_core::optim::Schedule;
use unlearn_core::TinyLM;

/// Second-order machine unlearning on a toy language model.
#[derive(Parser)]
#[command(name = "unlearn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic fictitious-author QA corpus.
    GenerateData {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the original model on the forget and retain splits.
    Finetune {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Unlearn the forget split from a checkpoint and evaluate per epoch.
    Unlearn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Run directory [default: $UNLEARN_OUTPUT_DIR/<label>-s<seed>].
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print (or append) one results CSV row for a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Value of the `method` column.
        #[arg(long, default_value = "original")]
        label: String,
        /// Value of the `epoch` column.
        #[arg(long, default_value_t = 0)]
        epoch: usize,
        /// Evaluate with this system prompt in front of every query
        /// (`{names}` becomes the forget authors).
        #[arg(long)]
        system_prompt: Option<String>,
        /// Append to this CSV file (header written when new) instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Combine run directories or results CSV files into one report.
    Report {
        /// Run directories, directories of runs, or results CSV files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Full pipeline: corpus, fine-tuning, unlearning, evaluation, report.
    Run {
        /// Output root [default: $UNLEARN_OUTPUT_DIR or ./runs].
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Run every method with both AdamW and Sophia, in parallel.
        #[arg(long)]
        sweep: bool,
        #[command(flatten)]
        common: Common,
    },
}

/// Configuration file plus per-field overrides.
#[derive(Args, Clone, Default)]
struct Common {
    /// TOML experiment configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_authors: Option<usize>,
    #[arg(long)]
    qa_per_author: Option<usize>,
    #[arg(long)]
    forget_ratio: Option<f64>,
    #[arg(long)]
    n_holdout: Option<usize>,
    #[arg(long)]
    n_perturbed: Option<usize>,
    #[arg(long)]
    finetune_lr: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    nll_threshold: Option<f64>,
    #[arg(long)]
    obey_system_prompt: bool,
    /// ga | graddiff | po | npo
    #[arg(long)]
    method: Option<Method>,
    /// fo (AdamW) | so (Sophia) | iu (one-shot influence)
    #[arg(long)]
    optimizer: Option<OptimizerChoice>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_multiplier: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// alternating | combined
    #[arg(long, value_parser = parse_schedule)]
    schedule: Option<Schedule>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
}

fn parse_schedule(s: &str) -> std::result::Result<Schedule, String> {
    match s {
        "alternating" => Ok(Schedule::Alternating),
        "combined" => Ok(Schedule::Combined),
        _ => Err(format!("unknown schedule {s:?} (alternating, combined)")),
    }
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v.into(); })*
            };
        }
        set!(
            seed => seed,
            n_authors => data.n_authors,
            qa_per_author => data.qa_per_author,
            forget_ratio => data.forget_ratio,
            n_holdout => data.n_holdout,
            n_perturbed => data.n_perturbed,
            finetune_lr => finetune.lr,
            max_epochs => finetune.max_epochs,
            nll_threshold => finetune.nll_threshold,
            method => unlearn.method,
            optimizer => unlearn.optimizer,
            lambda => unlearn.lambda,
            beta => unlearn.beta,
            lr => unlearn.lr,
            lr_multiplier => unlearn.lr_multiplier,
            epochs => unlearn.epochs,
            batch_size => unlearn.batch_size,
            schedule => unlearn.schedule,
            damping => unlearn.damping,
            eval_every => eval.every,
            max_new_tokens => eval.max_new_tokens,
        );
        c.finetune.obey_system_prompt |= self.obey_system_prompt;
        c.validate()?;
        Ok(c)
    }
}

fn load_checkpoint(path: &Path) -> Result<TinyLM> {
    if !path.exists() {
        bail!("checkpoint not found: {}", path.display());
    }
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::load(path).with_context(|| format!("loading corpus {}", path.display()))
}

/// Run records under `dir`: its own `record.json`, else those of its
/// immediate subdirectories in name order.
fn records_under(dir: &Path) -> Result<Vec<RunRecord>> {
    let own = dir.join("record.json");
    if own.exists() {
        return Ok(vec![RunRecord::load(&own)?]);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("record.json").exists())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        bail!("no run records under {}", dir.display());
    }
    subdirs.iter().map(|p| Ok(RunRecord::load(p.join("record.json"))?)).collect()
}

fn report(inputs: &[PathBuf], out_dir: &Path) -> Result<()> {
    let mut records = Vec::new();
    let mut csv_rows: Vec<ResultRow> = Vec::new();
    for input in inputs {
        if input.is_dir() {
            records.extend(records_under(input)?);
        } else {
            let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
            csv_rows.extend(parse_results_csv(&text).with_context(|| format!("parsing {}", input.display()))?);
        }
    }
    let files = if csv_rows.is_empty() {
        emit_report(&records, out_dir)?
    } else {
        let mut rows = parse_results_csv(&results_csv(&records)?)?;
        rows.extend(csv_rows);
        emit_table(&rows, out_dir)?
    };
    print!("{}", fs::read_to_string(&files.table)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { out, common } => {
            let cfg = common.resolve()?;
            let corpus = harness::load_corpus(&cfg)?;
            corpus.save(&out)?;
            eprintln!("wrote {} examples to {}", corpus.examples.len(), out.display());
        }
        Command::Finetune { corpus, out, common } => {
            let cfg = common.resolve()?;
            let corpus = load_corpus(&corpus)?;
            let (model, rep) = harness::finetune(&cfg, &corpus)?;
            checkpoint::save(&model, &out)?;
            eprintln!("epochs={} final_nll={:.4} converged={}", rep.epochs, rep.final_nll, rep.converged);
            if !rep.converged {
                eprintln!("warning: training NLL stayed above {}", cfg.finetune.nll_threshold);
            }
        }
        Command::Unlearn { checkpoint, corpus, out_dir, common } => {
            let mut cfg = common.resolve()?;
            let model = load_checkpoint(&checkpoint)?;
            cfg.model = ModelSection::from_config(model.config());
            cfg.data.corpus_path = Some(corpus.clone());
            let prepared = Prepared { corpus: load_corpus(&corpus)?, model, finetune: None, finetune_secs: 0.0 };
            let dir = out_dir.unwrap_or_else(|| cfg.output_dir().join(harness::run_dir_name(&cfg)));
            let out = harness::run_experiment(&cfg, &prepared)?;
            harness::write_run(&dir, &out)?;
            eprintln!("{} -> {}", out.record.label, dir.display());
        }
        Command::Evaluate { checkpoint, corpus, label, epoch, system_prompt, out, common } => {
            let cfg = common.resolve()?;
            let model = load_checkpoint(&checkpoint)?;
            let corpus = load_corpus(&corpus)?;
            let ec: EvalConfig = cfg.eval.eval_config();
            let m = match &system_prompt {
                Some(p) => input_based_baseline(&model, &corpus, p, &ec)?,
                None => harness::evaluate_model(&cfg, &model, &corpus)?,
            };
            let row = results_row(&label, cfg.seed, epoch, &m);
            match out {
                Some(path) => {
                    let fresh = !path.exists();
                    let mut f = fs::OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(&path)
                        .with_context(|| format!("opening {}", path.display()))?;
                    if fresh {
                        writeln!(f, "{RESULTS_HEADER}")?;
                    }
                    writeln!(f, "{row}")?;
                }
                None => println!("{RESULTS_HEADER}\n{row}"),
            }
        }
        Command::Report { inputs, out_dir } => report(&inputs, &out_dir)?,
        Command::Run { out_dir, sweep, common } => {
            let cfg = common.resolve()?;
            let root = out_dir.unwrap_or_else(|| cfg.output_dir());
            let configs = if sweep { harness::sweep_configs(&cfg) } else { vec![cfg] };
            let records = harness::run_sweep(&configs, &root)?;
            print!("{}", fs::read_to_string(root.join("table.txt"))?);
            eprintln!("{} run(s) under {}", records.len(), root.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
