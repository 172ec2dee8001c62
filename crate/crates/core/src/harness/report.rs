//! Results files: `results.csv` (one row per run, final evaluated epoch),
//! `table.txt` (the same rows rendered for reading), `plot_<run>.tsv`
//! (forget/retain accuracy per evaluated epoch) and `timings.csv`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::RunRecord;
use crate::error::{Error, Result};
use crate::eval::MetricsReport;

/// Efficacy columns first, then utility.
pub const RESULTS_HEADER: &str =
    "method,seed,epoch,forget_quality,forget_acc,rouge_forget,mia_auc,retain_acc,rouge_retain,holdout_acc,bleu,perplexity";

const TABLE_HEADERS: [&str; 9] = [
    "Forget quality",
    "Forget acc",
    "Forget Rouge-L",
    "MIA AUC",
    "Retain acc",
    "Retain Rouge-L",
    "Holdout acc",
    "BLEU",
    "Perplexity",
];

/// One parsed line of a results file.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub seed: u64,
    pub epoch: usize,
    pub metrics: MetricsReport,
}

pub fn results_row(method: &str, seed: u64, epoch: usize, m: &MetricsReport) -> String {
    let mut line = format!("{method},{seed},{epoch}");
    for v in m.values() {
        let _ = write!(line, ",{v:.6}");
    }
    line
}

fn final_row(r: &RunRecord) -> Result<ResultRow> {
    let last =
        r.final_metrics().ok_or_else(|| Error::InvalidArgument(format!("run {} has no evaluations", r.label)))?;
    Ok(ResultRow { method: r.label.clone(), seed: r.seed, epoch: last.epoch, metrics: last.metrics.clone() })
}

fn rows_csv(rows: &[ResultRow]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in rows {
        out.push_str(&results_row(&r.method, r.seed, r.epoch, &r.metrics));
        out.push('\n');
    }
    out
}

pub fn results_csv(records: &[RunRecord]) -> Result<String> {
    Ok(rows_csv(&records.iter().map(final_row).collect::<Result<Vec<_>>>()?))
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<&str> = reader.headers()?.iter().collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(Error::Parse { line: 1, message: format!("unexpected header {:?}", header.join(",")) });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |m: String| Error::Parse { line, message: m };
        let num = |k: usize| -> Result<f64> { rec[k].parse().map_err(|_| bad(format!("bad number {:?}", &rec[k]))) };
        let v: Vec<f64> = (3..12).map(num).collect::<Result<_>>()?;
        rows.push(ResultRow {
            method: rec[0].to_string(),
            seed: rec[1].parse().map_err(|_| bad(format!("bad seed {:?}", &rec[1])))?,
            epoch: rec[2].parse().map_err(|_| bad(format!("bad epoch {:?}", &rec[2])))?,
            metrics: MetricsReport {
                forget_quality: v[0],
                forget_acc: v[1],
                rouge_forget: v[2],
                mia_auc: v[3],
                retain_acc: v[4],
                rouge_retain: v[5],
                holdout_acc: v[6],
                bleu: v[7],
                perplexity: v[8],
            },
        });
    }
    Ok(rows)
}

/// Fixed-width text table, one line per row.
pub fn render_table(rows: &[ResultRow]) -> String {
    let method_w = rows.iter().map(|r| r.method.len()).chain([6]).max().unwrap_or(6);
    let widths: Vec<usize> = TABLE_HEADERS.iter().map(|h| h.len().max(8)).collect();
    let efficacy_w: usize = widths[..4].iter().map(|w| w + 2).sum();
    let mut out = String::new();
    let _ = writeln!(out, "{:method_w$}  {:5}  {:efficacy_w$}Utility", "", "", "Unlearning efficacy");
    let _ = write!(out, "{:method_w$}  {:5}", "Method", "Epoch");
    for (h, w) in TABLE_HEADERS.iter().zip(&widths) {
        let _ = write!(out, "  {h:>w$}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:method_w$}  {:5}", r.method, r.epoch);
        for (v, w) in r.metrics.values().iter().zip(&widths) {
            let _ = write!(out, "  {v:>w$.4}");
        }
        out.push('\n');
    }
    out
}

/// Tab-separated `epoch forget_acc retain_acc` per evaluated epoch.
pub fn plot_tsv(record: &RunRecord) -> String {
    let mut out = String::from("epoch\tforget_acc\tretain_acc\n");
    for e in record.epochs() {
        let _ = writeln!(out, "{}\t{:.6}\t{:.6}", e.epoch, e.metrics.forget_acc, e.metrics.retain_acc);
    }
    out
}

pub fn timings_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("method,seed,finetune_secs,unlearn_secs,eval_secs\n");
    for r in records {
        let t = &r.timings;
        let _ = writeln!(out, "{},{},{:.3},{:.3},{:.3}", r.label, r.seed, t.finetune_secs, t.unlearn_secs, t.eval_secs);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub results: PathBuf,
    pub table: PathBuf,
    pub timings: PathBuf,
    pub plots: Vec<PathBuf>,
}

fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Writes the report files for `records` into `dir`, creating it if needed.
pub fn emit_report(records: &[RunRecord], dir: impl AsRef<Path>) -> Result<ReportFiles> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no runs to report".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: String, text: &str| -> Result<PathBuf> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };
    let rows: Vec<ResultRow> = records.iter().map(final_row).collect::<Result<_>>()?;
    let results = write("results.csv".into(), &rows_csv(&rows))?;
    let table = write("table.txt".into(), &render_table(&rows))?;
    let timings = write("timings.csv".into(), &timings_csv(records))?;
    let plots = records
        .iter()
        .map(|r| write(format!("plot_{}-s{}.tsv", file_stem(&r.label), r.seed), &plot_tsv(r)))
        .collect::<Result<_>>()?;
    Ok(ReportFiles { results, table, timings, plots })
}

/// Report over rows from `results.csv`-format files (no plots or timings).
pub fn emit_table(rows: &[ResultRow], dir: impl AsRef<Path>) -> Result<ReportFiles> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to report".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let results = dir.join("results.csv");
    std::fs::write(&results, rows_csv(rows)).map_err(|e| Error::io(&results, e))?;
    let table = dir.join("table.txt");
    std::fs::write(&table, render_table(rows)).map_err(|e| Error::io(&table, e))?;
    Ok(ReportFiles { results, table, timings: PathBuf::new(), plots: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentConfig;

    fn metrics(x: f64) -> MetricsReport {
        MetricsReport {
            forget_quality: x,
            forget_acc: x,
            rouge_forget: x,
            mia_auc: x,
            retain_acc: 1.0 - x,
            rouge_retain: x,
            holdout_acc: x,
            bleu: x,
            perplexity: 2.0,
        }
    }

    fn record(label: &str) -> RunRecord {
        let mut r = RunRecord::new(label, ExperimentConfig::default());
        r.push_epoch(0, metrics(1.0)).unwrap();
        r.push_epoch(5, metrics(0.25)).unwrap();
        r
    }

    #[test]
    fn header_matches_metric_columns() {
        let expected = format!("method,seed,epoch,{}", MetricsReport::COLUMNS.join(","));
        assert_eq!(RESULTS_HEADER, expected);
        assert_eq!(
            RESULTS_HEADER,
            "method,seed,epoch,forget_quality,forget_acc,rouge_forget,mia_auc,retain_acc,rouge_retain,holdout_acc,bleu,perplexity"
        );
    }

    #[test]
    fn single_record_gives_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&[record("SO-GradDiff")], dir.path()).unwrap();
        let csv = std::fs::read_to_string(&files.results).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "SO-GradDiff,42,5,0.250000,0.250000,0.250000,0.250000,0.750000,0.250000,0.250000,0.250000,2.000000"
        );
        let table = std::fs::read_to_string(&files.table).unwrap();
        assert_eq!(table.lines().filter(|l| l.starts_with("SO-GradDiff")).count(), 1);
        assert_eq!(table.lines().count(), 3);
        let plot = std::fs::read_to_string(&files.plots[0]).unwrap();
        assert_eq!(plot, "epoch\tforget_acc\tretain_acc\n0\t1.000000\t0.000000\n5\t0.250000\t0.750000\n");
    }

    #[test]
    fn csv_round_trips() {
        let text = results_csv(&[record("FO-GA"), record("SO-NPO")]).unwrap();
        let rows = parse_results_csv(&text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].method, "SO-NPO");
        assert_eq!(rows[1].metrics, metrics(0.25));
        assert_eq!(rows_csv(&rows), text);
        assert!(parse_results_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn errors() {
        assert!(emit_report(&[], "unused").is_err());
        let file = tempfile::NamedTempFile::new().unwrap();
        assert!(emit_report(&[record("X")], file.path().join("sub")).is_err());
        assert!(results_csv(&[RunRecord::new("empty", ExperimentConfig::default())]).is_err());
    }
}
