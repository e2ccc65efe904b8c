//! Per-iteration metrics files, written row by row and flushed after each row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dladmm::IterationRecord;

use crate::config::MetricsFormat;
use crate::CliError;

/// CSV column order. List-valued columns join per-layer values with `;`;
/// missing values are empty.
pub const CSV_COLUMNS: [&str; 19] = [
    "iter",
    "rho_used",
    "objective_f",
    "lagrangian_start",
    "lagrangian",
    "residual_norm",
    "train_accuracy",
    "test_accuracy",
    "descent_ok",
    "ck_term",
    "lemma2",
    "tau_bar",
    "tau",
    "theta_bar",
    "theta",
    "backtrack_trials",
    "fista_iters",
    "fista_converged",
    "wall_ms",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub fn csv_row(r: &IterationRecord) -> Vec<String> {
    vec![
        r.iter.to_string(),
        opt(r.rho_used),
        r.objective_f.to_string(),
        opt(r.lagrangian_start),
        opt(r.lagrangian),
        opt(r.residual_norm),
        opt(r.train_accuracy),
        opt(r.test_accuracy),
        opt(r.descent_ok),
        opt(r.ck_term),
        opt(r.lemma2),
        list(&r.tau_bar),
        list(&r.tau),
        list(&r.theta_bar),
        list(&r.theta),
        r.backtrack_trials.to_string(),
        r.fista_iters.to_string(),
        r.fista_converged.to_string(),
        r.wall_ms.to_string(),
    ]
}

pub enum MetricsWriter {
    Csv(Box<csv::Writer<File>>),
    JsonLines(BufWriter<File>),
}

impl MetricsWriter {
    pub fn file_name(format: MetricsFormat) -> &'static str {
        match format {
            MetricsFormat::Csv => "metrics.csv",
            MetricsFormat::JsonLines => "metrics.jsonl",
        }
    }

    pub fn create(dir: &Path, format: MetricsFormat) -> Result<Self, CliError> {
        let file = File::create(dir.join(Self::file_name(format)))?;
        Ok(match format {
            MetricsFormat::Csv => {
                let mut w = csv::Writer::from_writer(file);
                w.write_record(CSV_COLUMNS)?;
                w.flush()?;
                MetricsWriter::Csv(Box::new(w))
            }
            MetricsFormat::JsonLines => MetricsWriter::JsonLines(BufWriter::new(file)),
        })
    }

    pub fn append(&mut self, r: &IterationRecord) -> Result<(), CliError> {
        match self {
            MetricsWriter::Csv(w) => {
                w.write_record(csv_row(r))?;
                w.flush()?;
            }
            MetricsWriter::JsonLines(w) => {
                serde_json::to_writer(&mut *w, r).map_err(std::io::Error::other)?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
        }
        Ok(())
    }
}
