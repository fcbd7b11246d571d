//! Result rows, the append-only CSV table and its JSON Lines sidecar.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use pltanh_core::{ActivationKind, ExperimentResult};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Column order of the results table.
pub const HEADER: [&str; 10] = [
    "dataset",
    "activation",
    "alpha",
    "macro_precision",
    "accuracy",
    "macro_recall",
    "auc",
    "macro_f1",
    "seconds",
    "seed",
];

/// Columns that depend only on config and seed, not on timing.
pub const METRIC_COLUMNS: [&str; 5] = ["macro_precision", "accuracy", "macro_recall", "auc", "macro_f1"];

/// One aggregated experiment. `alpha` is empty for kinds without one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub activation: String,
    pub alpha: Option<f64>,
    pub macro_precision: f64,
    pub accuracy: f64,
    pub macro_recall: f64,
    pub auc: f64,
    pub macro_f1: f64,
    pub seconds: f64,
    pub seed: u64,
}

impl ResultRow {
    pub fn new(dataset: &str, kind: ActivationKind, seed: u64, result: &ExperimentResult) -> Self {
        let m = &result.report.mean;
        Self {
            dataset: dataset.to_string(),
            activation: kind.name().to_string(),
            alpha: kind.alpha(),
            macro_precision: m.macro_precision,
            accuracy: m.accuracy,
            macro_recall: m.macro_recall,
            auc: m.macro_auc,
            macro_f1: m.macro_f1,
            seconds: result.seconds,
            seed,
        }
    }

    /// Fields in [`HEADER`] order. Floats use the shortest text that parses
    /// back to the same value.
    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.dataset.clone(),
            self.activation.clone(),
            self.alpha.map(|a| a.to_string()).unwrap_or_default(),
            self.macro_precision.to_string(),
            self.accuracy.to_string(),
            self.macro_recall.to_string(),
            self.auc.to_string(),
            self.macro_f1.to_string(),
            self.seconds.to_string(),
            self.seed.to_string(),
        ]
    }

    pub fn from_record(record: &csv::StringRecord) -> Result<Self, String> {
        if record.len() < HEADER.len() {
            return Err(format!("expected {} fields, found {}", HEADER.len(), record.len()));
        }
        let float = |i: usize| -> Result<f64, String> {
            record[i]
                .parse()
                .map_err(|e| format!("column {}: {:?}: {e}", HEADER[i], &record[i]))
        };
        Ok(Self {
            dataset: record[0].to_string(),
            activation: record[1].to_string(),
            alpha: if record[2].is_empty() { None } else { Some(float(2)?) },
            macro_precision: float(3)?,
            accuracy: float(4)?,
            macro_recall: float(5)?,
            auc: float(6)?,
            macro_f1: float(7)?,
            seconds: float(8)?,
            seed: record[9].parse().map_err(|e| format!("column seed: {e}"))?,
        })
    }

    /// The [`METRIC_COLUMNS`] as written to the table.
    pub fn metric_fields(&self) -> Vec<String> {
        self.to_record()[3..8].to_vec()
    }
}

/// Appends rows to a CSV file, writing the header when the file is new and
/// refusing to mix schemas.
pub struct CsvAppender {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvAppender {
    pub fn open(path: &Path, header: &[&str]) -> Result<Self, CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
        }
        let existing = match File::open(path) {
            Ok(f) => BufReader::new(f).lines().next().transpose().map_err(|e| CliError::output(path, e))?,
            Err(_) => None,
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::output(path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        match existing {
            Some(line) if line.trim_end() != header.join(",") => {
                return Err(CliError::output(path, format!("existing header {line:?} differs from {:?}", header.join(","))));
            }
            Some(_) => {}
            None => writer.write_record(header).map_err(|e| CliError::output(path, e))?,
        }
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn append(&mut self, record: &[String]) -> Result<(), CliError> {
        self.writer.write_record(record).map_err(|e| CliError::output(&self.path, e))?;
        self.writer.flush().map_err(|e| CliError::output(&self.path, e))
    }
}

/// `results.csv` gets `results.jsonl` next to it.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("jsonl")
}

/// Appends one JSON document per line.
pub fn append_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut line = serde_json::to_string(value).map_err(|e| CliError::output(path, e))?;
    line.push('\n');
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .and_then(|mut f| f.write_all(line.as_bytes()))
        .map_err(|e| CliError::output(path, e))
}

/// Reads a results table, checking its header.
pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>, CliError> {
    read_table(path, &HEADER)?
        .iter()
        .map(|r| ResultRow::from_record(r).map_err(|e| CliError::output(path, e)))
        .collect()
}

/// Reads any CSV written by this crate, checking the header prefix.
pub fn read_table(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::output(path, e))?;
    let found = reader.headers().map_err(|e| CliError::output(path, e))?.clone();
    if found.iter().take(header.len()).ne(header.iter().copied()) {
        return Err(CliError::output(path, format!("unexpected header {found:?}")));
    }
    reader
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::output(path, e))
}
