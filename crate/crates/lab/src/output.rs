//! CSV tables with fixed schemas. The first column of every table is the
//! `run_id`; appending refuses ids already present in the file.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use crate::error::{io_err, LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schema {
    pub name: &'static str,
    pub columns: &'static [&'static str],
}

impl Schema {
    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }
}

pub const METRICS: Schema = Schema {
    name: "metrics",
    columns: &["run_id", "epoch", "step", "train_loss", "train_acc", "test_acc", "lr_multiplier", "diverged"],
};

pub const LAYER_STATS: Schema = Schema {
    name: "layerstats",
    columns: &[
        "run_id", "step", "layer", "mean_z", "var_z", "mean_g", "var_g", "var_dw", "lower_bound", "upper_bound",
        "weight_var",
    ],
};

pub const T_TRACE: Schema = Schema {
    name: "ttrace",
    columns: &["run_id", "epoch", "layer", "t_mean", "t_std", "t_min", "t_max"],
};

pub const CAPACITY: Schema = Schema {
    name: "capacity",
    columns: &["run_id", "setting", "t_init", "trainable", "max_train_acc", "final_t_mean", "diverged"],
};

pub const CRITICAL_DEPTH: Schema = Schema {
    name: "critical_depth",
    columns: &["run_id", "variant", "depth", "final_train_acc", "converged", "diverged"],
};

pub const LEARNING_BEHAVIOR: Schema = Schema {
    name: "learning_behavior",
    columns: &["run_id", "variant", "init", "epochs_to_threshold", "threshold", "final_train_acc", "final_test_acc"],
};

pub const VARIANCE_STUDY: Schema = Schema {
    name: "variance_study",
    columns: &["run_id", "variant", "step", "stability_score", "sandwich_probes", "sandwich_holds"],
};

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Str(String),
    Int(u64),
    Float(f64),
    Bool(bool),
}

impl From<&str> for Field {
    fn from(s: &str) -> Self {
        Self::Str(s.to_string())
    }
}

impl From<String> for Field {
    fn from(s: String) -> Self {
        Self::Str(s)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Self::Int(v as u64)
    }
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Self::Float(v)
    }
}

impl From<bool> for Field {
    fn from(v: bool) -> Self {
        Self::Bool(v)
    }
}

impl Field {
    fn render(&self) -> String {
        match self {
            Self::Str(s) => s.clone(),
            Self::Int(v) => v.to_string(),
            Self::Float(v) => format_float(*v),
            Self::Bool(b) => b.to_string(),
        }
    }
}

/// Rounds to 9 significant digits and prints the shortest text that reads
/// back as the rounded value.
pub fn format_float(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "NaN".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    rounded.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteMode {
    /// Truncate or create, then write the header.
    Create,
    /// Keep existing rows; new rows must use fresh run ids.
    Append,
}

pub struct CsvTable {
    path: PathBuf,
    schema: Schema,
    writer: csv::Writer<File>,
    existing: BTreeSet<String>,
}

impl CsvTable {
    pub fn open(path: &Path, schema: Schema, mode: WriteMode) -> Result<Self> {
        let csv_err = |source| LabError::Csv { path: path.into(), source };
        let has_rows = mode == WriteMode::Append && path.metadata().map(|m| m.len() > 0).unwrap_or(false);
        let mut existing = BTreeSet::new();
        if has_rows {
            let (header, rows) = read_table(path)?;
            if header != schema.columns {
                return Err(LabError::Schema {
                    path: path.into(),
                    found: header,
                    expected: schema.columns.iter().map(|s| s.to_string()).collect(),
                });
            }
            existing = rows.into_iter().filter_map(|r| r.into_iter().next()).collect();
        }
        let file = if mode == WriteMode::Append {
            OpenOptions::new().create(true).append(true).open(path)
        } else {
            File::create(path)
        }
        .map_err(io_err(path))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if !has_rows {
            writer.write_record(schema.columns).map_err(csv_err)?;
            writer.flush().map_err(io_err(path))?;
        }
        Ok(Self { path: path.into(), schema, writer, existing })
    }

    pub fn schema(&self) -> Schema {
        self.schema
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, row: &[Field]) -> Result<()> {
        if row.len() != self.schema.columns.len() {
            return Err(LabError::Config(format!(
                "{} row has {} fields, schema has {}",
                self.schema.name,
                row.len(),
                self.schema.columns.len()
            )));
        }
        let run_id = row[0].render();
        if self.existing.contains(&run_id) {
            return Err(LabError::RunIdCollision { path: self.path.clone(), run_id });
        }
        let rendered: Vec<String> = row.iter().map(Field::render).collect();
        self.writer
            .write_record(&rendered)
            .map_err(|source| LabError::Csv { path: self.path.clone(), source })
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(io_err(&self.path))
    }
}

/// Header and rows of a CSV file as strings.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let csv_err = |source| LabError::Csv { path: path.into(), source };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()).map_err(csv_err))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}
