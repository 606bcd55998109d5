//! Versioned CSV tables shared by `eval`, `ablate` and `report`.

use std::fs;
use std::io::Write;
use std::path::Path;

use airway_refine::metrics::MetricReport;
use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::failure::schema;

pub const SCHEMA_LINE: &str = "# schema=1";

pub const METRICS: [&str; 7] = ["iou", "dice", "dlr", "dbr", "precision", "leakage", "amr"];

/// One `eval` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub case: String,
    pub iou: f64,
    pub dice: f64,
    pub dlr: f64,
    pub dbr: f64,
    pub precision: f64,
    pub leakage: f64,
    pub amr: f64,
}

impl EvalRow {
    pub fn new(case: impl Into<String>, m: &MetricReport) -> Self {
        Self {
            case: case.into(),
            iou: m.iou,
            dice: m.dice,
            dlr: m.dlr,
            dbr: m.dbr,
            precision: m.precision,
            leakage: m.leakage,
            amr: m.amr,
        }
    }

    pub fn values(&self) -> [f64; 7] {
        [self.iou, self.dice, self.dlr, self.dbr, self.precision, self.leakage, self.amr]
    }
}

/// One `ablate` row: a named configuration and its mean metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub iou: f64,
    pub dice: f64,
    pub dlr: f64,
    pub dbr: f64,
    pub precision: f64,
    pub leakage: f64,
    pub amr: f64,
}

impl AblationRow {
    pub fn new(config: impl Into<String>, means: [f64; 7]) -> Self {
        let [iou, dice, dlr, dbr, precision, leakage, amr] = means;
        Self {
            config: config.into(),
            iou,
            dice,
            dlr,
            dbr,
            precision,
            leakage,
            amr,
        }
    }

    pub fn values(&self) -> [f64; 7] {
        [self.iou, self.dice, self.dlr, self.dbr, self.precision, self.leakage, self.amr]
    }
}

pub fn write_rows<T: Serialize>(mut w: impl Write, rows: &[T]) -> Result<()> {
    writeln!(w, "{SCHEMA_LINE}")?;
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn save_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_rows(std::io::BufWriter::new(file), rows)
}

/// Reads a table written by [`save_rows`], rejecting other schemas.
pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    if first.trim_end() != SCHEMA_LINE {
        return Err(schema(format!("{}: expected header line {SCHEMA_LINE:?}, found {first:?}", path.display())));
    }
    csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .collect::<csv::Result<Vec<T>>>()
        .map_err(|e| schema(format!("{}: {e}", path.display())))
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

/// `{metric: {mean, std}}` over the rows, plus the case count.
pub fn summarize(rows: &[EvalRow]) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    map.insert("cases".into(), rows.len().into());
    for (k, name) in METRICS.iter().enumerate() {
        let xs: Vec<f64> = rows.iter().map(|r| r.values()[k]).collect();
        let (mean, std) = mean_std(&xs);
        map.insert((*name).into(), serde_json::to_value(MetricSummary { mean, std }).expect("plain struct"));
    }
    map.into()
}
