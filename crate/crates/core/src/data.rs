//! Tabular datasets: CSV/TSV ingestion, normalization and the synthetic
//! control-chart generator.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Rows of features with optional integer labels and the normalization that
/// produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetTable {
    pub features: Vec<Vec<f64>>,
    pub labels: Option<Vec<i64>>,
    pub normalization: Normalization,
}

impl DatasetTable {
    pub fn new(features: Vec<Vec<f64>>, labels: Option<Vec<i64>>) -> Self {
        Self {
            features,
            labels,
            normalization: Normalization::None,
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// Parses comma- or tab-separated numeric rows. The delimiter is taken from
/// the first data line. A first line with no numeric cell is a header and is
/// skipped. Errors cite 1-based line and column numbers.
pub fn parse_csv(text: &str, has_label_column: bool) -> Result<DatasetTable> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();
    let Some(&(_, first)) = lines.peek() else {
        return Err(Error::Ingestion("empty file".into()));
    };
    let delim = if first.contains('\t') { '\t' } else { ',' };
    if first.split(delim).all(|c| c.trim().parse::<f64>().is_err()) {
        lines.next();
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (line, text) in lines {
        let cells: Vec<&str> = text.split(delim).map(str::trim).collect();
        if *width.get_or_insert(cells.len()) != cells.len() {
            return Err(Error::Ingestion(format!(
                "row {line}: expected {} columns, found {}",
                width.unwrap_or(0),
                cells.len()
            )));
        }
        let mut values = Vec::with_capacity(cells.len());
        for (col, cell) in cells.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Ingestion(format!("row {line}, column {}: non-numeric cell {cell:?}", col + 1)))?;
            if !v.is_finite() {
                return Err(Error::Ingestion(format!(
                    "row {line}, column {}: non-finite value {cell:?}",
                    col + 1
                )));
            }
            values.push(v);
        }
        if has_label_column {
            let label = values.remove(0);
            if label.fract() != 0.0 {
                return Err(Error::Ingestion(format!(
                    "row {line}, column 1: label {label} is not an integer"
                )));
            }
            labels.push(label as i64);
        }
        if values.is_empty() {
            return Err(Error::Ingestion(format!("row {line}: no feature columns")));
        }
        features.push(values);
    }
    if features.is_empty() {
        return Err(Error::Ingestion("no data rows".into()));
    }
    Ok(DatasetTable::new(features, has_label_column.then_some(labels)))
}

pub fn load_csv(path: &Path, has_label_column: bool) -> Result<DatasetTable> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", path.display())))?;
    parse_csv(&text, has_label_column).map_err(|e| match e {
        Error::Ingestion(m) => Error::Ingestion(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Formats `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Header line then comma-separated rows, label first when present, 17
/// significant digits.
pub fn to_csv(table: &DatasetTable) -> String {
    let mut header: Vec<String> = table.labels.iter().map(|_| "label".to_string()).collect();
    header.extend((0..table.dim()).map(|j| format!("x{j}")));
    let mut out = header.join(",") + "\n";
    for (i, row) in table.features.iter().enumerate() {
        let mut cells: Vec<String> = Vec::with_capacity(row.len() + 1);
        if let Some(labels) = &table.labels {
            cells.push(labels[i].to_string());
        }
        cells.extend(row.iter().map(|&v| fmt_f64(v)));
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    #[default]
    Minmax01,
    Zscore,
    None,
}

/// Fitted normalization parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Normalization {
    None,
    /// Global `(x − min)/(max − min)`.
    Minmax01 {
        min: f64,
        max: f64,
    },
    /// Per-feature `(x − mean)/std`, population std.
    Zscore {
        mean: Vec<f64>,
        std: Vec<f64>,
    },
}

impl Normalization {
    pub fn fit(rows: &[Vec<f64>], mode: NormalizationMode) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Ingestion("cannot normalize an empty table".into()));
        }
        match mode {
            NormalizationMode::None => Ok(Normalization::None),
            NormalizationMode::Minmax01 => {
                let (min, max) = rows
                    .iter()
                    .flatten()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    });
                if !(max > min) {
                    return Err(Error::Degenerate(format!("constant table ({min}) has no minmax scale")));
                }
                Ok(Normalization::Minmax01 { min, max })
            }
            NormalizationMode::Zscore => {
                let n = rows.len() as f64;
                let d = rows[0].len();
                let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
                let std: Vec<f64> = (0..d)
                    .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
                    .collect();
                if let Some(j) = std.iter().position(|&s| !(s > 0.0)) {
                    return Err(Error::Degenerate(format!("feature {} is constant", j + 1)));
                }
                Ok(Normalization::Zscore { mean, std })
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Normalization::None => x.to_vec(),
            Normalization::Minmax01 { min, max } => x.iter().map(|v| (v - min) / (max - min)).collect(),
            Normalization::Zscore { mean, std } => x.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s).collect(),
        }
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Normalization::None => y.to_vec(),
            Normalization::Minmax01 { min, max } => y.iter().map(|v| v * (max - min) + min).collect(),
            Normalization::Zscore { mean, std } => y.iter().zip(mean).zip(std).map(|((v, m), s)| v * s + m).collect(),
        }
    }
}

/// Fits `mode` on `table` and returns the normalized table.
pub fn normalize(table: &DatasetTable, mode: NormalizationMode) -> Result<DatasetTable> {
    if table.normalization != Normalization::None {
        return Err(Error::Contract("table is already normalized".into()));
    }
    let norm = Normalization::fit(&table.features, mode)?;
    Ok(DatasetTable {
        features: table.features.iter().map(|r| norm.apply(r)).collect(),
        labels: table.labels.clone(),
        normalization: norm,
    })
}

pub fn denormalize(table: &DatasetTable) -> DatasetTable {
    DatasetTable {
        features: table.features.iter().map(|r| table.normalization.invert(r)).collect(),
        labels: table.labels.clone(),
        normalization: Normalization::None,
    }
}

/// Parameters of the six-class control-chart generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlChartParams {
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_length")]
    pub length: usize,
}

fn default_per_class() -> usize {
    100
}
fn default_length() -> usize {
    60
}

impl Default for ControlChartParams {
    fn default() -> Self {
        Self {
            per_class: default_per_class(),
            length: default_length(),
        }
    }
}

pub const CONTROL_CHART_CLASSES: [&str; 6] = [
    "constant",
    "cyclic",
    "increasing",
    "decreasing",
    "up_shift",
    "down_shift",
];

/// Six trend classes (labels 1..=6 in [`CONTROL_CHART_CLASSES`] order) around
/// level 30 with uniform noise `2·U(−3, 3)`. Cyclic: amplitude in `[10, 15]`,
/// period in `[10, 15]`. Trends: slope in `[0.2, 0.5]`. Shifts: size in
/// `[7.5, 20]` starting uniformly in the middle third. Rows are class-major.
pub fn control_chart(params: &ControlChartParams, rng: &mut Rng) -> Result<DatasetTable> {
    if params.per_class == 0 || params.length < 3 {
        return Err(Error::Config(
            "control_chart needs per_class >= 1 and length >= 3".into(),
        ));
    }
    let n = params.length;
    let mut features = Vec::with_capacity(6 * params.per_class);
    let mut labels = Vec::with_capacity(6 * params.per_class);
    for class in 0..6 {
        for _ in 0..params.per_class {
            let amp = rng.uniform_range(10.0, 15.0);
            let period = rng.uniform_range(10.0, 15.0);
            let slope = rng.uniform_range(0.2, 0.5);
            let shift = rng.uniform_range(7.5, 20.0);
            let start = n / 3 + rng.below(n / 3 + 1);
            let row = (0..n)
                .map(|t| {
                    let base = 30.0 + 2.0 * rng.uniform_range(-3.0, 3.0);
                    let tf = (t + 1) as f64;
                    let step = if t >= start { shift } else { 0.0 };
                    base + match class {
                        0 => 0.0,
                        1 => amp * (2.0 * std::f64::consts::PI * tf / period).sin(),
                        2 => slope * tf,
                        3 => -slope * tf,
                        4 => step,
                        _ => -step,
                    }
                })
                .collect();
            features.push(row);
            labels.push(class as i64 + 1);
        }
    }
    Ok(DatasetTable::new(features, Some(labels)))
}
