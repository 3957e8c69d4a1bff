//! CSV ingestion: z-score normalization of numeric columns, one-hot blocks for
//! categorical columns, contiguous class indices for the label.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Record};
use crate::error::{Error, Result};

/// Variance floor used when scaling numeric columns.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Declares the feature columns, the label column and an optional id column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Schema> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading schema {}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::from(e).context(format!("parsing schema {}", path.display())))
    }

    fn expected_width(&self) -> usize {
        self.columns.len() + 1 + usize::from(self.id.is_some())
    }
}

/// Unparsed CSV contents with the source line of every row.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub lines: Vec<u64>,
}

impl RawTable {
    pub fn new(header: Vec<String>, rows: Vec<Vec<String>>) -> Self {
        let lines = (0..rows.len() as u64).map(|i| i + 2).collect();
        RawTable {
            path: PathBuf::from("<memory>"),
            header,
            rows,
            lines,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{}: column `{name}` named in schema is missing", self.path.display())))
    }

    fn parse_error(&self, row: usize, message: String) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.lines[row],
            message,
        }
    }

    fn numeric(&self, row: usize, col: usize) -> Result<f64> {
        let cell = self.rows[row][col].trim();
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.parse_error(row, format!("column `{}`: `{cell}` is not a finite number", self.header[col]))),
        }
    }
}

/// Reads a CSV with a header row. Rows whose field count differs from the
/// header are rejected with their line number.
pub fn read_table(path: &Path) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::from(e).context(format!("opening {}", path.display())))?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        rows.push(rec.iter().map(|c| c.trim().to_string()).collect());
        lines.push(line);
    }
    Ok(RawTable {
        path: path.to_path_buf(),
        header,
        rows,
        lines,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnEncoding {
    Numeric { name: String, mean: f64, std: f64 },
    Categorical { name: String, levels: Vec<String> },
}

impl ColumnEncoding {
    pub fn width(&self) -> usize {
        match self {
            ColumnEncoding::Numeric { .. } => 1,
            ColumnEncoding::Categorical { levels, .. } => levels.len(),
        }
    }
}

/// Fitted encoding metadata. Re-applying it to the table it was fitted on
/// reproduces the same matrix bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub columns: Vec<ColumnEncoding>,
    pub label: String,
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl Encoding {
    /// Computes scaling statistics, category levels and class names from `table`.
    pub fn fit(table: &RawTable, schema: &Schema) -> Result<Encoding> {
        check_header(table, schema)?;
        let mut columns = Vec::with_capacity(schema.columns.len());
        for spec in &schema.columns {
            let col = table.column(&spec.name)?;
            columns.push(match spec.kind {
                ColumnKind::Numeric => {
                    let values = (0..table.rows.len())
                        .map(|r| table.numeric(r, col))
                        .collect::<Result<Vec<f64>>>()?;
                    let n = values.len().max(1) as f64;
                    let mean = values.iter().sum::<f64>() / n;
                    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    ColumnEncoding::Numeric {
                        name: spec.name.clone(),
                        mean,
                        std: var.max(VARIANCE_FLOOR).sqrt(),
                    }
                }
                ColumnKind::Categorical => {
                    let levels: BTreeSet<&str> = table.rows.iter().map(|row| row[col].as_str()).collect();
                    ColumnEncoding::Categorical {
                        name: spec.name.clone(),
                        levels: levels.into_iter().map(str::to_string).collect(),
                    }
                }
            });
        }
        let label_col = table.column(&schema.label)?;
        let classes: BTreeSet<&str> = table.rows.iter().map(|row| row[label_col].as_str()).collect();
        Ok(Encoding {
            columns,
            label: schema.label.clone(),
            classes: classes.into_iter().map(str::to_string).collect(),
            id: schema.id.clone(),
        })
    }

    pub fn schema(&self) -> Schema {
        Schema {
            columns: self
                .columns
                .iter()
                .map(|c| match c {
                    ColumnEncoding::Numeric { name, .. } => ColumnSpec {
                        name: name.clone(),
                        kind: ColumnKind::Numeric,
                    },
                    ColumnEncoding::Categorical { name, .. } => ColumnSpec {
                        name: name.clone(),
                        kind: ColumnKind::Categorical,
                    },
                })
                .collect(),
            label: self.label.clone(),
            id: self.id.clone(),
        }
    }

    pub fn width(&self) -> usize {
        self.columns.iter().map(ColumnEncoding::width).sum()
    }

    /// Encodes `table`. Category levels or class names not seen during
    /// fitting are appended to the encoding.
    pub fn encode(&mut self, table: &RawTable, name: &str) -> Result<Dataset> {
        let schema = self.schema();
        check_header(table, &schema)?;
        let label_col = table.column(&self.label)?;
        let id_col = self.id.as_deref().map(|n| table.column(n)).transpose()?;
        let mut col_index = Vec::with_capacity(self.columns.len());
        for c in &mut self.columns {
            let idx = table.column(match c {
                ColumnEncoding::Numeric { name, .. } | ColumnEncoding::Categorical { name, .. } => name,
            })?;
            if let ColumnEncoding::Categorical { levels, .. } = c {
                for row in &table.rows {
                    if !levels.iter().any(|l| *l == row[idx]) {
                        levels.push(row[idx].clone());
                    }
                }
            }
            col_index.push(idx);
        }
        for row in &table.rows {
            if !self.classes.iter().any(|c| *c == row[label_col]) {
                self.classes.push(row[label_col].clone());
            }
        }

        let width = self.width();
        let mut records = Vec::with_capacity(table.rows.len());
        for (r, row) in table.rows.iter().enumerate() {
            let mut features = Vec::with_capacity(width);
            for (c, &idx) in self.columns.iter().zip(&col_index) {
                match c {
                    ColumnEncoding::Numeric { mean, std, .. } => {
                        let v = table.numeric(r, idx)?;
                        features.push((v - mean) / std);
                    }
                    ColumnEncoding::Categorical { levels, .. } => {
                        features.extend(levels.iter().map(|l| if *l == row[idx] { 1.0 } else { 0.0 }));
                    }
                }
            }
            let label = self.classes.iter().position(|c| *c == row[label_col]).expect("class registered above");
            let id = match id_col {
                Some(i) => row[i].clone(),
                None => format!("row-{}", r + 1),
            };
            records.push(Record { id, features, label });
        }
        let mut ds = Dataset {
            name: name.to_string(),
            records,
            class_count: self.classes.len(),
            encoding: None,
        };
        ds.validate()?;
        ds.encoding = Some(self.clone());
        Ok(ds)
    }
}

fn check_header(table: &RawTable, schema: &Schema) -> Result<()> {
    if table.header.len() != schema.expected_width() {
        return Err(Error::Config(format!(
            "{}: header has {} columns but the schema declares {}",
            table.path.display(),
            table.header.len(),
            schema.expected_width()
        )));
    }
    Ok(())
}

/// Loads a CSV, fitting the encoding on the file itself.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let table = read_table(path)?;
    let mut enc = Encoding::fit(&table, schema)?;
    let name = path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
    enc.encode(&table, &name)
}
