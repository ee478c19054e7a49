//! Per-agent samples and the dataset CSV format.
//!
//! The CSV schema written by [`write_csv`] is `agent_id,x_1,...,x_d[,y]`, one
//! row per sample, numbers at 17 significant digits.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::embedding::Scope;
use crate::error::{check_dim, Error, Result};
use crate::fmt_num;

#[derive(Clone, Debug, PartialEq)]
pub struct AgentDataset {
    x: DMatrix<f64>,
    y: Option<DVector<f64>>,
    group: Option<usize>,
}

impl AgentDataset {
    pub fn new(x: DMatrix<f64>, y: Option<DVector<f64>>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::input("agent dataset must contain at least one row"));
        }
        if x.ncols() == 0 {
            return Err(Error::input("agent dataset must have at least one feature"));
        }
        if let Some(y) = &y {
            check_dim(x.nrows(), y.len())?;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::input("non-finite label"));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite feature"));
        }
        Ok(AgentDataset { x, y, group: None })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Option<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        for r in rows {
            check_dim(d, r.len())?;
        }
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(x, y.map(DVector::from_vec))
    }

    pub fn with_group(mut self, group: usize) -> Self {
        self.group = Some(group);
        self
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> Option<&DVector<f64>> {
        self.y.as_ref()
    }

    pub fn group(&self) -> Option<usize> {
        self.group
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Dimension of the points produced by [`AgentDataset::points`].
    pub fn point_dim(&self, scope: Scope) -> usize {
        match (scope, &self.y) {
            (Scope::FullTuple, Some(_)) => self.feature_dim() + 1,
            _ => self.feature_dim(),
        }
    }

    /// Rows as points: `(x, y)` tuples for [`Scope::FullTuple`] (just `x` when
    /// there is no label column), `x` alone for [`Scope::FeaturesOnly`].
    pub fn points(&self, scope: Scope) -> Result<Vec<Vec<f64>>> {
        if scope == Scope::FeaturesOnly && self.y.is_none() {
            return Err(Error::input(
                "features-only embedding requires a feature/label split",
            ));
        }
        let with_label = scope == Scope::FullTuple;
        Ok((0..self.n())
            .map(|i| {
                let mut p = self.row(i);
                if let (true, Some(y)) = (with_label, &self.y) {
                    p.push(y[i]);
                }
                p
            })
            .collect())
    }

    /// Concatenation of `self` repeated `times` times.
    pub fn repeated(&self, times: usize) -> Self {
        let n = self.n();
        let x = DMatrix::from_fn(n * times, self.feature_dim(), |i, j| self.x[(i % n, j)]);
        let y = self
            .y
            .as_ref()
            .map(|y| DVector::from_fn(n * times, |i, _| y[i % n]));
        AgentDataset {
            x,
            y,
            group: self.group,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureColumns {
    /// Every column whose name starts with the prefix, in file order.
    Prefix(String),
    Named(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvSchema {
    pub agent_column: String,
    pub features: FeatureColumns,
    pub label_column: Option<String>,
    pub group_column: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            agent_column: "agent_id".into(),
            features: FeatureColumns::Prefix("x_".into()),
            label_column: Some("y".into()),
            group_column: None,
        }
    }
}

/// A dataset read from CSV together with its agent identifier.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedDataset {
    pub agent_id: String,
    pub data: AgentDataset,
}

/// Reads one dataset per distinct agent id, in order of first appearance,
/// preserving row order within each agent. Row numbers in errors count data
/// rows from 1 (the header is not counted).
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<NamedDataset>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, &path.display().to_string(), schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, origin: &str, schema: &CsvSchema) -> Result<Vec<NamedDataset>> {
    let csv_err = |row: usize, column: &str, message: String| Error::Csv {
        path: origin.to_string(),
        row,
        column: column.to_string(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(0, "", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| csv_err(0, name, "missing column".into()))
    };
    let agent_idx = find(&schema.agent_column)?;
    let feature_idx: Vec<(usize, String)> = match &schema.features {
        FeatureColumns::Prefix(p) => headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(p.as_str()))
            .map(|(i, h)| (i, h.clone()))
            .collect(),
        FeatureColumns::Named(names) => names
            .iter()
            .map(|n| find(n).map(|i| (i, n.clone())))
            .collect::<Result<_>>()?,
    };
    if feature_idx.is_empty() {
        return Err(csv_err(0, "", "no feature columns".into()));
    }
    let label_idx = schema.label_column.as_deref().map(find).transpose()?;
    let group_idx = schema.group_column.as_deref().map(find).transpose()?;

    struct Acc {
        id: String,
        rows: Vec<Vec<f64>>,
        labels: Vec<f64>,
        group: Option<usize>,
    }
    let mut order: Vec<Acc> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| csv_err(row, "", e.to_string()))?;
        let cell = |i: usize, name: &str| -> Result<f64> {
            let raw = record
                .get(i)
                .ok_or_else(|| csv_err(row, name, "missing cell".into()))?;
            let v: f64 = raw
                .parse()
                .map_err(|_| csv_err(row, name, format!("not a number: '{raw}'")))?;
            if !v.is_finite() {
                return Err(csv_err(row, name, format!("non-finite value '{raw}'")));
            }
            Ok(v)
        };
        let id = record
            .get(agent_idx)
            .ok_or_else(|| csv_err(row, &schema.agent_column, "missing cell".into()))?
            .to_string();
        if id.is_empty() {
            return Err(csv_err(row, &schema.agent_column, "empty agent id".into()));
        }
        let features = feature_idx
            .iter()
            .map(|(i, name)| cell(*i, name))
            .collect::<Result<Vec<f64>>>()?;
        let label = match (label_idx, &schema.label_column) {
            (Some(i), Some(name)) => Some(cell(i, name)?),
            _ => None,
        };
        let group = match (group_idx, &schema.group_column) {
            (Some(i), Some(name)) => {
                let raw = record.get(i).unwrap_or("");
                Some(
                    raw.parse::<usize>()
                        .map_err(|_| csv_err(row, name, format!("not a group index: '{raw}'")))?,
                )
            }
            _ => None,
        };
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(Acc {
                id: id.clone(),
                rows: Vec::new(),
                labels: Vec::new(),
                group,
            });
            order.len() - 1
        });
        let acc = &mut order[slot];
        if acc.group != group {
            return Err(csv_err(
                row,
                schema.group_column.as_deref().unwrap_or(""),
                format!("agent '{id}' has inconsistent group"),
            ));
        }
        acc.rows.push(features);
        if let Some(l) = label {
            acc.labels.push(l);
        }
    }
    if order.is_empty() {
        return Err(csv_err(0, "", "file contains no data rows".into()));
    }
    order
        .into_iter()
        .map(|acc| {
            let y = label_idx.map(|_| acc.labels);
            let mut data = AgentDataset::from_rows(&acc.rows, y)?;
            if let Some(g) = acc.group {
                data = data.with_group(g);
            }
            Ok(NamedDataset {
                agent_id: acc.id,
                data,
            })
        })
        .collect()
}

/// Writes `agent_id,x_1..x_d[,y]`; agent ids are the dataset indices.
pub fn write_csv<W: Write>(mut out: W, datasets: &[AgentDataset]) -> std::io::Result<()> {
    let Some(first) = datasets.first() else {
        return Ok(());
    };
    let d = first.feature_dim();
    let labelled = first.y().is_some();
    let mut header = String::from("agent_id");
    for j in 1..=d {
        header.push_str(&format!(",x_{j}"));
    }
    if labelled {
        header.push_str(",y");
    }
    writeln!(out, "{header}")?;
    for (k, ds) in datasets.iter().enumerate() {
        for i in 0..ds.n() {
            let mut line = k.to_string();
            for j in 0..ds.feature_dim() {
                line.push(',');
                line.push_str(&fmt_num(ds.x()[(i, j)]));
            }
            if let Some(y) = ds.y() {
                line.push(',');
                line.push_str(&fmt_num(y[i]));
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}
