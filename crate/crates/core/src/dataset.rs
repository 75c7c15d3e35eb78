//! Labeled datasets with a binary protected attribute.
//!
//! A [`Dataset`] holds `n` feature vectors in `R^d`, labels in `{-1, +1}` and
//! group tags in `{0, 1}`. It is validated on construction and immutable
//! afterwards. [`load_dataset`] reads a delimited table according to a
//! [`Schema`]; [`standardize`] rescales every feature column to zero mean and
//! unit population standard deviation; [`group_stats`] computes the group
//! counts and the bias vector `u = sum_i (z_i - z_bar) x_i`.

use std::collections::BTreeMap;
use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Vec<i8>,
    groups: Vec<u8>,
    ids: Vec<String>,
    feature_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from row-major features. Ids default to the row
    /// index, feature names to `x0, x1, ...`.
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<i8>, groups: Vec<u8>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::InvalidData(format!(
                "row {i} has {} features, expected {d}",
                r.len()
            )));
        }
        let features = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        Self::from_matrix(features, labels, groups)
    }

    pub fn from_matrix(features: DMatrix<f64>, labels: Vec<i8>, groups: Vec<u8>) -> Result<Self> {
        let n = features.nrows();
        let ids = (0..n).map(|i| i.to_string()).collect();
        let feature_names = (0..features.ncols()).map(|j| format!("x{j}")).collect();
        let ds = Dataset {
            features,
            labels,
            groups,
            ids,
            feature_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(Error::InvalidData(format!(
                "{} ids for {} rows",
                ids.len(),
                self.n()
            )));
        }
        self.ids = ids;
        Ok(self)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.d() {
            return Err(Error::InvalidData(format!(
                "{} feature names for {} columns",
                names.len(),
                self.d()
            )));
        }
        self.feature_names = names;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if n < 2 {
            return Err(Error::TooFewRows {
                required: 2,
                found: n,
            });
        }
        if self.features.ncols() == 0 {
            return Err(Error::InvalidData(
                "at least one feature column is required".into(),
            ));
        }
        if self.labels.len() != n || self.groups.len() != n {
            return Err(Error::InvalidData(format!(
                "{n} rows but {} labels and {} groups",
                self.labels.len(),
                self.groups.len()
            )));
        }
        for i in 0..n {
            if self.features.row(i).iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "row {i} contains a non-finite value"
                )));
            }
        }
        if let Some(i) = self.labels.iter().position(|&y| y != 1 && y != -1) {
            return Err(Error::InvalidData(format!(
                "label {} at row {i} is not -1 or +1",
                self.labels[i]
            )));
        }
        if let Some(i) = self.groups.iter().position(|&z| z > 1) {
            return Err(Error::InvalidData(format!(
                "group {} at row {i} is not 0 or 1",
                self.groups[i]
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    /// Label of row `i` as a float.
    pub fn y(&self, i: usize) -> f64 {
        f64::from(self.labels[i])
    }

    pub fn groups(&self) -> &[u8] {
        &self.groups
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Count of rows carrying each label, `(negatives, positives)`.
    pub fn label_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        (self.n() - pos, pos)
    }

    /// Reorders rows so that row `k` of the result is row `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Dataset> {
        let n = self.n();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::InvalidParameter(
                "not a permutation of the rows".into(),
            ));
        }
        Ok(Dataset {
            features: DMatrix::from_fn(n, self.d(), |i, j| self.features[(perm[i], j)]),
            labels: perm.iter().map(|&p| self.labels[p]).collect(),
            groups: perm.iter().map(|&p| self.groups[p]).collect(),
            ids: perm.iter().map(|&p| self.ids[p].clone()).collect(),
            feature_names: self.feature_names.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub z_bar: f64,
    pub n0: usize,
    pub n1: usize,
    /// Bias vector `sum_i (z_i - z_bar) x_i`.
    pub u: DVector<f64>,
}

pub fn group_stats(ds: &Dataset) -> Result<GroupStats> {
    let n = ds.n();
    let n1 = ds.groups().iter().filter(|&&z| z == 1).count();
    let n0 = n - n1;
    if n0 == 0 {
        return Err(Error::GroupMissing(0));
    }
    if n1 == 0 {
        return Err(Error::GroupMissing(1));
    }
    let z_bar = n1 as f64 / n as f64;
    let mut u = DVector::zeros(ds.d());
    for (i, &z) in ds.groups().iter().enumerate() {
        let w = f64::from(z) - z_bar;
        for j in 0..ds.d() {
            u[j] += w * ds.features()[(i, j)];
        }
    }
    Ok(GroupStats { z_bar, n0, n1, u })
}

/// Rescales every feature column to mean 0 and population (1/n) standard
/// deviation 1. Labels, groups and ids are carried over unchanged.
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    let n = ds.n() as f64;
    let mut out = ds.clone();
    for j in 0..ds.d() {
        let col = ds.features.column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::DegenerateFeature(ds.feature_names[j].clone()));
        }
        for i in 0..ds.n() {
            out.features[(i, j)] = (ds.features[(i, j)] - mean) / sd;
        }
    }
    Ok(out)
}

/// Column roles and value encodings for [`load_dataset`].
///
/// The text form has one `key = value` pair per line; `#` starts a comment.
///
/// ```text
/// age = feature
/// education-num = feature
/// sex = group
/// income = label
/// label.>50K = +1
/// label.<=50K = -1
/// group.Female = 0
/// group.Male = 1
/// map.workclass.Private = 1
/// ```
///
/// Roles are `feature`, `label`, `group`, `id` and `ignore`. Feature columns
/// keep the order in which they are declared. `map.<column>.<value>` declares
/// an integer code for a categorical feature value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub label: Option<String>,
    pub group: Option<String>,
    pub id: Option<String>,
    pub features: Vec<String>,
    pub label_map: BTreeMap<String, i8>,
    pub group_map: BTreeMap<String, u8>,
    pub feature_maps: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Schema {
    pub fn parse(text: &str) -> Result<Schema> {
        let mut schema = Schema::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            // Encoded values may themselves contain '=' (e.g. "<=50K").
            let (key, value) = line.rsplit_once('=').ok_or_else(|| {
                Error::Schema(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Schema(format!("line {}: {what}", lineno + 1));
            if let Some(v) = key.strip_prefix("label.") {
                let code = match value {
                    "+1" | "1" => 1,
                    "-1" => -1,
                    _ => return Err(bad("label codes must be +1 or -1")),
                };
                schema.label_map.insert(v.to_string(), code);
            } else if let Some(v) = key.strip_prefix("group.") {
                let code = match value {
                    "0" => 0,
                    "1" => 1,
                    _ => return Err(bad("group codes must be 0 or 1")),
                };
                schema.group_map.insert(v.to_string(), code);
            } else if let Some(rest) = key.strip_prefix("map.") {
                let (col, v) = rest
                    .split_once('.')
                    .ok_or_else(|| bad("expected map.<column>.<value>"))?;
                let code: f64 = value
                    .parse()
                    .map_err(|_| bad("map code must be a number"))?;
                schema
                    .feature_maps
                    .entry(col.to_string())
                    .or_default()
                    .insert(v.to_string(), code);
            } else {
                let col = key.to_string();
                match value {
                    "feature" => schema.features.push(col),
                    "label" => schema.label = Some(col),
                    "group" => schema.group = Some(col),
                    "id" => schema.id = Some(col),
                    "ignore" => {}
                    other => return Err(bad(&format!("unknown role {other:?}"))),
                }
            }
        }
        Ok(schema)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Schema> {
        Schema::parse(&std::fs::read_to_string(path)?)
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table<R: Read>(mut source: R) -> Result<Table> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let first = text.lines().next().unwrap_or("");
    let delimiter = if first.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: k + 1,
            message: e.to_string(),
        })?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(Table { header, rows })
}

fn column_index(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("column {name:?} not found in header")))
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "?"
}

/// Parses feature columns. Rows are numbered from 1 (the header is row 0).
fn parse_features(table: &Table, schema: &Schema) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if schema.features.is_empty() {
        return Err(Error::Schema("no feature columns declared".into()));
    }
    let cols = schema
        .features
        .iter()
        .map(|f| column_index(&table.header, f))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(table.rows.len());
    let mut missing = Vec::new();
    for (k, row) in table.rows.iter().enumerate() {
        let mut values = Vec::with_capacity(cols.len());
        for (&c, name) in cols.iter().zip(&schema.features) {
            let cell = row[c].as_str();
            if is_missing(cell) {
                missing.push(k + 1);
                break;
            }
            let v = match schema.feature_maps.get(name) {
                Some(map) => *map.get(cell).ok_or_else(|| Error::Encoding {
                    row: k + 1,
                    column: name.clone(),
                    value: cell.to_string(),
                })?,
                None => cell.parse::<f64>().map_err(|_| Error::Parse {
                    row: k + 1,
                    message: format!("column {name:?}: cannot parse {cell:?} as a number"),
                })?,
            };
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: k + 1,
                    message: format!("column {name:?}: non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
        out.push(values);
    }
    Ok((out, missing))
}

/// Reads a delimited table (comma or tab, header row required) into a
/// validated [`Dataset`]. Rows with missing cells in any used column are
/// rejected together with their row numbers.
pub fn load_dataset<R: Read>(source: R, schema: &Schema) -> Result<Dataset> {
    let table = read_table(source)?;
    let label_col = schema
        .label
        .as_deref()
        .ok_or_else(|| Error::Schema("no label column declared".into()))?;
    let group_col = schema
        .group
        .as_deref()
        .ok_or_else(|| Error::Schema("no group column declared".into()))?;
    if schema.label_map.is_empty() || schema.group_map.is_empty() {
        return Err(Error::Schema(
            "label and group encodings must be declared explicitly".into(),
        ));
    }
    let li = column_index(&table.header, label_col)?;
    let gi = column_index(&table.header, group_col)?;
    let ii = schema
        .id
        .as_deref()
        .map(|c| column_index(&table.header, c))
        .transpose()?;

    let (rows, mut missing) = parse_features(&table, schema)?;
    let mut labels = Vec::with_capacity(rows.len());
    let mut groups = Vec::with_capacity(rows.len());
    for (k, row) in table.rows.iter().enumerate() {
        let (yl, zl) = (row[li].as_str(), row[gi].as_str());
        if is_missing(yl) || is_missing(zl) {
            missing.push(k + 1);
            continue;
        }
        labels.push(*schema.label_map.get(yl).ok_or_else(|| Error::Encoding {
            row: k + 1,
            column: label_col.to_string(),
            value: yl.to_string(),
        })?);
        groups.push(*schema.group_map.get(zl).ok_or_else(|| Error::Encoding {
            row: k + 1,
            column: group_col.to_string(),
            value: zl.to_string(),
        })?);
    }
    if !missing.is_empty() {
        missing.sort_unstable();
        missing.dedup();
        return Err(Error::MissingValues { rows: missing });
    }
    if rows.len() < 2 {
        return Err(Error::TooFewRows {
            required: 2,
            found: rows.len(),
        });
    }
    let ids = match ii {
        Some(c) => table.rows.iter().map(|r| r[c].clone()).collect(),
        None => (0..rows.len()).map(|i| i.to_string()).collect(),
    };
    Dataset::new(rows, labels, groups)?
        .with_ids(ids)?
        .with_feature_names(schema.features.clone())
}

/// Reads only the feature columns of a table, ignoring label and group
/// roles. Returns the row ids and an `n x d` matrix.
pub fn load_points<R: Read>(source: R, schema: &Schema) -> Result<(Vec<String>, DMatrix<f64>)> {
    let table = read_table(source)?;
    let (rows, missing) = parse_features(&table, schema)?;
    if !missing.is_empty() {
        return Err(Error::MissingValues { rows: missing });
    }
    let ids = match schema.id.as_deref() {
        Some(c) => {
            let c = column_index(&table.header, c)?;
            table.rows.iter().map(|r| r[c].clone()).collect()
        }
        None => (0..rows.len()).map(|i| i.to_string()).collect(),
    };
    let d = schema.features.len();
    Ok((ids, DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j])))
}
