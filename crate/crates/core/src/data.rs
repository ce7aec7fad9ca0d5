//! CSV ingestion, preprocessing and stratification.
//!
//! A [`RawTable`] holds cells exactly as read. [`preprocess`] turns it into a
//! [`Dataset`]: protected columns become per-row group keys, the class column
//! becomes a boolean outcome, and every remaining ordered column is min-max
//! scaled into `[0, 1]`. Unordered categorical columns are removed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::Features;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn new(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for name in &header {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate header `{name}`")));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != header.len() {
                return Err(Error::Row {
                    row: i,
                    message: format!("expected {} cells, found {}", header.len(), row.len()),
                });
            }
        }
        Ok(RawTable { header, rows })
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let idx = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[idx].as_str()).collect())
    }

    /// Appends the rows of `other`, which must have an identical header.
    pub fn concat(&self, other: &RawTable) -> Result<RawTable> {
        if self.header != other.header {
            return Err(Error::Schema("cannot concatenate tables with different headers".into()));
        }
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Ok(RawTable {
            header: self.header.clone(),
            rows,
        })
    }
}

pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<RawTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, has_header)
}

/// Parses RFC-4180 CSV. Lines starting with `#` are comments.
pub fn read_csv<R: Read>(reader: R, has_header: bool) -> Result<RawTable> {
    read_delimited(reader, has_header, b',')
}

pub fn read_delimited<R: Read>(reader: R, has_header: bool, delimiter: u8) -> Result<RawTable> {
    read_with(reader, has_header, delimiter, b'#')
}

fn read_with<R: Read>(reader: R, has_header: bool, delimiter: u8, comment: u8) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .comment(Some(comment))
        .flexible(false)
        .from_reader(reader);

    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let cells: Vec<String> = record.iter().map(str::to_string).collect();
        if header.is_none() {
            if has_header {
                header = Some(cells);
                continue;
            }
            header = Some((0..cells.len()).map(|i| format!("col{i}")).collect());
        }
        rows.push(cells);
    }
    RawTable::new(header.unwrap_or_default(), rows)
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::Parse {
            line,
            message: format!("expected {expected_len} cells, found {len}"),
        },
        _ => Error::Parse {
            line,
            message: err.to_string(),
        },
    }
}

/// Thresholds a numeric protected column into two labels before grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binarize {
    pub threshold: f64,
    pub below: String,
    pub at_or_above: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub protected_columns: Vec<String>,
    pub class_column: String,
    pub positive_label: String,
    #[serde(default)]
    pub minority_values: BTreeMap<String, String>,
    #[serde(default)]
    pub ordered_categorical_maps: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub drop_columns: Vec<String>,
    #[serde(default)]
    pub binarize_protected: BTreeMap<String, Binarize>,
    /// When set, the class is `YES` iff the raw class column value is at
    /// least this threshold, and the class column stays an attribute.
    #[serde(default)]
    pub class_threshold: Option<f64>,
    #[serde(default = "default_missing_markers")]
    pub missing_markers: Vec<String>,
    /// Column names for files without a header row.
    #[serde(default)]
    pub column_names: Option<Vec<String>>,
    /// Single-byte field separator; `,` when absent.
    #[serde(default)]
    pub delimiter: Option<char>,
    /// Leading lines to skip before parsing.
    #[serde(default)]
    pub skip_lines: usize,
    /// Lines starting with this character are ignored; `#` when absent.
    #[serde(default)]
    pub comment: Option<char>,
    /// Further class labels read as positive.
    #[serde(default)]
    pub positive_aliases: Vec<String>,
    /// Per protected column, raw values to replace before grouping.
    #[serde(default)]
    pub group_aliases: BTreeMap<String, BTreeMap<String, String>>,
}

fn default_missing_markers() -> Vec<String> {
    vec![String::new(), "?".into(), "NA".into()]
}

impl SchemaConfig {
    pub fn new(
        protected_columns: Vec<String>,
        class_column: impl Into<String>,
        positive_label: impl Into<String>,
    ) -> Self {
        SchemaConfig {
            protected_columns,
            class_column: class_column.into(),
            positive_label: positive_label.into(),
            minority_values: BTreeMap::new(),
            ordered_categorical_maps: BTreeMap::new(),
            drop_columns: Vec::new(),
            binarize_protected: BTreeMap::new(),
            class_threshold: None,
            missing_markers: default_missing_markers(),
            column_names: None,
            delimiter: None,
            skip_lines: 0,
            comment: None,
            positive_aliases: Vec::new(),
            group_aliases: BTreeMap::new(),
        }
    }

    pub fn with_minority(mut self, column: &str, value: &str) -> Self {
        self.minority_values.insert(column.into(), value.into());
        self
    }

    /// Reads a JSON (`.json`) or TOML config file.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: SchemaConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positive_label.is_empty() && self.class_threshold.is_none() {
            return Err(Error::Config("positive_label must be nonempty".into()));
        }
        if self.protected_columns.is_empty() {
            return Err(Error::Config("at least one protected column is required".into()));
        }
        if self.protected_columns.contains(&self.class_column) {
            return Err(Error::Config(format!(
                "class column `{}` is also listed as protected",
                self.class_column
            )));
        }
        for (col, cats) in &self.ordered_categorical_maps {
            let unique: BTreeSet<_> = cats.iter().collect();
            if unique.len() != cats.len() {
                return Err(Error::Config(format!(
                    "ordered categories for `{col}` contain duplicates"
                )));
            }
        }
        Ok(())
    }

    /// Loads a delimited file per the config, naming its columns from
    /// `column_names` when set.
    pub fn load_table(&self, path: impl AsRef<Path>) -> Result<RawTable> {
        let path = path.as_ref();
        let byte = |c: Option<char>, default: u8| match c {
            None => Ok(default),
            Some(c) if c.is_ascii() => Ok(c as u8),
            Some(c) => Err(Error::Config(format!("`{c}` is not a single byte"))),
        };
        let delimiter = byte(self.delimiter, b',')?;
        let comment = byte(self.comment, b'#')?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let body = text.split_inclusive('\n').skip(self.skip_lines).collect::<String>();
        match &self.column_names {
            None => read_with(body.as_bytes(), true, delimiter, comment),
            Some(names) => {
                let t = read_with(body.as_bytes(), false, delimiter, comment)?;
                if names.len() != t.header.len() {
                    return Err(Error::Config(format!(
                        "{} column names for {} columns",
                        names.len(),
                        t.header.len()
                    )));
                }
                RawTable::new(names.clone(), t.rows)
            }
        }
    }

    fn is_missing(&self, cell: &str) -> bool {
        let cell = cell.trim();
        self.missing_markers.iter().any(|m| m == cell)
    }
}

/// Tuple of protected values identifying a group.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey(pub Vec<String>);

impl GroupKey {
    pub fn single(value: impl Into<String>) -> Self {
        GroupKey(vec![value.into()])
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join("|"))
    }
}

/// Partition of row indices by group key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupIndex {
    columns: Vec<String>,
    groups: BTreeMap<GroupKey, Vec<usize>>,
}

impl GroupIndex {
    fn build(columns: Vec<String>, keys: impl Iterator<Item = GroupKey>) -> Self {
        let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
        for (row, key) in keys.enumerate() {
            groups.entry(key).or_default().push(row);
        }
        GroupIndex { columns, groups }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn get(&self, key: &GroupKey) -> Option<&[usize]> {
        self.groups.get(key).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&GroupKey, &[usize])> {
        self.groups.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &GroupKey> {
        self.groups.keys()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub min: f64,
    pub max: f64,
}

impl ColumnScale {
    fn fit(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ColumnScale { min, max }
    }

    pub fn is_constant(&self) -> bool {
        self.max <= self.min
    }

    pub fn scale(&self, v: f64) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    pub fn unscale(&self, v: f64) -> f64 {
        if self.is_constant() {
            self.min
        } else {
            self.min + v * (self.max - self.min)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PreprocessReport {
    /// Rows dropped because a retained cell was missing.
    pub dropped_missing: usize,
    /// Rows dropped because a retained cell could not be parsed.
    pub dropped_unparseable: usize,
    /// Unordered categorical columns removed from the attributes.
    pub removed_columns: Vec<String>,
    /// Columns with max = min; kept with every value 0.
    pub constant_columns: Vec<String>,
}

/// Preprocessed data: group keys, `[0,1]`-scaled ordered attributes, and
/// binary outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    protected_columns: Vec<String>,
    keys: Vec<GroupKey>,
    attribute_names: Vec<String>,
    columns: Vec<Vec<f64>>,
    labels: Vec<bool>,
    group_index: GroupIndex,
    scales: Vec<ColumnScale>,
    source_rows: Vec<usize>,
    minority_values: BTreeMap<String, String>,
    report: PreprocessReport,
}

impl Dataset {
    /// Builds a dataset from already-scaled columns.
    pub fn new(
        protected_columns: Vec<String>,
        keys: Vec<GroupKey>,
        attribute_names: Vec<String>,
        columns: Vec<Vec<f64>>,
        labels: Vec<bool>,
    ) -> Result<Self> {
        let n = keys.len();
        if labels.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: labels.len(),
            });
        }
        if attribute_names.len() != columns.len() {
            return Err(Error::LengthMismatch {
                left: attribute_names.len(),
                right: columns.len(),
            });
        }
        for col in &columns {
            if col.len() != n {
                return Err(Error::LengthMismatch {
                    left: n,
                    right: col.len(),
                });
            }
        }
        if keys.iter().any(|k| k.0.len() != protected_columns.len()) {
            return Err(Error::Schema("group key width differs from protected columns".into()));
        }
        let scales = vec![ColumnScale { min: 0.0, max: 1.0 }; columns.len()];
        let group_index = GroupIndex::build(protected_columns.clone(), keys.iter().cloned());
        Ok(Dataset {
            protected_columns,
            keys,
            attribute_names,
            columns,
            labels,
            group_index,
            scales,
            source_rows: (0..n).collect(),
            minority_values: BTreeMap::new(),
            report: PreprocessReport::default(),
        })
    }

    pub fn with_minority(mut self, column: &str, value: &str) -> Self {
        self.minority_values.insert(column.into(), value.into());
        self
    }

    pub fn with_scales(mut self, scales: Vec<ColumnScale>) -> Result<Self> {
        if scales.len() != self.columns.len() {
            return Err(Error::LengthMismatch {
                left: self.columns.len(),
                right: scales.len(),
            });
        }
        self.scales = scales;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn protected_columns(&self) -> &[String] {
        &self.protected_columns
    }

    pub fn keys(&self) -> &[GroupKey] {
        &self.keys
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        let idx = self.attribute_index(name)?;
        Ok(&self.columns[idx])
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize> {
        self.attribute_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn group_index(&self) -> &GroupIndex {
        &self.group_index
    }

    pub fn scales(&self) -> &[ColumnScale] {
        &self.scales
    }

    pub fn source_rows(&self) -> &[usize] {
        &self.source_rows
    }

    pub fn minority_values(&self) -> &BTreeMap<String, String> {
        &self.minority_values
    }

    pub fn report(&self) -> &PreprocessReport {
        &self.report
    }

    /// Row-major feature matrix over all attributes.
    pub fn features(&self) -> Features {
        let n = self.n_rows();
        let d = self.columns.len();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            for col in &self.columns {
                data.push(col[i]);
            }
        }
        Features::new(n, d, data).expect("dataset columns are rectangular")
    }

    /// Same rows, keys and labels with replacement attribute columns.
    pub fn with_columns(&self, columns: Vec<Vec<f64>>) -> Result<Dataset> {
        if columns.len() != self.columns.len() {
            return Err(Error::LengthMismatch {
                left: self.columns.len(),
                right: columns.len(),
            });
        }
        if let Some(bad) = columns.iter().find(|c| c.len() != self.n_rows()) {
            return Err(Error::LengthMismatch {
                left: self.n_rows(),
                right: bad.len(),
            });
        }
        Ok(Dataset {
            columns,
            ..self.clone()
        })
    }

    /// Same rows with the given labels.
    pub fn with_labels(&self, labels: Vec<bool>) -> Result<Dataset> {
        if labels.len() != self.n_rows() {
            return Err(Error::LengthMismatch {
                left: self.n_rows(),
                right: labels.len(),
            });
        }
        Ok(Dataset {
            labels,
            ..self.clone()
        })
    }

    /// Rows at `indices`, in the given order, with the group index rebuilt.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let keys: Vec<GroupKey> = indices.iter().map(|&i| self.keys[i].clone()).collect();
        let group_index = GroupIndex::build(self.protected_columns.clone(), keys.iter().cloned());
        Dataset {
            protected_columns: self.protected_columns.clone(),
            attribute_names: self.attribute_names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| indices.iter().map(|&i| c[i]).collect())
                .collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            source_rows: indices.iter().map(|&i| self.source_rows[i]).collect(),
            keys,
            group_index,
            scales: self.scales.clone(),
            minority_values: self.minority_values.clone(),
            report: self.report.clone(),
        }
    }

    /// Adds attribute columns; used to plant features in tests and
    /// synthetic experiments.
    pub fn with_extra_column(&self, name: &str, values: Vec<f64>) -> Result<Dataset> {
        if values.len() != self.n_rows() {
            return Err(Error::LengthMismatch {
                left: self.n_rows(),
                right: values.len(),
            });
        }
        let mut out = self.clone();
        out.attribute_names.push(name.to_string());
        out.columns.push(values);
        out.scales.push(ColumnScale { min: 0.0, max: 1.0 });
        Ok(out)
    }

    pub fn stratify(&self, columns: &[String]) -> Result<GroupIndex> {
        stratify(self, columns)
    }

    /// Whether a key contains the configured minority value of any column.
    pub fn is_protected_key(&self, key: &GroupKey) -> bool {
        self.protected_columns
            .iter()
            .zip(&key.0)
            .any(|(col, v)| self.minority_values.get(col) == Some(v))
    }

    /// Binary protected indicator per row: `false` for X=0 (minority),
    /// `true` for X=1. Requires a single protected column.
    pub fn binary_protected(&self) -> Result<Vec<bool>> {
        if self.protected_columns.len() != 1 {
            return Err(Error::InvalidInput(format!(
                "binary protected indicator needs exactly one protected column, have {}",
                self.protected_columns.len()
            )));
        }
        let col = &self.protected_columns[0];
        let minority = self
            .minority_values
            .get(col)
            .ok_or_else(|| Error::Config(format!("no minority value configured for `{col}`")))?;
        if !self.keys.iter().any(|k| &k.0[0] == minority) {
            return Err(Error::EmptyGroup(minority.clone()));
        }
        Ok(self.keys.iter().map(|k| &k.0[0] != minority).collect())
    }

    /// Table of scaled values with protected and class columns, suitable
    /// for feeding back into [`preprocess`].
    pub fn to_raw_table(&self, class_column: &str, positive: &str, negative: &str) -> RawTable {
        let mut header = self.protected_columns.clone();
        header.extend(self.attribute_names.iter().cloned());
        header.push(class_column.to_string());
        let rows = (0..self.n_rows())
            .map(|i| {
                let mut row = self.keys[i].0.clone();
                row.extend(self.columns.iter().map(|c| c[i].to_string()));
                row.push(if self.labels[i] { positive } else { negative }.to_string());
                row
            })
            .collect();
        RawTable { header, rows }
    }
}

/// Applies the preprocessing pipeline: protected and class columns leave
/// the attributes, unordered categorical columns are removed, ordered
/// categories become ranks, and every column is min-max scaled.
pub fn preprocess(table: &RawTable, config: &SchemaConfig) -> Result<Dataset> {
    config.validate()?;
    let class_idx = table.column_index(&config.class_column)?;
    let protected_idx: Vec<usize> = config
        .protected_columns
        .iter()
        .map(|c| table.column_index(c))
        .collect::<Result<_>>()?;
    for col in &config.drop_columns {
        table.column_index(col)?;
    }

    let excluded: BTreeSet<&str> = config
        .protected_columns
        .iter()
        .chain(config.drop_columns.iter())
        .map(String::as_str)
        .chain(config.class_threshold.is_none().then_some(config.class_column.as_str()))
        .collect();

    let mut report = PreprocessReport::default();
    let mut retained: Vec<(usize, Option<&Vec<String>>)> = Vec::new();
    for (idx, name) in table.header.iter().enumerate() {
        if excluded.contains(name.as_str()) {
            continue;
        }
        match config.ordered_categorical_maps.get(name) {
            Some(map) => retained.push((idx, Some(map))),
            None => {
                let numeric = table.rows.iter().all(|r| {
                    config.is_missing(&r[idx]) || parse_number(&r[idx]).is_some()
                });
                if numeric {
                    retained.push((idx, None));
                } else {
                    report.removed_columns.push(name.clone());
                }
            }
        }
    }

    let mut keys = Vec::new();
    let mut labels = Vec::new();
    let mut raw_columns: Vec<Vec<f64>> = vec![Vec::new(); retained.len()];
    let mut source_rows = Vec::new();
    let mut row_values = vec![0.0; retained.len()];

    'rows: for (r, row) in table.rows.iter().enumerate() {
        let class_cell = row[class_idx].trim();
        if config.is_missing(class_cell) {
            return Err(Error::Row {
                row: r,
                message: format!("missing class label in `{}`", config.class_column),
            });
        }
        let label = match config.class_threshold {
            Some(t) => ricci_threshold_value(class_cell, t).map_err(|_| Error::Row {
                row: r,
                message: format!("non-numeric class value `{class_cell}`"),
            })?,
            None => class_cell == config.positive_label || config.positive_aliases.iter().any(|a| a == class_cell),
        };

        let mut key = Vec::with_capacity(protected_idx.len());
        for (&pi, col) in protected_idx.iter().zip(&config.protected_columns) {
            let cell = row[pi].trim();
            if config.is_missing(cell) {
                report.dropped_missing += 1;
                continue 'rows;
            }
            match config.binarize_protected.get(col) {
                Some(bin) => match parse_number(cell) {
                    Some(v) if v < bin.threshold => key.push(bin.below.clone()),
                    Some(_) => key.push(bin.at_or_above.clone()),
                    None => {
                        report.dropped_unparseable += 1;
                        continue 'rows;
                    }
                },
                None => key.push(
                    config
                        .group_aliases
                        .get(col)
                        .and_then(|m| m.get(cell))
                        .cloned()
                        .unwrap_or_else(|| cell.to_string()),
                ),
            }
        }

        for (slot, (idx, map)) in row_values.iter_mut().zip(&retained) {
            let cell = row[*idx].trim();
            if config.is_missing(cell) {
                report.dropped_missing += 1;
                continue 'rows;
            }
            let value = match map {
                Some(cats) => cats
                    .iter()
                    .position(|c| c == cell)
                    .map(|p| p as f64)
                    .or_else(|| parse_number(cell)),
                None => parse_number(cell),
            };
            match value {
                Some(v) => *slot = v,
                None => {
                    report.dropped_unparseable += 1;
                    continue 'rows;
                }
            }
        }

        for (col, v) in raw_columns.iter_mut().zip(&row_values) {
            col.push(*v);
        }
        keys.push(GroupKey(key));
        labels.push(label);
        source_rows.push(r);
    }

    if keys.is_empty() {
        return Err(Error::InvalidInput("no rows survive preprocessing".into()));
    }
    if report.dropped_missing + report.dropped_unparseable > 0 {
        log::warn!(
            "dropped {} rows with missing and {} with unparseable cells",
            report.dropped_missing,
            report.dropped_unparseable
        );
    }

    let mut scales = Vec::with_capacity(retained.len());
    let mut columns = Vec::with_capacity(retained.len());
    let mut names = Vec::with_capacity(retained.len());
    for ((idx, _), raw) in retained.iter().zip(raw_columns) {
        let name = table.header[*idx].clone();
        let scale = ColumnScale::fit(&raw);
        if scale.is_constant() {
            log::warn!("column `{name}` is constant; scaled to 0");
            report.constant_columns.push(name.clone());
        }
        columns.push(raw.iter().map(|&v| scale.scale(v)).collect());
        scales.push(scale);
        names.push(name);
    }

    let group_index = GroupIndex::build(config.protected_columns.clone(), keys.iter().cloned());
    Ok(Dataset {
        protected_columns: config.protected_columns.clone(),
        keys,
        attribute_names: names,
        columns,
        labels,
        group_index,
        scales,
        source_rows,
        minority_values: config.minority_values.clone(),
        report,
    })
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn ricci_threshold_value(cell: &str, threshold: f64) -> Result<bool> {
    parse_number(cell)
        .map(|v| v >= threshold)
        .ok_or_else(|| Error::InvalidInput(format!("non-numeric score `{cell}`")))
}

/// `YES` iff the raw score is at least `threshold` (70 for the promotion
/// exam data). Errors on any non-numeric cell.
pub fn threshold_classifier<S: AsRef<str>>(scores: &[S], threshold: f64) -> Result<Vec<bool>> {
    scores
        .iter()
        .map(|s| ricci_threshold_value(s.as_ref(), threshold))
        .collect()
}

/// Row counts `(train, test)` for a split: `ceil((1 - f) * n)` training rows.
pub fn split_sizes(n: usize, test_fraction: f64) -> Result<(usize, usize)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    // Shave a few ulps so that exact products such as 2/3 * 3 do not round up.
    let train = (((1.0 - test_fraction) * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let train = train.min(n);
    Ok((train, n - train))
}

/// Seeded random partition of row indices; each part keeps input order.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let (n_train, n_test) = split_sizes(n, test_fraction)?;
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidInput(format!(
            "split of {n} rows at fraction {test_fraction} leaves an empty part"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = perm[..n_train].to_vec();
    let mut test = perm[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split_train_test(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if data.n_rows() < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 rows to split, have {}",
            data.n_rows()
        )));
    }
    let (train, test) = split_indices(data.n_rows(), test_fraction, seed)?;
    Ok((data.subset(&train), data.subset(&test)))
}

/// Groups rows by the joint values of `columns`, a subset of the
/// dataset's protected columns.
pub fn stratify(data: &Dataset, columns: &[String]) -> Result<GroupIndex> {
    let positions: Vec<usize> = columns
        .iter()
        .map(|c| {
            data.protected_columns
                .iter()
                .position(|p| p == c)
                .ok_or_else(|| Error::UnknownColumn(c.clone()))
        })
        .collect::<Result<_>>()?;
    Ok(GroupIndex::build(
        columns.to_vec(),
        data.keys
            .iter()
            .map(|k| GroupKey(positions.iter().map(|&p| k.0[p].clone()).collect())),
    ))
}

/// Writes the source table with the dataset's attribute columns replaced by
/// its (unscaled) values. Rows dropped during preprocessing are omitted;
/// every other cell is copied unchanged.
pub fn write_repaired_csv<W: Write>(
    source: &RawTable,
    data: &Dataset,
    comment: &str,
    ordered_categorical_maps: &BTreeMap<String, Vec<String>>,
    mut out: W,
) -> Result<()> {
    let io = |e| Error::io("<output>", e);
    writeln!(out, "# {comment}").map_err(io)?;
    let mut writer = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::InvalidInput(e.to_string());
    writer.write_record(&source.header).map_err(csv_err)?;

    let replaced: Vec<(usize, usize)> = data
        .attribute_names
        .iter()
        .enumerate()
        .map(|(a, name)| source.column_index(name).map(|c| (a, c)))
        .collect::<Result<_>>()?;

    for (i, &src) in data.source_rows.iter().enumerate() {
        let mut row = source.rows[src].clone();
        for &(a, c) in &replaced {
            let value = data.scales[a].unscale(data.columns[a][i]);
            let name = &data.attribute_names[a];
            row[c] = match ordered_categorical_maps.get(name) {
                Some(cats) if value.fract() == 0.0 && value >= 0.0 && (value as usize) < cats.len() => {
                    cats[value as usize].clone()
                }
                _ => value.to_string(),
            };
        }
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer
        .flush()
        .map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> RawTable {
        read_csv(text.as_bytes(), true).unwrap()
    }

    #[test]
    fn parses_simple_table() {
        let t = table("a,b\n1,2\n3,4\n");
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.header(), ["a", "b"]);
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = read_csv("a,b\n1,2\n3,4,5\n".as_bytes(), true).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_header_rejected() {
        assert!(matches!(
            read_csv("a,a\n1,2\n".as_bytes(), true),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn headerless_tables_get_positional_names() {
        let t = read_csv("1,2\n3,4\n".as_bytes(), false).unwrap();
        assert_eq!(t.header(), ["col0", "col1"]);
        assert_eq!(t.n_rows(), 2);
    }

    fn config() -> SchemaConfig {
        SchemaConfig::new(vec!["g".into()], "c", "yes").with_minority("g", "f")
    }

    #[test]
    fn min_max_scaling() {
        let t = table("g,s,c\nf,400,yes\nm,550,no\nf,700,no\n");
        let d = preprocess(&t, &config()).unwrap();
        assert_eq!(d.column("s").unwrap(), [0.0, 0.5, 1.0]);
        assert_eq!(d.labels(), [true, false, false]);
    }

    #[test]
    fn ordered_categories_become_ranks() {
        let t = table("g,lvl,c\nf,low,yes\nm,med,no\nf,high,no\n");
        let mut cfg = config();
        cfg.ordered_categorical_maps
            .insert("lvl".into(), vec!["low".into(), "med".into(), "high".into()]);
        let d = preprocess(&t, &cfg).unwrap();
        assert_eq!(d.column("lvl").unwrap(), [0.0, 0.5, 1.0]);
    }

    #[test]
    fn unordered_and_protected_columns_removed() {
        let t = table("gender,race,job,age,c\nf,w,clerk,30,>50K\nm,b,chef,40,<=50K\n");
        let mut cfg = SchemaConfig::new(vec!["gender".into()], "c", ">50K");
        cfg.drop_columns.push("race".into());
        let d = preprocess(&t, &cfg).unwrap();
        assert_eq!(d.attribute_names(), ["age"]);
        assert_eq!(d.report().removed_columns, ["job"]);
    }

    #[test]
    fn constant_column_scaled_to_zero() {
        let t = table("g,s,c\nf,5,yes\nm,5,no\n");
        let d = preprocess(&t, &config()).unwrap();
        assert_eq!(d.column("s").unwrap(), [0.0, 0.0]);
        assert_eq!(d.report().constant_columns, ["s"]);
    }

    #[test]
    fn missing_cells_drop_rows_missing_class_errors() {
        let t = table("g,s,c\nf,1,yes\nm,?,no\nf,3,no\n");
        let d = preprocess(&t, &config()).unwrap();
        assert_eq!(d.n_rows(), 2);
        assert_eq!(d.report().dropped_missing, 1);
        assert_eq!(d.source_rows(), [0, 2]);

        let t = table("g,s,c\nf,1,yes\nm,2,\n");
        assert!(matches!(preprocess(&t, &config()), Err(Error::Row { row: 1, .. })));
    }

    #[test]
    fn binarized_protected_age() {
        let t = table("age,s,c\n22,1,good\n25,2,bad\n40,3,good\n");
        let mut cfg = SchemaConfig::new(vec!["age".into()], "c", "good");
        cfg.binarize_protected.insert(
            "age".into(),
            Binarize {
                threshold: 25.0,
                below: "YOUNG".into(),
                at_or_above: "OLD".into(),
            },
        );
        let d = preprocess(&t, &cfg).unwrap();
        let keys: Vec<_> = d.keys().iter().map(|k| k.0[0].as_str()).collect();
        assert_eq!(keys, ["YOUNG", "OLD", "OLD"]);
        assert_eq!(d.attribute_names(), ["s"]);
    }

    #[test]
    fn threshold_class_keeps_score_column() {
        let t = table("race,oral,combine\nw,60,70\nn,50,69.9\n");
        let mut cfg = SchemaConfig::new(vec!["race".into()], "combine", "");
        cfg.class_threshold = Some(70.0);
        let d = preprocess(&t, &cfg).unwrap();
        assert_eq!(d.labels(), [true, false]);
        assert_eq!(d.attribute_names(), ["oral", "combine"]);
    }

    #[test]
    fn threshold_classifier_boundary() {
        assert_eq!(threshold_classifier(&["70", "69.9", "85"], 70.0).unwrap(), [true, false, true]);
        assert!(threshold_classifier(&["abc"], 70.0).is_err());
    }

    #[test]
    fn split_sizes_use_ceiling() {
        assert_eq!(split_sizes(118, 1.0 / 3.0).unwrap(), (79, 39));
        assert_eq!(split_sizes(3, 1.0 / 3.0).unwrap(), (2, 1));
        assert!(split_sizes(10, 0.0).is_err());
    }

    #[test]
    fn split_is_deterministic_partition() {
        let (a1, b1) = split_indices(50, 1.0 / 3.0, 7).unwrap();
        let (a2, b2) = split_indices(50, 1.0 / 3.0, 7).unwrap();
        assert_eq!((a1.clone(), b1.clone()), (a2, b2));
        let mut all: Vec<_> = a1.into_iter().chain(b1).collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn joint_stratification() {
        let keys = [("M", "W"), ("F", "W"), ("M", "N"), ("F", "N"), ("M", "W")]
            .iter()
            .map(|(a, b)| GroupKey(vec![a.to_string(), b.to_string()]))
            .collect::<Vec<_>>();
        let n = keys.len();
        let d = Dataset::new(
            vec!["gender".into(), "race".into()],
            keys,
            vec![],
            vec![],
            vec![false; n],
        )
        .unwrap();
        assert_eq!(d.stratify(&["gender".into(), "race".into()]).unwrap().len(), 4);
        let by_gender = d.stratify(&["gender".into()]).unwrap();
        assert_eq!(by_gender.len(), 2);
        assert_eq!(by_gender.get(&GroupKey::single("M")).unwrap(), [0, 2, 4]);
        assert!(matches!(
            d.stratify(&["age".into()]),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn repaired_csv_round_trip_keeps_other_cells() {
        let src = table("g,s,note,c\nf,400,x y,yes\nm,550,\"a,b\",no\nf,700,z,no\n");
        let d = preprocess(&src, &config()).unwrap();
        let repaired = d.with_columns(vec![vec![0.5, 0.5, 1.0]]).unwrap();
        let mut buf = Vec::new();
        write_repaired_csv(&src, &repaired, "repaired: mode=full lambda=1", &BTreeMap::new(), &mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# repaired: mode=full lambda=1\n"));
        let back = read_csv(text.as_bytes(), true).unwrap();
        assert_eq!(back.column("s").unwrap(), ["550", "550", "700"]);
        assert_eq!(back.column("note").unwrap(), ["x y", "a,b", "z"]);
        assert_eq!(back.column("g").unwrap(), src.column("g").unwrap());
    }

    #[test]
    fn load_table_options() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        std::fs::write(&path, "|junk line\nB 3 >50K.\nW 5 <=50K.\nH 4 >50K\n").unwrap();
        let mut cfg = SchemaConfig::new(vec!["race".into()], "income", ">50K").with_minority("race", "nonwhite");
        cfg.column_names = Some(vec!["race".into(), "x".into(), "income".into()]);
        cfg.delimiter = Some(' ');
        cfg.skip_lines = 1;
        cfg.positive_aliases = vec![">50K.".into()];
        cfg.group_aliases.insert(
            "race".into(),
            [("B", "nonwhite"), ("H", "nonwhite"), ("W", "white")]
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        );
        let t = cfg.load_table(&path).unwrap();
        assert_eq!(t.n_rows(), 3);
        cfg.skip_lines = 0;
        cfg.comment = Some('|');
        assert_eq!(cfg.load_table(&path).unwrap(), t);
        let d = preprocess(&t, &cfg).unwrap();
        assert_eq!(d.labels(), [true, false, true]);
        assert_eq!(d.group_index().len(), 2);
        assert_eq!(d.binary_protected().unwrap(), [false, true, false]);
        cfg.column_names = Some(vec!["race".into()]);
        assert!(cfg.load_table(&path).is_err());
    }
}
