//! Datasets: binary responses, the fixed-effect design `X`, and the
//! random-effect design `Z` built from group labels.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::RngHandle;

/// Stream id reserved for data splitting so it never collides with chains.
const SPLIT_STREAM: u64 = u64::MAX - 1;

/// Name of the column prepended by [`DataSet::with_intercept`].
pub const INTERCEPT_NAME: &str = "(Intercept)";

/// Per-row group labels together with the ordered list of levels.
///
/// Level `l` corresponds to column `l` of the one-hot design `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLabels {
    labels: Vec<String>,
    levels: Vec<String>,
    codes: Vec<usize>,
}

impl GroupLabels {
    /// Levels are taken in order of first appearance.
    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let mut levels: Vec<String> = Vec::new();
        let mut lookup: HashMap<String, usize> = HashMap::new();
        let mut codes = Vec::with_capacity(labels.len());
        for (row, label) in labels.iter().enumerate() {
            if label.is_empty() || label == "NA" {
                return Err(Error::InvalidData(format!(
                    "row {}: missing group label",
                    row + 1
                )));
            }
            let code = *lookup.entry(label.clone()).or_insert_with(|| {
                levels.push(label.clone());
                levels.len() - 1
            });
            codes.push(code);
        }
        Ok(GroupLabels {
            labels,
            levels,
            codes,
        })
    }

    /// Use an explicit level list; every level must own at least one row.
    pub fn with_levels(labels: Vec<String>, levels: Vec<String>) -> Result<Self> {
        let g = Self::with_levels_unchecked(labels, levels)?;
        for (l, level) in g.levels.iter().enumerate() {
            if !g.codes.contains(&l) {
                return Err(Error::EmptyGroupLevel(level.clone()));
            }
        }
        Ok(g)
    }

    fn with_levels_unchecked(labels: Vec<String>, levels: Vec<String>) -> Result<Self> {
        let lookup: HashMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        if lookup.len() != levels.len() {
            return Err(Error::InvalidData("duplicate group level".into()));
        }
        let codes = labels
            .iter()
            .enumerate()
            .map(|(row, label)| {
                lookup
                    .get(label.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidData(format!("row {}: unknown group `{label}`", row + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GroupLabels {
            labels,
            levels,
            codes,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    /// Level index of each row.
    pub fn codes(&self) -> &[usize] {
        &self.codes
    }

    pub fn level_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.levels.len()];
        for &c in &self.codes {
            counts[c] += 1;
        }
        counts
    }

    fn one_hot(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.labels.len(), self.levels.len());
        for (row, &c) in self.codes.iter().enumerate() {
            z[(row, c)] = 1.0;
        }
        z
    }

    fn subset(&self, rows: &[usize]) -> GroupLabels {
        GroupLabels {
            labels: rows.iter().map(|&r| self.labels[r].clone()).collect(),
            levels: self.levels.clone(),
            codes: rows.iter().map(|&r| self.codes[r]).collect(),
        }
    }
}

/// An immutable dataset. Safe to share across concurrently running chains.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    y: Vec<u8>,
    x: DMatrix<f64>,
    z: Option<DMatrix<f64>>,
    groups: Option<GroupLabels>,
    feature_names: Vec<String>,
}

impl DataSet {
    /// Build a dataset; `Z` is the one-hot encoding of `groups` when given.
    pub fn new(
        y: Vec<u8>,
        x: DMatrix<f64>,
        feature_names: Vec<String>,
        groups: Option<GroupLabels>,
    ) -> Result<Self> {
        let z = groups.as_ref().map(GroupLabels::one_hot);
        let ds = DataSet {
            y,
            x,
            z,
            groups,
            feature_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Build a dataset with an arbitrary random-effect design (covariates
    /// rather than indicators).
    pub fn with_random_design(
        y: Vec<u8>,
        x: DMatrix<f64>,
        feature_names: Vec<String>,
        z: DMatrix<f64>,
    ) -> Result<Self> {
        let ds = DataSet {
            y,
            x,
            z: Some(z),
            groups: None,
            feature_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 rows, got {n}")));
        }
        if let Some(row) = self.y.iter().position(|&v| v > 1) {
            return Err(Error::NonBinaryResponse {
                row: row + 1,
                value: self.y[row].to_string(),
            });
        }
        let positives = self.y.iter().filter(|&&v| v == 1).count();
        if positives == 0 || positives == n {
            return Err(Error::InvalidData("response must contain both 0 and 1".into()));
        }
        if self.x.nrows() != n {
            return Err(Error::InvalidData(format!(
                "X has {} rows but y has {n}",
                self.x.nrows()
            )));
        }
        if self.feature_names.len() != self.x.ncols() {
            return Err(Error::InvalidData(format!(
                "{} feature names for {} columns",
                self.feature_names.len(),
                self.x.ncols()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::AmbiguousColumn(name.clone()));
            }
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("X contains non-finite entries".into()));
        }
        if let Some(z) = &self.z {
            if z.nrows() != n {
                return Err(Error::InvalidData(format!(
                    "Z has {} rows but y has {n}",
                    z.nrows()
                )));
            }
            if z.ncols() == 0 {
                return Err(Error::InvalidData("Z has no columns".into()));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData("Z contains non-finite entries".into()));
            }
        }
        if let Some(g) = &self.groups {
            if g.labels.len() != n {
                return Err(Error::InvalidData(format!(
                    "{} group labels for {n} rows",
                    g.labels.len()
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of random-effect columns, 0 when `Z` is absent.
    pub fn q(&self) -> usize {
        self.z.as_ref().map_or(0, |z| z.ncols())
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> Option<&DMatrix<f64>> {
        self.z.as_ref()
    }

    pub fn groups(&self) -> Option<&GroupLabels> {
        self.groups.as_ref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    /// Column `j` of `X` as a contiguous slice.
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.x.as_slice()[j * n..(j + 1) * n]
    }

    /// Keep the given rows (in the given order). Group levels are kept even
    /// if a level ends up empty, so `Z` keeps its column layout.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<DataSet> {
        let y = rows.iter().map(|&r| self.y[r]).collect();
        let x = self.x.select_rows(rows);
        let groups = self.groups.as_ref().map(|g| g.subset(rows));
        let z = match (&groups, &self.z) {
            (Some(g), _) => Some(g.one_hot()),
            (None, Some(z)) => Some(z.select_rows(rows)),
            (None, None) => None,
        };
        let ds = DataSet {
            y,
            x,
            z,
            groups,
            feature_names: self.feature_names.clone(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Keep the given feature columns.
    pub fn select_features(&self, columns: &[usize]) -> DataSet {
        DataSet {
            y: self.y.clone(),
            x: self.x.select_columns(columns),
            z: self.z.clone(),
            groups: self.groups.clone(),
            feature_names: columns.iter().map(|&j| self.feature_names[j].clone()).collect(),
        }
    }

    /// Drop the random-effect design.
    pub fn without_random_effects(&self) -> DataSet {
        DataSet {
            z: None,
            groups: None,
            ..self.clone()
        }
    }

    /// Prepend a column of ones named [`INTERCEPT_NAME`].
    pub fn with_intercept(&self) -> Result<DataSet> {
        if self.feature_index(INTERCEPT_NAME).is_some() {
            return Err(Error::AmbiguousColumn(INTERCEPT_NAME.into()));
        }
        let x = self.x.clone().insert_column(0, 1.0);
        let mut feature_names = Vec::with_capacity(self.p() + 1);
        feature_names.push(INTERCEPT_NAME.to_string());
        feature_names.extend(self.feature_names.iter().cloned());
        Ok(DataSet {
            x,
            feature_names,
            ..self.clone()
        })
    }

    /// Z-score every column of `X` (population standard deviation).
    /// Constant columns are centred only.
    pub fn standardized(&self) -> DataSet {
        let mut x = self.x.clone();
        let n = self.n() as f64;
        for mut col in x.column_iter_mut() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            for v in col.iter_mut() {
                *v -= mean;
                if sd > 0.0 {
                    *v /= sd;
                }
            }
        }
        DataSet { x, ..self.clone() }
    }
}

/// Column names of a CSV file.
pub fn read_header(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv_reader(path)?;
    Ok(reader.headers()?.iter().map(str::to_string).collect())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn find_column(headers: &[String], name: &str) -> Result<usize> {
    let mut hits = headers.iter().enumerate().filter(|(_, h)| *h == name);
    match (hits.next(), hits.next()) {
        (Some((i, _)), None) => Ok(i),
        (Some(_), Some(_)) => Err(Error::AmbiguousColumn(name.to_string())),
        (None, _) => Err(Error::MissingColumn(name.to_string())),
    }
}

pub(crate) fn parse_cell(value: &str, row: usize, column: &str) -> Result<f64> {
    let bad = || Error::NonNumericCell {
        row,
        column: column.to_string(),
        value: value.to_string(),
    };
    if value.is_empty() || value.eq_ignore_ascii_case("na") || value.eq_ignore_ascii_case("nan") {
        return Err(bad());
    }
    let v: f64 = value.parse().map_err(|_| bad())?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

/// Raw contents of a feature CSV. `y` and `group_labels` are present when
/// the corresponding column was requested and found.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub feature_names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: Option<Vec<u8>>,
    pub group_labels: Option<Vec<String>>,
}

/// Load a CSV with a header row. Every column other than the response and
/// the group column is a numeric feature, kept in file order. Rows are
/// numbered from 1 (the first row after the header) in error messages.
pub fn load_csv_table(
    path: &Path,
    y_column: Option<&str>,
    group_column: Option<&str>,
) -> Result<FeatureTable> {
    let mut reader = csv_reader(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let y_idx = y_column.map(|y| find_column(&headers, y)).transpose()?;
    let g_idx = group_column.map(|g| find_column(&headers, g)).transpose()?;
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| Some(i) != y_idx && Some(i) != g_idx)
        .collect();
    let feature_names: Vec<String> = feature_idx.iter().map(|&i| headers[i].clone()).collect();

    let mut y = Vec::new();
    let mut labels = Vec::new();
    // Row-major staging; converted to column-major at the end.
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        rows = row;
        if let Some(yi) = y_idx {
            let cell = record.get(yi).unwrap_or("");
            y.push(match cell.parse::<f64>() {
                Ok(0.0) => 0,
                Ok(1.0) => 1,
                _ => {
                    return Err(Error::NonBinaryResponse {
                        row,
                        value: cell.to_string(),
                    })
                }
            });
        }
        if let Some(g) = g_idx {
            labels.push(record.get(g).unwrap_or("").to_string());
        }
        for &i in &feature_idx {
            values.push(parse_cell(record.get(i).unwrap_or(""), row, &headers[i])?);
        }
    }
    Ok(FeatureTable {
        x: DMatrix::from_row_slice(rows, feature_names.len(), &values),
        feature_names,
        y: y_idx.map(|_| y),
        group_labels: g_idx.map(|_| labels),
    })
}

/// Load a labelled dataset; see [`load_csv_table`] for the layout.
pub fn load_csv_dataset(path: &Path, y_column: &str, group_column: Option<&str>) -> Result<DataSet> {
    let table = load_csv_table(path, Some(y_column), group_column)?;
    let y = table.y.unwrap_or_default();
    if y.len() < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 rows, got {}",
            y.len()
        )));
    }
    let groups = table.group_labels.map(GroupLabels::from_labels).transpose()?;
    DataSet::new(y, table.x, table.feature_names, groups)
}

/// Write the dataset as CSV: `y`, then `group` when labels exist, then the
/// features. Values use the shortest representation that parses back to the
/// same `f64`.
pub fn write_csv(data: &DataSet, path: &Path, comment: Option<&str>) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    if let Some(c) = comment {
        writeln!(file, "# {c}").map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["y".to_string()];
    if data.groups.is_some() {
        header.push("group".to_string());
    }
    header.extend(data.feature_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = vec![data.y[i].to_string()];
        if let Some(g) = &data.groups {
            rec.push(g.labels[i].clone());
        }
        rec.extend((0..data.p()).map(|j| format!("{}", data.x[(i, j)])));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Row indices of a stratified train/validation partition, each sorted
/// ascending. Strata are (group x class) cells when groups exist, classes
/// otherwise.
pub fn stratified_split_indices(
    data: &DataSet,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Split(format!(
            "fraction must lie in (0,1), got {fraction}"
        )));
    }
    let n_groups = data.groups.as_ref().map_or(1, |g| g.levels.len());
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); n_groups * 2];
    for i in 0..data.n() {
        let g = data.groups.as_ref().map_or(0, |g| g.codes[i]);
        cells[g * 2 + data.y[i] as usize].push(i);
    }
    for (c, cell) in cells.iter().enumerate() {
        if cell.len() < 2 {
            let class = c % 2;
            let what = match &data.groups {
                Some(g) => format!("group `{}`, class {class}", g.levels[c / 2]),
                None => format!("class {class}"),
            };
            return Err(Error::Split(format!(
                "{what} has {} rows, need at least 2",
                cell.len()
            )));
        }
    }
    let mut rng = RngHandle::new(seed, SPLIT_STREAM);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for mut cell in cells {
        cell.shuffle(&mut rng);
        let take = ((fraction * cell.len() as f64).round() as usize).clamp(1, cell.len() - 1);
        train.extend_from_slice(&cell[..take]);
        val.extend_from_slice(&cell[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Split into (train, validation) preserving class proportions, within each
/// group when groups exist. Deterministic given `seed`.
pub fn stratified_split(data: &DataSet, fraction: f64, seed: u64) -> Result<(DataSet, DataSet)> {
    let (train, val) = stratified_split_indices(data, fraction, seed)?;
    Ok((data.subset_rows(&train)?, data.subset_rows(&val)?))
}
