//! Tables, CSV ingestion, synthetic data, splits, standardization and
//! controlled error injection.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{stream, stream_rng};

/// Boolean cell mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        self.bits[r * self.cols + c] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_clear(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op: "mask_union",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(Mask {
            rows: self.rows,
            cols: self.cols,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a || *b)
                .collect(),
        })
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / self.cols, i % self.cols))
    }
}

/// Column-major numeric table. Missing cells hold `NaN` and are flagged in the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    column_names: Vec<String>,
    columns: Vec<Vec<f64>>,
    missing: Vec<Vec<bool>>,
    target: usize,
}

impl Table {
    /// Builds a table; `NaN` cells become missing.
    pub fn new(column_names: Vec<String>, columns: Vec<Vec<f64>>, target: usize) -> Result<Self> {
        if column_names.len() != columns.len() {
            return Err(Error::InvalidArgument(format!(
                "{} names for {} columns",
                column_names.len(),
                columns.len()
            )));
        }
        if target >= columns.len() {
            return Err(Error::InvalidArgument(format!(
                "target index {target} out of range"
            )));
        }
        let n = columns[0].len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidArgument("columns differ in length".into()));
        }
        let missing = columns
            .iter()
            .map(|c| c.iter().map(|v| v.is_nan()).collect())
            .collect();
        Ok(Table {
            column_names,
            columns,
            missing,
            target,
        })
    }

    /// Table from a feature matrix (`NaN` = missing) and a target column.
    pub fn from_features(
        feature_names: &[String],
        x: &Matrix,
        y: &[f64],
        target_name: &str,
    ) -> Result<Self> {
        if feature_names.len() != x.cols() || y.len() != x.rows() {
            return Err(Error::Shape {
                op: "from_features",
                lhs: x.shape(),
                rhs: (y.len(), feature_names.len()),
            });
        }
        let mut names = feature_names.to_vec();
        names.push(target_name.to_string());
        let mut cols: Vec<Vec<f64>> = (0..x.cols()).map(|c| x.column(c)).collect();
        cols.push(y.to_vec());
        let target = cols.len() - 1;
        Table::new(names, cols, target)
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len() - 1
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn target_index(&self) -> usize {
        self.target
    }

    pub fn target_name(&self) -> &str {
        &self.column_names[self.target]
    }

    /// Indices of the non-target columns, in table order.
    pub fn feature_indices(&self) -> Vec<usize> {
        (0..self.n_cols()).filter(|&c| c != self.target).collect()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.feature_indices()
            .into_iter()
            .map(|c| self.column_names[c].clone())
            .collect()
    }

    pub fn column(&self, c: usize) -> &[f64] {
        &self.columns[c]
    }

    #[inline]
    pub fn value(&self, r: usize, c: usize) -> f64 {
        self.columns[c][r]
    }

    #[inline]
    pub fn is_missing(&self, r: usize, c: usize) -> bool {
        self.missing[c][r]
    }

    /// Writes a cell; `NaN` marks it missing, anything else clears the flag.
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.columns[c][r] = value;
        self.missing[c][r] = value.is_nan();
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().flatten().filter(|&&m| m).count()
    }

    /// Missing mask over all columns (`n_rows x n_cols`).
    pub fn missing_mask(&self) -> Mask {
        let mut m = Mask::new(self.n_rows(), self.n_cols());
        for (c, col) in self.missing.iter().enumerate() {
            for (r, &miss) in col.iter().enumerate() {
                m.set(r, c, miss);
            }
        }
        m
    }

    /// Missing mask over feature columns only (`n_rows x n_features`).
    pub fn feature_missing_mask(&self) -> Mask {
        let feats = self.feature_indices();
        let mut m = Mask::new(self.n_rows(), feats.len());
        for (j, &c) in feats.iter().enumerate() {
            for r in 0..self.n_rows() {
                m.set(r, j, self.missing[c][r]);
            }
        }
        m
    }

    /// Feature matrix, `NaN` where missing.
    pub fn features(&self) -> Matrix {
        let feats = self.feature_indices();
        let n = self.n_rows();
        let mut data = Vec::with_capacity(n * feats.len());
        for r in 0..n {
            data.extend(feats.iter().map(|&c| self.columns[c][r]));
        }
        Matrix::from_vec(n, feats.len(), data).expect("consistent shape")
    }

    /// Feature matrix with missing cells replaced by `fill`.
    pub fn features_filled(&self, fill: f64) -> Matrix {
        self.features().map(|v| if v.is_nan() { fill } else { v })
    }

    pub fn targets(&self) -> Matrix {
        Matrix::column_vector(self.columns[self.target].clone())
    }

    /// Replaces every feature column with the columns of `x`.
    pub fn with_features(&self, x: &Matrix) -> Result<Table> {
        let feats = self.feature_indices();
        if x.shape() != (self.n_rows(), feats.len()) {
            return Err(Error::Shape {
                op: "with_features",
                lhs: (self.n_rows(), feats.len()),
                rhs: x.shape(),
            });
        }
        let mut out = self.clone();
        for (j, &c) in feats.iter().enumerate() {
            for r in 0..self.n_rows() {
                out.set(r, c, x.get(r, j));
            }
        }
        Ok(out)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Table> {
        let n = self.n_rows();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::RowOutOfRange {
                index: bad,
                rows: n,
            });
        }
        Ok(Table {
            column_names: self.column_names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            missing: self
                .missing
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            target: self.target,
        })
    }

    /// Keeps the target plus the given feature columns (indices into the table).
    pub fn select_columns(&self, keep: &[usize]) -> Result<Table> {
        let mut cols: Vec<usize> = keep.iter().copied().filter(|&c| c != self.target).collect();
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.n_cols()) {
            return Err(Error::InvalidArgument(format!("column {bad} out of range")));
        }
        cols.push(self.target);
        Table::new(
            cols.iter().map(|&c| self.column_names[c].clone()).collect(),
            cols.iter().map(|&c| self.columns[c].clone()).collect(),
            cols.len() - 1,
        )
    }

    /// SHA-256 over names, values and mask.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.target.to_le_bytes());
        for (name, (col, miss)) in self
            .column_names
            .iter()
            .zip(self.columns.iter().zip(&self.missing))
        {
            h.update(name.as_bytes());
            h.update([0u8]);
            for (v, m) in col.iter().zip(miss) {
                h.update(v.to_bits().to_le_bytes());
                h.update([*m as u8]);
            }
        }
        hex::encode(h.finalize())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.column_names)?;
        for r in 0..self.n_rows() {
            w.write_record(self.columns.iter().zip(&self.missing).map(|(col, miss)| {
                if miss[r] {
                    String::new()
                } else {
                    format!("{}", col[r])
                }
            }))?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Reads a CSV file with a header row.
pub fn load_table(path: &Path, target: &str) -> Result<Table> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_table(file, target)
}

/// Parses CSV text. Columns where at least half of the non-empty cells are
/// numeric are numeric, and their unparseable cells become missing. Other
/// feature columns are one-hot encoded (`name=value`, values sorted).
pub fn parse_table<R: Read>(reader: R, target: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target_idx = header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::MissingColumn(target.to_string()))?;

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::RaggedRow {
                row: i + 1,
                expected: header.len(),
                found: rec.len(),
            });
        }
        for (c, field) in rec.iter().enumerate() {
            raw[c].push(field.trim().to_string());
        }
    }
    let n = raw[0].len();
    if n == 0 {
        return Err(Error::EmptyTable);
    }

    let mut names = Vec::new();
    let mut columns = Vec::new();
    let mut new_target = 0;
    for (c, cells) in raw.iter().enumerate() {
        let non_empty: Vec<&String> = cells.iter().filter(|s| !s.is_empty()).collect();
        let numeric = non_empty
            .iter()
            .filter(|s| s.parse::<f64>().is_ok())
            .count();
        let is_numeric = c == target_idx || non_empty.is_empty() || 2 * numeric >= non_empty.len();
        if is_numeric {
            let mut col = Vec::with_capacity(n);
            for (r, s) in cells.iter().enumerate() {
                let v = if s.is_empty() {
                    f64::NAN
                } else {
                    match s.parse::<f64>() {
                        Ok(v) if v.is_finite() => v,
                        _ => {
                            warn!(
                                "column {:?} row {}: unparseable value {s:?} treated as missing",
                                header[c],
                                r + 1
                            );
                            f64::NAN
                        }
                    }
                };
                col.push(v);
            }
            if c == target_idx {
                if let Some(r) = col.iter().position(|v| v.is_nan()) {
                    return Err(Error::InvalidArgument(format!(
                        "target column {target:?} has a missing or non-numeric value at row {}",
                        r + 1
                    )));
                }
                new_target = columns.len();
            }
            names.push(header[c].clone());
            columns.push(col);
        } else {
            let levels: BTreeSet<&str> = non_empty.iter().map(|s| s.as_str()).collect();
            for level in levels {
                names.push(format!("{}={}", header[c], level));
                columns.push(
                    cells
                        .iter()
                        .map(|s| {
                            if s.is_empty() {
                                f64::NAN
                            } else if s == level {
                                1.0
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                );
            }
        }
    }
    Table::new(names, columns, new_target)
}

/// Synthetic regression data with known generating weights.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub table: Table,
    /// Weight of each informative feature; noise features have weight zero.
    pub weights: Vec<f64>,
    pub n_informative: usize,
    pub n_noise: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_rows: usize,
    pub n_informative: usize,
    pub n_noise: usize,
    pub noise_std: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_rows: 1000,
            n_informative: 5,
            n_noise: 0,
            noise_std: 0.1,
        }
    }
}

/// Informative features `inf*` share a latent factor structure (so they are
/// mutually correlated); noise features `noise*` are independent standard
/// normals. `y = Σ w_j · inf_j + noise_std · ε`.
pub fn synth_make(
    n_rows: usize,
    n_informative: usize,
    n_noise: usize,
    noise_std: f64,
    seed: u64,
) -> Result<SynthData> {
    if n_informative == 0 {
        return Err(Error::InvalidArgument("n_informative must be >= 1".into()));
    }
    if n_rows == 0 {
        return Err(Error::EmptyTable);
    }
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidArgument("noise_std must be >= 0".into()));
    }
    let mut rng = stream_rng(seed, stream::DATA);
    let latent = n_informative.div_ceil(2);
    let loadings: Vec<Vec<f64>> = (0..latent)
        .map(|_| {
            (0..n_informative)
                .map(|_| rng.sample(StandardNormal))
                .collect()
        })
        .collect();
    const UNIQUE: f64 = 0.5;
    let scale: Vec<f64> = (0..n_informative)
        .map(|j| (loadings.iter().map(|l| l[j] * l[j]).sum::<f64>() + UNIQUE * UNIQUE).sqrt())
        .collect();
    let weights: Vec<f64> = (0..n_informative)
        .map(|_| {
            let magnitude = rng.random_range(0.5..1.5);
            if rng.random_bool(0.5) {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect();

    let mut inf = vec![Vec::with_capacity(n_rows); n_informative];
    let mut noise = vec![Vec::with_capacity(n_rows); n_noise];
    let mut y = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let z: Vec<f64> = (0..latent).map(|_| rng.sample(StandardNormal)).collect();
        let mut target = 0.0;
        for j in 0..n_informative {
            let eps: f64 = rng.sample(StandardNormal);
            let common: f64 = (0..latent).map(|l| z[l] * loadings[l][j]).sum();
            let v = (common + UNIQUE * eps) / scale[j];
            target += weights[j] * v;
            inf[j].push(v);
        }
        for col in noise.iter_mut() {
            col.push(rng.sample(StandardNormal));
        }
        let e: f64 = rng.sample(StandardNormal);
        y.push(target + noise_std * e);
    }

    let mut names: Vec<String> = (0..n_informative).map(|j| format!("inf{j}")).collect();
    names.extend((0..n_noise).map(|j| format!("noise{j}")));
    names.push("y".into());
    let mut columns = inf;
    columns.extend(noise);
    columns.push(y);
    let target = columns.len() - 1;
    Ok(SynthData {
        table: Table::new(names, columns, target)?,
        weights,
        n_informative,
        n_noise,
    })
}

/// Per-column affine map fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-8;

impl Standardizer {
    /// Mean and population std of each column over its non-missing cells.
    pub fn fit(table: &Table) -> Result<Self> {
        if table.n_rows() == 0 {
            return Err(Error::EmptyTable);
        }
        let mut means = Vec::with_capacity(table.n_cols());
        let mut stds = Vec::with_capacity(table.n_cols());
        for c in 0..table.n_cols() {
            let vals: Vec<f64> = (0..table.n_rows())
                .filter(|&r| !table.is_missing(r, c))
                .map(|r| table.value(r, c))
                .collect();
            if vals.is_empty() {
                warn!(
                    "column {:?} has no observed values",
                    table.column_names()[c]
                );
                means.push(0.0);
                stds.push(1.0);
                continue;
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            let mut std = var.sqrt();
            if std < STD_FLOOR {
                warn!(
                    "column {:?} is constant; std floored",
                    table.column_names()[c]
                );
                std = STD_FLOOR;
            }
            means.push(mean);
            stds.push(std);
        }
        Ok(Standardizer { means, stds })
    }

    pub fn apply(&self, table: &Table) -> Table {
        self.map(table, |v, m, s| (v - m) / s)
    }

    pub fn inverse(&self, table: &Table) -> Table {
        self.map(table, |v, m, s| v * s + m)
    }

    fn map(&self, table: &Table, f: impl Fn(f64, f64, f64) -> f64) -> Table {
        let mut out = table.clone();
        for c in 0..table.n_cols() {
            for r in 0..table.n_rows() {
                if !table.is_missing(r, c) {
                    out.columns[c][r] = f(table.value(r, c), self.means[c], self.stds[c]);
                }
            }
        }
        out
    }
}

/// Train/val/test splits plus per-training-row source ids.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub train: Table,
    pub val: Table,
    pub test: Table,
    pub source_ids: Vec<usize>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub standardizer: Option<Standardizer>,
}

impl DatasetBundle {
    pub fn n_sources(&self) -> usize {
        self.source_ids.iter().max().map_or(0, |m| m + 1)
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in [&self.train, &self.val, &self.test] {
            h.update(t.content_hash().as_bytes());
        }
        for s in &self.source_ids {
            h.update((*s as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Writes `train.csv`, `val.csv`, `test.csv` and `metadata.json`.
    pub fn save(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.train.save_csv(&dir.join("train.csv"))?;
        self.val.save_csv(&dir.join("val.csv"))?;
        self.test.save_csv(&dir.join("test.csv"))?;
        let meta = serde_json::json!({
            "train_indices": self.train_indices,
            "val_indices": self.val_indices,
            "test_indices": self.test_indices,
            "source_ids": self.source_ids,
            "standardizer": self.standardizer,
            "content_hash": self.content_hash(),
            "extra": extra,
        });
        let path = dir.join("metadata.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }
}

/// Seeded shuffle; val and test get `floor(n * fraction)` rows, train the rest.
pub fn split_bundle(table: &Table, fractions: (f64, f64, f64), seed: u64) -> Result<DatasetBundle> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let n = table.n_rows();
    let n_val = (n as f64 * fv).floor() as usize;
    let n_test = (n as f64 * fs).floor() as usize;
    let n_train = n.saturating_sub(n_val + n_test);
    for (name, size) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if size == 0 {
            return Err(Error::EmptySplit(name));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, stream::DATA));
    let val_indices = order[..n_val].to_vec();
    let test_indices = order[n_val..n_val + n_test].to_vec();
    let train_indices = order[n_val + n_test..].to_vec();
    Ok(DatasetBundle {
        train: table.select_rows(&train_indices)?,
        val: table.select_rows(&val_indices)?,
        test: table.select_rows(&test_indices)?,
        source_ids: vec![0; n_train],
        train_indices,
        val_indices,
        test_indices,
        standardizer: None,
    })
}

/// Fits column statistics on train (missing cells excluded) and applies the
/// same affine map to all three splits.
pub fn standardize_fit_apply(bundle: &DatasetBundle) -> Result<DatasetBundle> {
    let st = Standardizer::fit(&bundle.train)?;
    Ok(DatasetBundle {
        train: st.apply(&bundle.train),
        val: st.apply(&bundle.val),
        test: st.apply(&bundle.test),
        standardizer: Some(st),
        ..bundle.clone()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Missing,
    Outlier,
    Typo,
    LabelSwap,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypoMode {
    #[default]
    DigitTranspose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorSpec {
    pub kind: ErrorKind,
    pub rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_outlier_sigma")]
    pub outlier_sigma: f64,
    #[serde(default)]
    pub typo_mode: TypoMode,
}

fn default_outlier_sigma() -> f64 {
    5.0
}

impl ErrorSpec {
    pub fn new(kind: ErrorKind, rate: f64, seed: u64) -> Self {
        ErrorSpec {
            kind,
            rate,
            seed,
            outlier_sigma: default_outlier_sigma(),
            typo_mode: TypoMode::DigitTranspose,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::InvalidArgument(format!(
                "error rate {} outside [0, 1]",
                self.rate
            )));
        }
        if !(self.outlier_sigma > 0.0) {
            return Err(Error::InvalidArgument("outlier_sigma must be > 0".into()));
        }
        Ok(())
    }
}

/// Corrupts a copy of `table`; returns it with a mask (over all columns) of
/// the corrupted cells.
pub fn inject_errors(table: &Table, spec: &ErrorSpec) -> Result<(Table, Mask)> {
    let rows: Vec<usize> = (0..table.n_rows()).collect();
    inject_errors_in_rows(table, spec, &rows)
}

/// Like [`inject_errors`], restricted to the given rows.
///
/// Cell-wise kinds corrupt exactly `round(rate * eligible)` feature cells
/// (eligible = observed feature cells of the rows). `LabelSwap` exchanges the
/// targets of `round(rate * rows / 2)` disjoint row pairs.
pub fn inject_errors_in_rows(
    table: &Table,
    spec: &ErrorSpec,
    rows: &[usize],
) -> Result<(Table, Mask)> {
    spec.validate()?;
    let mut out = table.clone();
    let mut truth = Mask::new(table.n_rows(), table.n_cols());
    let mut rng = stream_rng(spec.seed, stream::ERRORS);

    if spec.kind == ErrorKind::LabelSwap {
        let t = table.target_index();
        let pairs = (spec.rate * rows.len() as f64 / 2.0).round() as usize;
        let picked = sample(&mut rng, rows.len(), 2 * pairs).into_vec();
        for pair in picked.chunks(2) {
            let (a, b) = (rows[pair[0]], rows[pair[1]]);
            let (va, vb) = (table.value(a, t), table.value(b, t));
            out.set(a, t, vb);
            out.set(b, t, va);
            truth.set(a, t, true);
            truth.set(b, t, true);
        }
        return Ok((out, truth));
    }

    let eligible: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&r| table.feature_indices().into_iter().map(move |c| (r, c)))
        .filter(|&(r, c)| !table.is_missing(r, c))
        .collect();
    let count = (spec.rate * eligible.len() as f64).round() as usize;
    let mut picked = sample(&mut rng, eligible.len(), count).into_vec();
    picked.sort_unstable();

    let col_std: Vec<f64> = (0..table.n_cols())
        .map(|c| {
            let vals: Vec<f64> = table
                .column(c)
                .iter()
                .copied()
                .filter(|v| !v.is_nan())
                .collect();
            if vals.is_empty() {
                return 0.0;
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt()
        })
        .collect();

    for i in picked {
        let (r, c) = eligible[i];
        let v = table.value(r, c);
        let corrupted = match spec.kind {
            ErrorKind::Missing => f64::NAN,
            ErrorKind::Outlier => {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                v + sign * spec.outlier_sigma * col_std[c].max(STD_FLOOR)
            }
            ErrorKind::Typo => transpose_digits(v),
            ErrorKind::LabelSwap => unreachable!(),
        };
        out.set(r, c, corrupted);
        truth.set(r, c, true);
    }
    Ok((out, truth))
}

/// Swaps the first adjacent pair of distinct digits in the two-decimal
/// rendering of `v` (`123.4 -> 213.4`, `7 -> 0.7`). If every digit is the
/// same the leading two are swapped, and a rendering that is still unchanged
/// gets its decimal point shifted one place (`1.11 -> 11.1`).
pub fn transpose_digits(v: f64) -> f64 {
    let text = format!("{:.2}", v.abs());
    let mut chars: Vec<char> = text.chars().collect();
    let digits: Vec<usize> = chars
        .iter()
        .enumerate()
        .filter(|(_, ch)| ch.is_ascii_digit())
        .map(|(i, _)| i)
        .collect();
    let pair = digits
        .windows(2)
        .find(|w| chars[w[0]] != chars[w[1]])
        .map(|w| (w[0], w[1]))
        .or_else(|| (digits.len() >= 2).then(|| (digits[0], digits[1])));
    if let Some((a, b)) = pair {
        chars.swap(a, b);
    }
    let mut out: f64 = chars.iter().collect::<String>().parse().unwrap_or(v.abs());
    if out == v.abs() {
        if let Some(dot) = chars.iter().position(|&ch| ch == '.') {
            if dot + 1 < chars.len() {
                chars.swap(dot, dot + 1);
            }
        }
        out = chars.iter().collect::<String>().parse().unwrap_or(v.abs());
        if out == v.abs() {
            out = 1.0;
        }
    }
    out.copysign(if v.is_sign_negative() { -1.0 } else { 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table_from_csv(text: &str, target: &str) -> Table {
        parse_table(text.as_bytes(), target).unwrap()
    }

    #[test]
    fn loads_simple_csv() {
        let t = table_from_csv("a,y\n1,2\n3,4\n", "y");
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.missing_count(), 0);
        assert_eq!(t.target_name(), "y");
        assert_eq!(t.features().as_slice(), &[1.0, 3.0]);
    }

    #[test]
    fn empty_and_garbled_cells_are_missing() {
        let t = table_from_csv("a,b,y\n,1,2\n1O0,2,3\n4,5,6\n", "y");
        assert!(t.is_missing(0, 0));
        assert!(t.is_missing(1, 0));
        assert!(!t.is_missing(2, 0));
        assert!(t.value(0, 0).is_nan());
        // mask and sentinel agree
        for c in 0..t.n_cols() {
            for r in 0..t.n_rows() {
                assert_eq!(t.is_missing(r, c), t.value(r, c).is_nan());
            }
        }
    }

    #[test]
    fn load_errors() {
        assert!(matches!(
            parse_table("a,b\n1,2\n".as_bytes(), "y"),
            Err(Error::MissingColumn(_))
        ));
        assert!(matches!(
            parse_table("a,y\n".as_bytes(), "y"),
            Err(Error::EmptyTable)
        ));
        assert!(matches!(
            parse_table("a,y\n1,2\n3\n".as_bytes(), "y"),
            Err(Error::RaggedRow {
                row: 2,
                expected: 2,
                found: 1
            })
        ));
        assert!(parse_table("a,y\n1,\n".as_bytes(), "y").is_err());
    }

    #[test]
    fn categorical_columns_are_one_hot() {
        let t = table_from_csv("c,a,y\nred,1,1\nblue,2,2\nred,3,3\n", "y");
        assert_eq!(t.column_names(), &["c=blue", "c=red", "a", "y"]);
        assert_eq!(t.column(0), &[0.0, 1.0, 0.0]);
        assert_eq!(t.column(1), &[1.0, 0.0, 1.0]);
        assert_eq!(t.target_index(), 3);
    }

    #[test]
    fn csv_round_trip_keeps_missing() {
        let t = table_from_csv("a,b,y\n,1.5,2\n-3,2,3\n", "y");
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = parse_table(buf.as_slice(), "y").unwrap();
        assert_eq!(back.missing_mask(), t.missing_mask());
        assert_eq!(back.content_hash(), t.content_hash());
    }

    #[test]
    fn exact_linear_synth() {
        let s = synth_make(200, 4, 0, 0.0, 3).unwrap();
        let x = s.table.features();
        let y = s.table.targets();
        for r in 0..200 {
            let pred: f64 = (0..4).map(|j| s.weights[j] * x.get(r, j)).sum();
            assert!((pred - y.get(r, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_columns_do_not_drive_target() {
        let s = synth_make(5000, 3, 4, 0.1, 7).unwrap();
        let t = &s.table;
        let y = t.column(t.target_index());
        let corr = |a: &[f64], b: &[f64]| {
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
            cov / (va * vb).sqrt()
        };
        for j in 3..7 {
            assert!(corr(t.column(j), y).abs() < 0.1);
        }
        // Reordering noise columns leaves the target untouched.
        let permuted = t.select_columns(&[0, 1, 2, 6, 5, 4, 3]).unwrap();
        assert_eq!(permuted.column(permuted.target_index()), y);
        assert!(synth_make(10, 0, 3, 0.1, 0).is_err());
    }

    #[test]
    fn standardize_by_hand() {
        let t = Table::new(
            vec!["a".into(), "y".into()],
            vec![vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 1.0]],
            1,
        )
        .unwrap();
        let st = Standardizer::fit(&t).unwrap();
        let s = st.apply(&t);
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in s.column(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let again = Standardizer::fit(&s).unwrap().apply(&s);
        for (a, b) in again.column(0).iter().zip(s.column(0)) {
            assert!((a - b).abs() < 1e-12);
        }
        let back = st.inverse(&s);
        for (a, b) in back.column(0).iter().zip(t.column(0)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn standardize_skips_missing_and_floors_constant() {
        let t = Table::new(
            vec!["a".into(), "k".into(), "y".into()],
            vec![
                vec![1.0, f64::NAN, 3.0],
                vec![2.0, 2.0, 2.0],
                vec![0.0, 1.0, 2.0],
            ],
            2,
        )
        .unwrap();
        let st = Standardizer::fit(&t).unwrap();
        assert_eq!(st.means[0], 2.0);
        assert_eq!(st.stds[1], STD_FLOOR);
        let s = st.apply(&t);
        assert!(s.is_missing(1, 0));
        assert_eq!(s.column(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = synth_make(10, 2, 0, 0.0, 1).unwrap();
        let b = split_bundle(&s.table, (0.6, 0.2, 0.2), 5).unwrap();
        assert_eq!(
            (b.train.n_rows(), b.val.n_rows(), b.test.n_rows()),
            (6, 2, 2)
        );
        let again = split_bundle(&s.table, (0.6, 0.2, 0.2), 5).unwrap();
        assert_eq!(b, again);
        let mut all: Vec<usize> = b
            .train_indices
            .iter()
            .chain(&b.val_indices)
            .chain(&b.test_indices)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(matches!(
            split_bundle(&s.table, (0.9, 0.05, 0.05), 1),
            Err(Error::EmptySplit(_))
        ));
        assert!(split_bundle(&s.table, (0.5, 0.2, 0.2), 1).is_err());
    }

    #[test]
    fn standardized_bundle_uses_train_statistics() {
        let s = synth_make(100, 3, 1, 0.1, 2).unwrap();
        let b =
            standardize_fit_apply(&split_bundle(&s.table, (0.6, 0.2, 0.2), 1).unwrap()).unwrap();
        let st = b.standardizer.as_ref().unwrap();
        let raw_val = split_bundle(&s.table, (0.6, 0.2, 0.2), 1).unwrap().val;
        assert!(
            (b.val.value(0, 0) - (raw_val.value(0, 0) - st.means[0]) / st.stds[0]).abs() < 1e-15
        );
        let m: f64 = b.train.column(0).iter().sum::<f64>() / b.train.n_rows() as f64;
        assert!(m.abs() < 1e-12);
    }

    #[test]
    fn zero_rate_is_identity() {
        let s = synth_make(50, 3, 2, 0.1, 2).unwrap();
        for kind in [
            ErrorKind::Missing,
            ErrorKind::Outlier,
            ErrorKind::Typo,
            ErrorKind::LabelSwap,
        ] {
            let (t, truth) = inject_errors(&s.table, &ErrorSpec::new(kind, 0.0, 1)).unwrap();
            assert_eq!(t, s.table);
            assert!(truth.is_clear());
        }
        assert!(inject_errors(&s.table, &ErrorSpec::new(ErrorKind::Missing, 1.5, 1)).is_err());
    }

    #[test]
    fn ten_percent_corrupts_exactly_five_hundred_cells() {
        let s = synth_make(1000, 3, 2, 0.1, 4).unwrap();
        for kind in [ErrorKind::Missing, ErrorKind::Outlier, ErrorKind::Typo] {
            let (t, truth) = inject_errors(&s.table, &ErrorSpec::new(kind, 0.1, 9)).unwrap();
            assert_eq!(truth.count(), 500, "{kind:?}");
            let changed = (0..t.n_rows())
                .flat_map(|r| (0..t.n_cols()).map(move |c| (r, c)))
                .filter(|&(r, c)| t.value(r, c).to_bits() != s.table.value(r, c).to_bits())
                .count();
            assert_eq!(changed, 500, "{kind:?}");
            assert!((0..1000).all(|r| !truth.get(r, t.target_index())));
        }
    }

    #[test]
    fn outliers_shift_by_sigma_times_std() {
        let t = Table::new(
            vec!["a".into(), "y".into()],
            vec![vec![0.0, 2.0, 0.0, 2.0], vec![0.0; 4]],
            1,
        )
        .unwrap();
        let (out, truth) = inject_errors(&t, &ErrorSpec::new(ErrorKind::Outlier, 0.25, 3)).unwrap();
        let (r, c) = truth.cells().next().unwrap();
        assert_eq!((out.value(r, c) - t.value(r, c)).abs(), 5.0);
    }

    #[test]
    fn label_swap_two_rows() {
        let t = Table::new(
            vec!["a".into(), "y".into()],
            vec![vec![0.0, 1.0], vec![10.0, 20.0]],
            1,
        )
        .unwrap();
        let (out, truth) =
            inject_errors(&t, &ErrorSpec::new(ErrorKind::LabelSwap, 1.0, 0)).unwrap();
        assert_eq!(out.column(1), &[20.0, 10.0]);
        assert_eq!(truth.count(), 2);
        assert_eq!(out.column(0), t.column(0));
    }

    #[test]
    fn digit_transposition() {
        assert_eq!(transpose_digits(123.4), 213.4);
        assert_eq!(transpose_digits(-123.4), -213.4);
        assert_eq!(transpose_digits(7.0), 0.7);
        assert_eq!(transpose_digits(113.0), 131.0);
        assert_eq!(transpose_digits(1.11), 11.1);
        assert_eq!(transpose_digits(0.0), 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn injection_count_and_purity(rate in 0.0f64..=1.0, seed in 0u64..500, kind_idx in 0usize..3) {
            let kind = [ErrorKind::Missing, ErrorKind::Outlier, ErrorKind::Typo][kind_idx];
            let s = synth_make(40, 2, 1, 0.1, seed).unwrap();
            let before = s.table.clone();
            let spec = ErrorSpec::new(kind, rate, seed);
            let (a, ta) = inject_errors(&s.table, &spec).unwrap();
            let (b, tb) = inject_errors(&s.table, &spec).unwrap();
            prop_assert_eq!(&s.table, &before);
            prop_assert_eq!(a.content_hash(), b.content_hash());
            prop_assert_eq!(&ta, &tb);
            prop_assert_eq!(ta.count(), (rate * 120.0).round() as usize);
            for r in 0..40 {
                for c in 0..4 {
                    let changed = a.value(r, c).to_bits() != before.value(r, c).to_bits();
                    prop_assert_eq!(changed, ta.get(r, c));
                }
            }
        }
    }
}
