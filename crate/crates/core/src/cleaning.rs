//! Learned data cleaning.
//!
//! Every detector/repair pair produces one repaired copy of the training
//! table up front. Training feeds the model the convex combination of those
//! copies, weighted by a softmax over `λ_d + λ_r`, and learns the weights with
//! the model: each step one batch updates the model with the weights frozen,
//! then a second batch updates the weights with the model frozen.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Tape, Var};
use crate::data::{Mask, Table};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{self, stream, BatchSampler, Mlp, Optimizer, OptimizerKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorKind {
    MissingValue,
    /// Leave-one-out z-score: a cell is scored against the mean and std of the
    /// other observed cells of its column.
    ZscoreOutlier {
        threshold: f64,
    },
    HistogramRare {
        bin_count: usize,
        min_freq: f64,
    },
}

impl DetectorKind {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorKind::MissingValue => "missing_value",
            DetectorKind::ZscoreOutlier { .. } => "zscore_outlier",
            DetectorKind::HistogramRare { .. } => "histogram_rare",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DetectorKind::ZscoreOutlier { threshold } if !(threshold > 0.0) => {
                Err(Error::InvalidArgument(format!("zscore threshold must be > 0, got {threshold}")))
            }
            DetectorKind::HistogramRare { bin_count, min_freq } if bin_count == 0 || !(min_freq > 0.0 && min_freq < 1.0) => {
                Err(Error::InvalidArgument(format!(
                    "histogram needs bin_count >= 1 and min_freq in (0, 1), got {bin_count} / {min_freq}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Missing-value, z-score (3.0) and histogram (20 bins, 1%) detectors.
    pub fn defaults() -> Vec<DetectorKind> {
        vec![
            DetectorKind::MissingValue,
            DetectorKind::ZscoreOutlier { threshold: 3.0 },
            DetectorKind::HistogramRare {
                bin_count: 20,
                min_freq: 0.01,
            },
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RepairKind {
    MeanImpute,
    MedianImpute,
    KnnImpute { k: usize },
}

impl RepairKind {
    pub fn name(&self) -> &'static str {
        match self {
            RepairKind::MeanImpute => "mean_impute",
            RepairKind::MedianImpute => "median_impute",
            RepairKind::KnnImpute { .. } => "knn_impute",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RepairKind::KnnImpute { k: 0 } => {
                Err(Error::InvalidArgument("knn_impute needs k >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Mean and 5-NN imputation.
    pub fn defaults() -> Vec<RepairKind> {
        vec![RepairKind::MeanImpute, RepairKind::KnnImpute { k: 5 }]
    }
}

/// Observed values of every feature column (`None` = missing).
fn observed_columns(table: &Table) -> Vec<Vec<Option<f64>>> {
    table
        .feature_indices()
        .into_iter()
        .map(|c| {
            (0..table.n_rows())
                .map(|r| (!table.is_missing(r, c)).then(|| table.value(r, c)))
                .collect()
        })
        .collect()
}

/// Flags suspicious feature cells; the mask is `n_rows x n_features`.
pub fn detect(kind: &DetectorKind, table: &Table) -> Result<Mask> {
    kind.validate()?;
    if let DetectorKind::MissingValue = kind {
        return Ok(table.feature_missing_mask());
    }
    let mut mask = Mask::new(table.n_rows(), table.n_features());
    for (j, col) in observed_columns(table).iter().enumerate() {
        let obs: Vec<(usize, f64)> = col
            .iter()
            .enumerate()
            .filter_map(|(r, v)| v.map(|v| (r, v)))
            .collect();
        match *kind {
            DetectorKind::ZscoreOutlier { threshold } => {
                let n = obs.len();
                if n < 3 {
                    continue;
                }
                let nf = n as f64;
                let mean = obs.iter().map(|(_, v)| v).sum::<f64>() / nf;
                let m2: f64 = obs.iter().map(|(_, v)| (v - mean) * (v - mean)).sum();
                for &(r, v) in &obs {
                    let d = v - mean;
                    let loo_mean = (nf * mean - v) / (nf - 1.0);
                    let loo_m2 = (m2 - d * d * nf / (nf - 1.0)).max(0.0);
                    let loo_std = (loo_m2 / (nf - 1.0)).sqrt().max(1e-8);
                    if (v - loo_mean).abs() / loo_std > threshold {
                        mask.set(r, j, true);
                    }
                }
            }
            DetectorKind::HistogramRare {
                bin_count,
                min_freq,
            } => {
                if obs.is_empty() {
                    continue;
                }
                let lo = obs.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
                let hi = obs
                    .iter()
                    .map(|(_, v)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                if hi <= lo {
                    continue;
                }
                let bin = |v: f64| {
                    (((v - lo) / (hi - lo) * bin_count as f64) as usize).min(bin_count - 1)
                };
                let mut counts = vec![0usize; bin_count];
                for &(_, v) in &obs {
                    counts[bin(v)] += 1;
                }
                for &(r, v) in &obs {
                    if (counts[bin(v)] as f64) / (obs.len() as f64) < min_freq {
                        mask.set(r, j, true);
                    }
                }
            }
            DetectorKind::MissingValue => unreachable!(),
        }
    }
    Ok(mask)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Replaces flagged feature cells. Unflagged cells are copied unchanged, so
/// missing cells the detector did not flag stay missing.
pub fn repair(kind: &RepairKind, table: &Table, mask: &Mask) -> Result<Table> {
    kind.validate()?;
    let feats = table.feature_indices();
    if mask.shape() != (table.n_rows(), feats.len()) {
        return Err(Error::Shape {
            op: "repair",
            lhs: (table.n_rows(), feats.len()),
            rhs: mask.shape(),
        });
    }
    let n = table.n_rows();
    let usable = |r: usize, j: usize| !mask.get(r, j) && !table.is_missing(r, feats[j]);
    let clean_values = |j: usize| -> Vec<f64> {
        (0..n)
            .filter(|&r| usable(r, j))
            .map(|r| table.value(r, feats[j]))
            .collect()
    };
    let fallback: Vec<f64> = (0..feats.len())
        .map(|j| {
            let vals = clean_values(j);
            if vals.is_empty() {
                warn!(
                    "column {:?} entirely flagged; imputing 0",
                    table.column_names()[feats[j]]
                );
                0.0
            } else if let RepairKind::MedianImpute = kind {
                median(&mut vals.clone())
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect();

    let mut out = table.clone();
    match *kind {
        RepairKind::MeanImpute | RepairKind::MedianImpute => {
            for (r, j) in mask.cells() {
                out.set(r, feats[j], fallback[j]);
            }
        }
        RepairKind::KnnImpute { k } => {
            for (r, j) in mask.cells() {
                let value = knn_value(table, &feats, &usable, r, j, k).unwrap_or(fallback[j]);
                out.set(r, feats[j], value);
            }
        }
    }
    Ok(out)
}

/// Mean of column `j` over the `k` nearest rows that observe it. Distance is
/// Euclidean over the other features usable in both rows; ties go to the lower
/// row index. `None` when no row shares a usable feature.
fn knn_value(
    table: &Table,
    feats: &[usize],
    usable: &impl Fn(usize, usize) -> bool,
    query: usize,
    j: usize,
    k: usize,
) -> Option<f64> {
    let shared: Vec<usize> = (0..feats.len())
        .filter(|&o| o != j && usable(query, o))
        .collect();
    if shared.is_empty() {
        return None;
    }
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for cand in 0..table.n_rows() {
        if cand == query || !usable(cand, j) {
            continue;
        }
        let mut d2 = 0.0;
        let mut overlap = false;
        for &o in &shared {
            if usable(cand, o) {
                let diff = table.value(query, feats[o]) - table.value(cand, feats[o]);
                d2 += diff * diff;
                overlap = true;
            }
        }
        if !overlap {
            continue;
        }
        if best.len() == k && d2 >= best[k - 1].0 {
            continue;
        }
        let pos = best.partition_point(|&(bd, bi)| bd < d2 || (bd == d2 && bi < cand));
        best.insert(pos, (d2, cand));
        best.truncate(k);
    }
    if best.is_empty() {
        return None;
    }
    let total: f64 = best.iter().map(|&(_, r)| table.value(r, feats[j])).sum();
    Some(total / best.len() as f64)
}

/// Missing feature cells replaced by the observed column mean (0 when a column
/// has no observed cells). This is also what the uncleaned baseline sees.
pub fn fill_missing_with_mean(table: &Table) -> Table {
    let mut out = table.clone();
    for c in table.feature_indices() {
        let vals: Vec<f64> = table
            .column(c)
            .iter()
            .copied()
            .filter(|v| !v.is_nan())
            .collect();
        let mean = if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        for r in 0..table.n_rows() {
            if table.is_missing(r, c) {
                out.set(r, c, mean);
            }
        }
    }
    out
}

/// One repaired copy of the table.
#[derive(Clone, Debug, PartialEq)]
pub struct RepairedVariant {
    pub detector_idx: usize,
    pub repair_idx: usize,
    pub table: Table,
}

impl RepairedVariant {
    pub fn features(&self) -> Matrix {
        self.table.features()
    }
}

/// `repair(r, detect(d))` for every pair, detector-major. Missing cells no
/// detector flagged are mean-filled so every variant is complete.
pub fn build_variants(
    table: &Table,
    detectors: &[DetectorKind],
    repairs: &[RepairKind],
) -> Result<Vec<RepairedVariant>> {
    if detectors.is_empty() || repairs.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one detector and one repair".into(),
        ));
    }
    let mut out = Vec::with_capacity(detectors.len() * repairs.len());
    for (d, det) in detectors.iter().enumerate() {
        let mask = detect(det, table)?;
        for (r, rep) in repairs.iter().enumerate() {
            let repaired = repair(rep, table, &mask)?;
            out.push(RepairedVariant {
                detector_idx: d,
                repair_idx: r,
                table: fill_missing_with_mean(&repaired),
            });
        }
    }
    Ok(out)
}

/// Learnable weights over detectors and repairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleaningMixture {
    pub detectors: Vec<DetectorKind>,
    pub repairs: Vec<RepairKind>,
    pub lambda_d: Vec<f64>,
    pub lambda_r: Vec<f64>,
    /// Optional independent logit per pair, added to `λ_d + λ_r`. `None`
    /// keeps the additive parameterization.
    pub lambda_pair: Option<Vec<f64>>,
}

impl CleaningMixture {
    /// All weights zero (uniform pair distribution).
    pub fn new(detectors: Vec<DetectorKind>, repairs: Vec<RepairKind>) -> Self {
        let (nd, nr) = (detectors.len(), repairs.len());
        CleaningMixture {
            detectors,
            repairs,
            lambda_d: vec![0.0; nd],
            lambda_r: vec![0.0; nr],
            lambda_pair: None,
        }
    }

    pub fn with_free_pairs(mut self) -> Self {
        self.lambda_pair = Some(vec![0.0; self.n_pairs()]);
        self
    }

    pub fn n_pairs(&self) -> usize {
        self.detectors.len() * self.repairs.len()
    }

    pub fn pair_name(&self, pair: usize) -> String {
        let nr = self.repairs.len();
        format!(
            "{}__{}",
            self.detectors[pair / nr].name(),
            self.repairs[pair % nr].name()
        )
    }

    fn flat_lambda(&self) -> Vec<f64> {
        let mut v = self.lambda_d.clone();
        v.extend_from_slice(&self.lambda_r);
        if let Some(p) = &self.lambda_pair {
            v.extend_from_slice(p);
        }
        v
    }

    fn set_flat_lambda(&mut self, flat: &[f64]) {
        let (nd, nr) = (self.lambda_d.len(), self.lambda_r.len());
        self.lambda_d.copy_from_slice(&flat[..nd]);
        self.lambda_r.copy_from_slice(&flat[nd..nd + nr]);
        if let Some(p) = &mut self.lambda_pair {
            p.copy_from_slice(&flat[nd + nr..]);
        }
    }

    /// Places the weights on the tape and returns `(σ, weight vars)`.
    pub fn sigma_on_tape(&self, tape: &mut Tape, trainable: bool) -> Result<(Var, Vec<Var>)> {
        let ld = tape.leaf(Matrix::row_vector(self.lambda_d.clone()), trainable);
        let lr = tape.leaf(Matrix::row_vector(self.lambda_r.clone()), trainable);
        let mut logits = tape.pair_sum(ld, lr)?;
        let mut vars = vec![ld, lr];
        if let Some(p) = &self.lambda_pair {
            let lp = tape.leaf(Matrix::row_vector(p.clone()), trainable);
            logits = tape.add(logits, lp)?;
            vars.push(lp);
        }
        Ok((tape.softmax_rowwise(logits)?, vars))
    }

    /// `σ_dr = exp(λ_d + λ_r) / Σ exp(λ_d' + λ_r')`, detector-major.
    pub fn pair_softmax(&self) -> Vec<f64> {
        let mut logits = Vec::with_capacity(self.n_pairs());
        for (d, ld) in self.lambda_d.iter().enumerate() {
            for (r, lr) in self.lambda_r.iter().enumerate() {
                let extra = self
                    .lambda_pair
                    .as_ref()
                    .map_or(0.0, |p| p[d * self.lambda_r.len() + r]);
                logits.push(ld + lr + extra);
            }
        }
        softmax_rows(&Matrix::row_vector(logits))
            .map(Matrix::into_vec)
            .unwrap_or_default()
    }

    /// Index of the heaviest pair, lowest index on exact ties.
    pub fn chosen_pair(&self) -> usize {
        argmax_first(&self.pair_softmax())
    }
}

pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Standalone `σ` for the given weights.
pub fn pair_softmax(mixture: &CleaningMixture) -> Vec<f64> {
    mixture.pair_softmax()
}

/// `Σ_k σ_k · variant_k[rows]` as a tape node.
pub fn mixed_input(
    tape: &mut Tape,
    sigma: Var,
    variants: &[Matrix],
    rows: &[usize],
) -> Result<Var> {
    let inputs = variants
        .iter()
        .map(|v| v.select_rows(rows).map(|m| tape.constant(m)))
        .collect::<Result<Vec<_>>>()?;
    tape.mix(sigma, &inputs)
}

/// Where the batch that updates the mixture weights comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaBatchSource {
    #[default]
    Train,
    Validation,
}

/// Inputs to [`train_cleaning`]. Only training and validation data appear here.
pub struct CleaningData<'a> {
    /// Repaired training tables, detector-major, matching the mixture's pairs.
    pub train_variants: &'a [RepairedVariant],
    pub train_targets: &'a Matrix,
    /// Complete validation features used for the per-epoch RMSE.
    pub val_features: &'a Matrix,
    pub val_targets: &'a Matrix,
    /// Repaired validation tables; required when the weights learn from validation.
    pub val_variants: Option<&'a [RepairedVariant]>,
    pub lambda_source: LambdaBatchSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleaningEpoch {
    pub epoch: usize,
    pub val_rmse: f64,
    pub sigma: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningHistory {
    pub epochs: Vec<CleaningEpoch>,
    pub steps: usize,
}

fn variant_matrices(variants: &[RepairedVariant]) -> Vec<Matrix> {
    variants.iter().map(RepairedVariant::features).collect()
}

/// Joint training of the model and the mixture weights (alternating batches).
pub fn train_cleaning(
    data: &CleaningData<'_>,
    mixture: &mut CleaningMixture,
    model: &mut Mlp,
    config: &TrainConfig,
) -> Result<CleaningHistory> {
    config.validate()?;
    if data.train_variants.len() != mixture.n_pairs() {
        return Err(Error::InvalidArgument(format!(
            "{} variants for {} detector/repair pairs",
            data.train_variants.len(),
            mixture.n_pairs()
        )));
    }
    if !data.val_features.all_finite() {
        return Err(Error::NonFinite("validation features".into()));
    }
    let train_x = variant_matrices(data.train_variants);
    let n = data.train_targets.rows();
    if n == 0 || train_x.iter().any(|m| m.rows() != n || !m.all_finite()) {
        return Err(Error::InvalidArgument(
            "training variants must be complete and aligned with targets".into(),
        ));
    }
    let (lambda_x, lambda_y) = match data.lambda_source {
        LambdaBatchSource::Train => (train_x.clone(), data.train_targets),
        LambdaBatchSource::Validation => {
            let vv = data
                .val_variants
                .ok_or_else(|| Error::InvalidArgument("validation variants required".into()))?;
            (variant_matrices(vv), data.val_targets)
        }
    };

    let learn_lambda = config.lambda_learning_rate > 0.0;
    let mut theta_opt = Optimizer::for_model(model, config);
    let mut lambda_opt = Optimizer::new(
        OptimizerKind::Adam,
        config.lambda_learning_rate,
        mixture.flat_lambda().len(),
        config,
    );
    let mut batches = BatchSampler::new(n, config.batch_size, config.seed, stream::TRAIN_BATCHES);
    let mut aux = BatchSampler::new(
        lambda_y.rows(),
        config.batch_size,
        config.seed,
        stream::AUX_BATCHES,
    );
    let mut history = CleaningHistory::default();

    for epoch in 0..config.epochs {
        for rows in batches.epoch() {
            // Model step, weights frozen.
            let mut tape = Tape::new();
            let params = model.bind(&mut tape, true);
            let (sigma, _) = mixture.sigma_on_tape(&mut tape, false)?;
            let x = mixed_input(&mut tape, sigma, &train_x, &rows)?;
            let pred = model.forward(&mut tape, &params, x)?;
            let loss = nn::batch_loss(&mut tape, pred, &data.train_targets.select_rows(&rows)?)?;
            if !tape.scalar_value(loss).is_finite() {
                return Err(Error::NonFinite(format!("cleaning loss at epoch {epoch}")));
            }
            tape.backward(loss)?;
            nn::apply_update(model, &mut theta_opt, &nn::flat_grads(&tape, &params))?;
            history.steps += 1;

            // Weight step on a second batch, model frozen.
            if learn_lambda {
                let rows_b = aux.next_batch();
                let mut tape = Tape::new();
                let params = model.bind(&mut tape, false);
                let (sigma, lambda_vars) = mixture.sigma_on_tape(&mut tape, true)?;
                let x = mixed_input(&mut tape, sigma, &lambda_x, &rows_b)?;
                let pred = model.forward(&mut tape, &params, x)?;
                let loss = nn::batch_loss(&mut tape, pred, &lambda_y.select_rows(&rows_b)?)?;
                if !tape.scalar_value(loss).is_finite() {
                    return Err(Error::NonFinite(format!("mixture loss at epoch {epoch}")));
                }
                tape.backward(loss)?;
                let mut flat = mixture.flat_lambda();
                lambda_opt.step(&mut flat, &nn::flat_grads(&tape, &lambda_vars))?;
                mixture.set_flat_lambda(&flat);
            }
        }
        let val_rmse = nn::rmse(&model.predict(data.val_features)?, data.val_targets)?;
        history.epochs.push(CleaningEpoch {
            epoch,
            val_rmse,
            sigma: mixture.pair_softmax(),
        });
    }
    Ok(history)
}
