//! Learned feature selection with sigmoid gates, and a PCA grid baseline.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape, Var};
use crate::data::{DatasetBundle, Table};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{self, stream, BatchSampler, Mlp, Optimizer, OptimizerKind, TrainConfig};

/// Initial gate logit; `sigmoid(2) ≈ 0.88`.
pub const GATE_INIT: f64 = 2.0;

/// Gates above this value count as selected.
pub const SELECT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureGates {
    lambda: Vec<f64>,
}

impl FeatureGates {
    pub fn new(n_features: usize) -> Result<Self> {
        Self::from_logits(vec![GATE_INIT; n_features])
    }

    pub fn from_logits(lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one feature is required".into(),
            ));
        }
        if lambda.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("gate logits".into()));
        }
        Ok(FeatureGates { lambda })
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn logits(&self) -> &[f64] {
        &self.lambda
    }

    pub fn values(&self) -> Vec<f64> {
        self.lambda.iter().map(|&l| sigmoid(l)).collect()
    }

    /// Indices of features whose gate exceeds [`SELECT_THRESHOLD`].
    pub fn selected(&self) -> Vec<usize> {
        self.values()
            .iter()
            .enumerate()
            .filter(|(_, &g)| g > SELECT_THRESHOLD)
            .map(|(j, _)| j)
            .collect()
    }

    /// Gated copy of `x` (no tape).
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.len() {
            return Err(Error::Shape {
                op: "gate_apply",
                lhs: x.shape(),
                rhs: (1, self.len()),
            });
        }
        let g = self.values();
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (v, gj) in out.row_mut(r).iter_mut().zip(&g) {
                *v *= gj;
            }
        }
        Ok(out)
    }

    /// Places the logits on `tape` as a `1 x f` row.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Var {
        tape.leaf(Matrix::row_vector(self.lambda.clone()), trainable)
    }

    fn bind_column(&self, tape: &mut Tape, trainable: bool) -> Var {
        tape.leaf(Matrix::column_vector(self.lambda.clone()), trainable)
    }
}

/// `x ⊙ sigmoid(λ)` with `λ` a `1 x f` row on the tape.
pub fn gate_apply(tape: &mut Tape, lambda: Var, x: Var) -> Result<Var> {
    let (lr, lc) = tape.value(lambda).shape();
    let (xr, xc) = tape.value(x).shape();
    if lr != 1 || lc != xc {
        return Err(Error::Shape {
            op: "gate_apply",
            lhs: (xr, xc),
            rhs: (lr, lc),
        });
    }
    let g = tape.sigmoid(lambda);
    tape.mul(x, g)
}

/// Predictions of a gated model.
pub fn gated_predict(model: &Mlp, gates: &FeatureGates, x: &Matrix) -> Result<Matrix> {
    model.predict(&gates.apply(x)?)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateOptions {
    /// Weight of `Σ_j gate_j` added to the loss.
    pub l1_weight: f64,
    /// Update gates on a second batch after each model step instead of jointly.
    pub alternating: bool,
}

pub struct GateData<'a> {
    pub train_x: &'a Matrix,
    pub train_y: &'a Matrix,
    pub val_x: &'a Matrix,
    pub val_y: &'a Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateEpoch {
    pub epoch: usize,
    pub val_rmse: f64,
    pub gates: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GateHistory {
    pub epochs: Vec<GateEpoch>,
    pub steps: usize,
}

/// Gated loss with the gates folded into the first weight matrix:
/// `(x ⊙ g) W0 = x (diag(g) W0)`, which keeps the gate gradient at `O(f·h)`.
fn gated_loss(
    tape: &mut Tape,
    model: &Mlp,
    params: &[Var],
    lambda: Var,
    x: &Matrix,
    y: &Matrix,
    l1_weight: f64,
) -> Result<Var> {
    let (f, h) = tape.value(params[0]).shape();
    if tape.value(lambda).shape() != (f, 1) {
        return Err(Error::Shape {
            op: "gate_apply",
            lhs: x.shape(),
            rhs: tape.value(lambda).shape(),
        });
    }
    let g = tape.sigmoid(lambda);
    let ones = tape.constant(Matrix::filled(1, h, 1.0));
    let spread = tape.matmul(g, ones)?;
    let mut gated = params.to_vec();
    gated[0] = tape.mul(params[0], spread)?;
    let xv = tape.constant(x.clone());
    let pred = model.forward(tape, &gated, xv)?;
    let mut loss = nn::batch_loss(tape, pred, y)?;
    if l1_weight != 0.0 {
        let total = tape.sum(g);
        let penalty = tape.scalar_mul(total, l1_weight);
        loss = tape.add(loss, penalty)?;
    }
    if !tape.scalar_value(loss).is_finite() {
        return Err(Error::NonFinite("gated loss".into()));
    }
    Ok(loss)
}

/// Trains model and gates together. With `lambda_learning_rate == 0` the gates
/// stay fixed.
pub fn train_gated(
    data: &GateData<'_>,
    gates: &mut FeatureGates,
    model: &mut Mlp,
    config: &TrainConfig,
    options: &GateOptions,
) -> Result<GateHistory> {
    config.validate()?;
    let n = data.train_x.rows();
    if data.train_x.cols() == 0 {
        return Err(Error::InvalidArgument("no features to gate".into()));
    }
    if data.train_x.cols() != gates.len() {
        return Err(Error::Shape {
            op: "train_gated",
            lhs: data.train_x.shape(),
            rhs: (1, gates.len()),
        });
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let learn = config.lambda_learning_rate > 0.0;
    let mut theta_opt = Optimizer::for_model(model, config);
    let mut lambda_opt = Optimizer::new(
        OptimizerKind::Adam,
        config.lambda_learning_rate,
        gates.len(),
        config,
    );
    let mut batches = BatchSampler::new(n, config.batch_size, config.seed, stream::TRAIN_BATCHES);
    let mut aux = BatchSampler::new(n, config.batch_size, config.seed, stream::AUX_BATCHES);
    let mut history = GateHistory::default();

    for epoch in 0..config.epochs {
        for rows in batches.epoch() {
            let x = data.train_x.select_rows(&rows)?;
            let y = data.train_y.select_rows(&rows)?;
            let joint = learn && !options.alternating;
            let mut tape = Tape::new();
            let params = model.bind(&mut tape, true);
            let lambda = gates.bind_column(&mut tape, joint);
            let loss = gated_loss(&mut tape, model, &params, lambda, &x, &y, options.l1_weight)?;
            tape.backward(loss)?;
            nn::apply_update(model, &mut theta_opt, &nn::flat_grads(&tape, &params))?;
            if joint {
                lambda_opt.step(&mut gates.lambda, tape.grad_or_zeros(lambda).as_slice())?;
            }
            history.steps += 1;

            if learn && options.alternating {
                let rows_b = aux.next_batch();
                let mut tape = Tape::new();
                let params = model.bind(&mut tape, false);
                let lambda = gates.bind_column(&mut tape, true);
                let loss = gated_loss(
                    &mut tape,
                    model,
                    &params,
                    lambda,
                    &data.train_x.select_rows(&rows_b)?,
                    &data.train_y.select_rows(&rows_b)?,
                    options.l1_weight,
                )?;
                tape.backward(loss)?;
                lambda_opt.step(&mut gates.lambda, tape.grad_or_zeros(lambda).as_slice())?;
            }
        }
        history.epochs.push(GateEpoch {
            epoch,
            val_rmse: nn::rmse(&gated_predict(model, gates, data.val_x)?, data.val_y)?,
            gates: gates.values(),
        });
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k x f`, rows orthonormal, ordered by decreasing variance.
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

impl PcaModel {
    /// Fits on the rows of `x` using the covariance eigendecomposition.
    pub fn fit(x: &Matrix, k: usize) -> Result<Self> {
        let (n, f) = x.shape();
        if k == 0 || k > f {
            return Err(Error::InvalidArgument(format!(
                "component count {k} must be in 1..={f}"
            )));
        }
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("pca input".into()));
        }
        let mean: Vec<f64> = (0..f)
            .map(|j| x.column(j).iter().sum::<f64>() / n as f64)
            .collect();
        let centered = DMatrix::from_fn(n, f, |r, c| x.get(r, c) - mean[c]);
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        let cov = centered.transpose() * &centered / denom;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..f).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });

        let mut components = Matrix::zeros(k, f);
        for (i, &c) in order.iter().take(k).enumerate() {
            let v = eig.eigenvectors.column(c);
            // Sign convention: largest-magnitude entry positive.
            let pivot = (0..f).fold(
                0,
                |best, j| if v[j].abs() > v[best].abs() { j } else { best },
            );
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..f {
                components.set(i, j, sign * v[j]);
            }
        }
        let explained_variance = order
            .iter()
            .take(k)
            .map(|&c| eig.eigenvalues[c].max(0.0))
            .collect();
        let total_variance = eig.eigenvalues.iter().map(|e| e.max(0.0)).sum();
        Ok(PcaModel {
            mean,
            components,
            explained_variance,
            total_variance,
        })
    }

    pub fn k(&self) -> usize {
        self.components.rows()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| {
                if self.total_variance > 0.0 {
                    v / self.total_variance
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape {
                op: "pca_transform",
                lhs: x.shape(),
                rhs: self.components.shape(),
            });
        }
        let mut centered = x.clone();
        for r in 0..centered.rows() {
            for (v, m) in centered.row_mut(r).iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        centered.matmul_transpose_rhs(&self.components)
    }

    pub fn inverse_transform(&self, z: &Matrix) -> Result<Matrix> {
        let mut x = z.matmul(&self.components)?;
        for r in 0..x.rows() {
            for (v, m) in x.row_mut(r).iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(x)
    }
}

fn projected_table(table: &Table, pca: &PcaModel) -> Result<Table> {
    let z = pca.transform(&table.features())?;
    let names: Vec<String> = (0..pca.k()).map(|j| format!("pc{j}")).collect();
    Table::from_features(&names, &z, table.targets().as_slice(), table.target_name())
}

/// Fits PCA on the training features and projects every split.
pub fn pca_fit_transform(bundle: &DatasetBundle, k: usize) -> Result<(PcaModel, DatasetBundle)> {
    let pca = PcaModel::fit(&bundle.train.features(), k)?;
    let mut out = bundle.clone();
    out.train = projected_table(&bundle.train, &pca)?;
    out.val = projected_table(&bundle.val, &pca)?;
    out.test = projected_table(&bundle.test, &pca)?;
    Ok((pca, out))
}

/// Up to `count` distinct component counts spread evenly over `1..=f`.
pub fn default_k_grid(n_features: usize, count: usize) -> Vec<usize> {
    if n_features == 0 || count == 0 {
        return Vec::new();
    }
    if count == 1 {
        return vec![n_features];
    }
    let mut ks: Vec<usize> = (0..count)
        .map(|i| 1 + ((i * (n_features - 1)) as f64 / (count - 1) as f64).round() as usize)
        .collect();
    ks.dedup();
    ks
}

/// One trained pipeline of the grid.
#[derive(Clone, Debug)]
pub struct PcaGridCell {
    pub k: usize,
    pub val_rmse: f64,
    pub seconds: f64,
    pub pca: PcaModel,
    pub model: Mlp,
}

#[derive(Clone, Debug, Default)]
pub struct PcaGridReport {
    pub cells: Vec<PcaGridCell>,
    /// Component counts never trained because the budget ran out.
    pub skipped: Vec<usize>,
    pub timed_out: bool,
}

impl PcaGridReport {
    /// Cell with the lowest validation RMSE (first wins ties).
    pub fn best(&self) -> Option<&PcaGridCell> {
        self.cells
            .iter()
            .fold(None, |best: Option<&PcaGridCell>, c| match best {
                Some(b) if b.val_rmse <= c.val_rmse => Some(b),
                _ => Some(c),
            })
    }
}

/// Trains one model per component count. Cells not started before
/// `budget_seconds` elapses are skipped.
pub fn run_pca_grid(
    bundle: &DatasetBundle,
    k_values: &[usize],
    config: &TrainConfig,
    budget_seconds: Option<f64>,
) -> Result<PcaGridReport> {
    if k_values.is_empty() {
        return Err(Error::InvalidArgument("k grid is empty".into()));
    }
    let start = Instant::now();
    let mut report = PcaGridReport::default();
    for (i, &k) in k_values.iter().enumerate() {
        if budget_seconds.is_some_and(|b| start.elapsed().as_secs_f64() >= b) {
            log::warn!(
                "pca grid budget exhausted after {} of {} cells",
                i,
                k_values.len()
            );
            report.timed_out = true;
            report.skipped = k_values[i..].to_vec();
            break;
        }
        let cell_start = Instant::now();
        let (pca, projected) = pca_fit_transform(bundle, k)?;
        let mut model = Mlp::for_inputs(k, config)?;
        let (tx, ty) = (projected.train.features(), projected.train.targets());
        nn::train_regressor(&mut model, &tx, &ty, None, config)?;
        let val_rmse = nn::rmse(
            &model.predict(&projected.val.features())?,
            &projected.val.targets(),
        )?;
        report.cells.push(PcaGridCell {
            k,
            val_rmse,
            seconds: cell_start.elapsed().as_secs_f64(),
            pca,
            model,
        });
    }
    Ok(report)
}
