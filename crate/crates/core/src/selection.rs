//! Learned dataset selection.
//!
//! Training rows come from several source datasets. Each source `k` carries a
//! logit `λ_k`; with `π = softmax(λ)` the model takes the weighted step
//!
//! ```text
//! θ' = θ − (η / n) Σ_k π_k G_k,     G_k = Σ_{i: source(i) = k} ∇θ L(x_i)
//! ```
//!
//! and `λ` follows the gradient of the validation loss at `θ'`. Because the
//! `G_k` are fixed during the step, that gradient has the closed form
//!
//! ```text
//! ∂L_val/∂λ_k = −(η / n) π_k (⟨G_k, g⟩ − Σ_j π_j ⟨G_j, g⟩),   g = ∇θ L_val(θ')
//! ```
//!
//! which needs one extra forward/backward pass on the validation batch.

use serde::{Deserialize, Serialize};

use crate::autodiff::softmax_rows;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::nn::{
    self, per_group_gradients, stream, BatchSampler, Mlp, Optimizer, OptimizerKind, TrainConfig,
};

/// Per-source logits, kept shifted so the largest is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceWeights {
    lambda: Vec<f64>,
}

impl SourceWeights {
    /// Uniform weights over `n_sources`.
    pub fn new(n_sources: usize) -> Result<Self> {
        Self::from_logits(vec![0.0; n_sources])
    }

    pub fn from_logits(lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() || lambda.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument(
                "source logits must be finite and non-empty".into(),
            ));
        }
        let mut w = SourceWeights { lambda };
        w.recenter();
        Ok(w)
    }

    fn recenter(&mut self) {
        let max = self
            .lambda
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        self.lambda.iter_mut().for_each(|l| *l -= max);
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

    pub fn pi(&self) -> Vec<f64> {
        softmax_rows(&Matrix::row_vector(self.lambda.clone()))
            .expect("non-empty")
            .into_vec()
    }

    fn step(&mut self, optimizer: &mut Optimizer, grad: &[f64]) -> Result<()> {
        optimizer.step(&mut self.lambda, grad)?;
        self.recenter();
        Ok(())
    }
}

/// Candidate parameters from one weighted step plus what produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedStep {
    pub theta_before: Vec<f64>,
    pub theta_after: Vec<f64>,
    pub group_grads: Vec<Vec<f64>>,
    pub batch_size: usize,
    pub pi: Vec<f64>,
    pub learning_rate: f64,
}

/// `θ' = θ − (η/n) Σ_k π_k G_k`; the model itself is not modified.
pub fn weighted_update(
    model: &Mlp,
    x: &Matrix,
    y: &Matrix,
    group_ids: &[usize],
    pi: &[f64],
    learning_rate: f64,
) -> Result<WeightedStep> {
    if x.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let group_grads = per_group_gradients(model, x, y, group_ids, pi.len())?;
    if group_grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("per-source gradients".into()));
    }
    let n = x.rows();
    let scale = learning_rate / n as f64;
    let theta_before = model.flat_params();
    let mut theta_after = theta_before.clone();
    for (gk, &pk) in group_grads.iter().zip(pi) {
        for (t, g) in theta_after.iter_mut().zip(gk) {
            *t -= scale * pk * g;
        }
    }
    Ok(WeightedStep {
        theta_before,
        theta_after,
        group_grads,
        batch_size: n,
        pi: pi.to_vec(),
        learning_rate,
    })
}

/// Gradient of the validation loss at `θ'` with respect to the source logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaStepRecord {
    pub step: usize,
    pub pi_before: Vec<f64>,
    pub val_loss_after_candidate: f64,
    pub lambda_grad: Vec<f64>,
}

/// Exact one-step meta-gradient of the validation MSE with respect to `λ`.
pub fn meta_grad_lambda(
    model: &Mlp,
    step: &WeightedStep,
    val_x: &Matrix,
    val_y: &Matrix,
) -> Result<(Vec<f64>, f64)> {
    if val_x.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut candidate = model.clone();
    candidate.set_flat_params(&step.theta_after)?;
    let (val_loss, g_val) = nn::loss_and_gradient(&candidate, val_x, val_y)?;
    let dots: Vec<f64> = step.group_grads.iter().map(|gk| dot(gk, &g_val)).collect();
    let mean_dot: f64 = step.pi.iter().zip(&dots).map(|(p, d)| p * d).sum();
    let scale = step.learning_rate / step.batch_size as f64;
    let grad = step
        .pi
        .iter()
        .zip(&dots)
        .map(|(p, d)| -scale * p * (d - mean_dot))
        .collect();
    Ok((grad, val_loss))
}

/// When the source weights are updated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    #[default]
    PerBatch,
    /// Only on the last batch of every epoch.
    PerEpoch,
}

pub struct SelectionData<'a> {
    pub train_x: &'a Matrix,
    pub train_y: &'a Matrix,
    pub source_ids: &'a [usize],
    pub val_x: &'a Matrix,
    pub val_y: &'a Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub step: usize,
    pub val_rmse: f64,
    pub pi: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionHistory {
    pub steps: Vec<SelectionStep>,
    pub meta: Vec<MetaStepRecord>,
}

/// Trains the model with weighted steps and learns the source weights from
/// validation batches. `record_every` controls how often a history row is kept
/// (the final step is always kept).
pub fn train_selection(
    data: &SelectionData<'_>,
    weights: &mut SourceWeights,
    model: &mut Mlp,
    config: &TrainConfig,
    schedule: LambdaSchedule,
    record_every: usize,
) -> Result<SelectionHistory> {
    config.validate()?;
    let n = data.train_x.rows();
    if n == 0 || data.train_y.rows() != n || data.source_ids.len() != n {
        return Err(Error::InvalidArgument(
            "training rows, targets and source ids must align".into(),
        ));
    }
    if data.val_x.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if let Some(&bad) = data.source_ids.iter().find(|&&s| s >= weights.len()) {
        return Err(Error::UnknownGroup {
            id: bad,
            groups: weights.len(),
        });
    }
    let record_every = record_every.max(1);
    let learn = config.lambda_learning_rate > 0.0 && weights.len() > 1;
    let mut lambda_opt = Optimizer::new(
        OptimizerKind::Adam,
        config.lambda_learning_rate,
        weights.len(),
        config,
    );
    let mut batches = BatchSampler::new(n, config.batch_size, config.seed, stream::TRAIN_BATCHES);
    let mut val_batches = BatchSampler::new(
        data.val_x.rows(),
        config.batch_size,
        config.seed,
        stream::AUX_BATCHES,
    );
    let mut history = SelectionHistory::default();
    let mut step_no = 0;

    for epoch in 0..config.epochs {
        let epoch_batches = batches.epoch();
        let last = epoch_batches.len() - 1;
        for (b, rows) in epoch_batches.into_iter().enumerate() {
            let ids: Vec<usize> = rows.iter().map(|&r| data.source_ids[r]).collect();
            let pi = weights.pi();
            let step = weighted_update(
                model,
                &data.train_x.select_rows(&rows)?,
                &data.train_y.select_rows(&rows)?,
                &ids,
                &pi,
                config.learning_rate,
            )?;
            let update_lambda = learn && (schedule == LambdaSchedule::PerBatch || b == last);
            if update_lambda {
                let vrows = val_batches.next_batch();
                let (grad, val_loss) = meta_grad_lambda(
                    model,
                    &step,
                    &data.val_x.select_rows(&vrows)?,
                    &data.val_y.select_rows(&vrows)?,
                )?;
                weights.step(&mut lambda_opt, &grad)?;
                history.meta.push(MetaStepRecord {
                    step: step_no,
                    pi_before: pi,
                    val_loss_after_candidate: val_loss,
                    lambda_grad: grad,
                });
            }
            if !step.theta_after.iter().all(|t| t.is_finite()) {
                return Err(Error::NonFinite(format!("parameters at epoch {epoch}")));
            }
            model.set_flat_params(&step.theta_after)?;
            let final_step = epoch + 1 == config.epochs && b == last;
            if step_no % record_every == 0 || final_step {
                history.steps.push(SelectionStep {
                    step: step_no,
                    val_rmse: nn::rmse(&model.predict(data.val_x)?, data.val_y)?,
                    pi: weights.pi(),
                });
            }
            step_no += 1;
        }
    }
    Ok(history)
}
