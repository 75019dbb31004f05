//! MLP regressor, losses, optimizers and the plain training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Independent random streams derived from one run seed.
pub mod stream {
    pub const MODEL_INIT: u64 = 0;
    pub const TRAIN_BATCHES: u64 = 1;
    pub const AUX_BATCHES: u64 = 2;
    pub const DATA: u64 = 3;
    pub const ERRORS: u64 = 4;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lambda_learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub hidden_layers: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lambda_learning_rate: 1e-2,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            hidden_layers: vec![32, 32],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.lambda_learning_rate >= 0.0) || !self.lambda_learning_rate.is_finite() {
            return bad(format!(
                "lambda_learning_rate must be >= 0, got {}",
                self.lambda_learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be > 0".into());
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden layer widths must be >= 1".into());
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Fully connected regressor: ReLU on hidden layers, identity output of width 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    /// `[W0, b0, W1, b1, ...]`, `W_i` is `dims[i] x dims[i+1]`, `b_i` is `1 x dims[i+1]`.
    params: Vec<Matrix>,
}

impl Mlp {
    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        validate_dims(dims)?;
        let mut rng = stream_rng(seed, stream::MODEL_INIT);
        let mut params = Vec::with_capacity(2 * (dims.len() - 1));
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            params.push(Matrix::from_vec(fan_in, fan_out, data)?);
            params.push(Matrix::zeros(1, fan_out));
        }
        Ok(Mlp {
            dims: dims.to_vec(),
            params,
        })
    }

    /// `input -> hidden_layers -> 1`, seeded from `config.seed`.
    pub fn for_inputs(n_features: usize, config: &TrainConfig) -> Result<Self> {
        let mut dims = vec![n_features];
        dims.extend_from_slice(&config.hidden_layers);
        dims.push(1);
        Mlp::new(&dims, config.seed)
    }

    pub fn from_params(dims: &[usize], params: Vec<Matrix>) -> Result<Self> {
        validate_dims(dims)?;
        if params.len() != 2 * (dims.len() - 1) {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter matrices, got {}",
                2 * (dims.len() - 1),
                params.len()
            )));
        }
        for (i, w) in dims.windows(2).enumerate() {
            for (m, shape) in [
                (&params[2 * i], (w[0], w[1])),
                (&params[2 * i + 1], (1, w[1])),
            ] {
                if m.shape() != shape {
                    return Err(Error::Shape {
                        op: "mlp_params",
                        lhs: shape,
                        rhs: m.shape(),
                    });
                }
            }
        }
        Ok(Mlp {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in &self.params {
            out.extend_from_slice(p.as_slice());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.len();
            p.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Puts the parameters on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.clone(), trainable))
            .collect()
    }

    /// Forward pass with parameters previously placed by [`Mlp::bind`].
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.input_dim() {
            return Err(Error::Shape {
                op: "mlp_forward",
                lhs: (tape.value(x).rows(), cols),
                rhs: (self.input_dim(), self.dims[1]),
            });
        }
        let layers = self.dims.len() - 1;
        let mut h = x;
        for l in 0..layers {
            let z = tape.matmul(h, params[2 * l])?;
            h = tape.add(z, params[2 * l + 1])?;
            if l + 1 < layers {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Predictions (`n x 1`) without gradient tracking.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &params, xv)?;
        let pred = tape.value(out).clone();
        if !pred.all_finite() {
            return Err(Error::NonFinite("mlp predictions".into()));
        }
        Ok(pred)
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidArgument(
            "an MLP needs at least input and output layers".into(),
        ));
    }
    if dims.last() != Some(&1) {
        return Err(Error::InvalidArgument("output dimension must be 1".into()));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument("layer widths must be >= 1".into()));
    }
    Ok(())
}

/// Scalar MSE node for `pred` against a constant target.
pub fn batch_loss(tape: &mut Tape, pred: Var, target: &Matrix) -> Result<Var> {
    if target.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let t = tape.constant(target.clone());
    tape.mse_loss(pred, t)
}

pub fn mse(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "mse",
            lhs: pred.shape(),
            rhs: target.shape(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sse: f64 = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sse / pred.len() as f64)
}

pub fn rmse(pred: &Matrix, target: &Matrix) -> Result<f64> {
    mse(pred, target).map(f64::sqrt)
}

pub(crate) fn flat_grads(tape: &Tape, vars: &[Var]) -> Vec<f64> {
    let mut out = Vec::new();
    for &v in vars {
        out.extend_from_slice(tape.grad_or_zeros(v).as_slice());
    }
    out
}

/// Mean-squared-error loss and its gradient with respect to all parameters.
pub fn loss_and_gradient(model: &Mlp, x: &Matrix, y: &Matrix) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let pred = model.forward(&mut tape, &params, xv)?;
    let loss = batch_loss(&mut tape, pred, y)?;
    let value = tape.scalar_value(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    tape.backward(loss)?;
    Ok((value, flat_grads(&tape, &params)))
}

/// Per-group gradient sums `G_k = Σ_{i in group k} ∇θ (pred_i − y_i)²`.
///
/// One backward pass per non-empty group; empty groups map to zeros.
pub fn per_group_gradients(
    model: &Mlp,
    x: &Matrix,
    y: &Matrix,
    group_ids: &[usize],
    n_groups: usize,
) -> Result<Vec<Vec<f64>>> {
    if group_ids.len() != x.rows() || y.rows() != x.rows() {
        return Err(Error::Shape {
            op: "per_group_gradients",
            lhs: x.shape(),
            rhs: (group_ids.len(), y.rows()),
        });
    }
    let mut members = vec![Vec::new(); n_groups];
    for (row, &g) in group_ids.iter().enumerate() {
        if g >= n_groups {
            return Err(Error::UnknownGroup {
                id: g,
                groups: n_groups,
            });
        }
        members[g].push(row);
    }
    members
        .iter()
        .map(|rows| {
            if rows.is_empty() {
                return Ok(vec![0.0; model.param_count()]);
            }
            let (_, mut grad) =
                loss_and_gradient(model, &x.select_rows(rows)?, &y.select_rows(rows)?)?;
            let count = rows.len() as f64;
            grad.iter_mut().for_each(|g| *g *= count);
            Ok(grad)
        })
        .collect()
}

/// First/second moment buffers for one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    betas: (f64, f64),
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(
        kind: OptimizerKind,
        learning_rate: f64,
        n_params: usize,
        config: &TrainConfig,
    ) -> Self {
        let buffers = if kind == OptimizerKind::Adam {
            n_params
        } else {
            0
        };
        Optimizer {
            kind,
            learning_rate,
            betas: config.adam_betas,
            eps: config.adam_eps,
            m: vec![0.0; buffers],
            v: vec![0.0; buffers],
            step_count: 0,
        }
    }

    /// Optimizer for model weights, using `config.learning_rate`.
    pub fn for_model(model: &Mlp, config: &TrainConfig) -> Self {
        Optimizer::new(
            config.optimizer,
            config.learning_rate,
            model.param_count(),
            config,
        )
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if grad.len() != params.len()
            || (self.kind == OptimizerKind::Adam && grad.len() != self.m.len())
        {
            return Err(Error::InvalidArgument(format!(
                "gradient has {} entries, parameters {}",
                grad.len(),
                params.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = self.betas;
                let t = self.step_count as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
                    self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}

/// One optimizer step on the model's parameters.
pub fn apply_update(model: &mut Mlp, optimizer: &mut Optimizer, gradient: &[f64]) -> Result<()> {
    if gradient.len() != model.param_count() {
        return Err(Error::InvalidArgument(format!(
            "gradient has {} entries, model {}",
            gradient.len(),
            model.param_count()
        )));
    }
    let mut flat = model.flat_params();
    optimizer.step(&mut flat, gradient)?;
    model.set_flat_params(&flat)
}

/// Epoch-wise shuffled mini-batches from a dedicated random stream.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n_rows: usize, batch_size: usize, seed: u64, stream: u64) -> Self {
        BatchSampler {
            rng: stream_rng(seed, stream),
            order: (0..n_rows).collect(),
            batch_size: batch_size.max(1),
            pos: n_rows,
        }
    }

    /// Batches covering one fresh permutation; the last may be short.
    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        self.order.shuffle(&mut self.rng);
        self.pos = self.order.len();
        self.order
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// Next batch from a continuing stream of permutations.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

/// Per-epoch validation RMSE.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub val_rmse: Vec<f64>,
    pub steps: usize,
}

/// Ordinary mini-batch training on a fixed feature matrix.
pub fn train_regressor(
    model: &mut Mlp,
    x: &Matrix,
    y: &Matrix,
    val: Option<(&Matrix, &Matrix)>,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if x.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut opt = Optimizer::for_model(model, config);
    let mut sampler = BatchSampler::new(
        x.rows(),
        config.batch_size,
        config.seed,
        stream::TRAIN_BATCHES,
    );
    let mut history = TrainHistory::default();
    for _ in 0..config.epochs {
        for rows in sampler.epoch() {
            let (_, grad) =
                loss_and_gradient(model, &x.select_rows(&rows)?, &y.select_rows(&rows)?)?;
            apply_update(model, &mut opt, &grad)?;
            history.steps += 1;
        }
        if let Some((vx, vy)) = val {
            history.val_rmse.push(rmse(&model.predict(vx)?, vy)?);
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Uniform};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new(-2.0, 2.0).unwrap();
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| u.sample(&mut rng)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_predict_last_bias() {
        let dims = [3, 4, 1];
        let params = vec![
            Matrix::zeros(3, 4),
            Matrix::zeros(1, 4),
            Matrix::zeros(4, 1),
            Matrix::scalar(0.7),
        ];
        let m = Mlp::from_params(&dims, params).unwrap();
        let pred = m.predict(&random_matrix(5, 3, 1)).unwrap();
        assert!(pred.as_slice().iter().all(|&p| p == 0.7));
    }

    #[test]
    fn identity_single_layer() {
        let m = Mlp::from_params(&[1, 1], vec![Matrix::scalar(1.0), Matrix::scalar(0.0)]).unwrap();
        assert_eq!(m.predict(&Matrix::scalar(2.0)).unwrap().get(0, 0), 2.0);
    }

    #[test]
    fn seeded_model_is_deterministic() {
        let x = random_matrix(6, 4, 9);
        let a = Mlp::new(&[4, 8, 1], 0).unwrap().predict(&x).unwrap();
        let b = Mlp::new(&[4, 8, 1], 0).unwrap().predict(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = Mlp::new(&[4, 8, 1], 0).unwrap();
        assert!(matches!(
            m.predict(&Matrix::zeros(2, 3)),
            Err(Error::Shape {
                op: "mlp_forward",
                ..
            })
        ));
    }

    #[test]
    fn parameter_count_formula() {
        let m = Mlp::new(&[5, 32, 32, 1], 3).unwrap();
        assert_eq!(m.param_count(), 5 * 32 + 32 + 32 * 32 + 32 + 32 + 1);
        assert!(Mlp::new(&[5], 0).is_err());
        assert!(Mlp::new(&[5, 2], 0).is_err());
    }

    #[test]
    fn loss_and_metric_by_hand() {
        let p = Matrix::column_vector(vec![0.0, 0.0]);
        let t = Matrix::column_vector(vec![3.0, 4.0]);
        assert_eq!(mse(&p, &t).unwrap(), 12.5);
        assert!((rmse(&p, &t).unwrap() - 3.5355339059327378).abs() < 1e-12);
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        assert!(matches!(
            mse(&Matrix::zeros(0, 1), &Matrix::zeros(0, 1)),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn rmse_squared_is_mse() {
        let p = random_matrix(100, 1, 4);
        let t = random_matrix(100, 1, 5);
        let (m, r) = (mse(&p, &t).unwrap(), rmse(&p, &t).unwrap());
        assert!((r * r - m).abs() < 1e-12);
    }

    #[test]
    fn single_group_is_batch_gradient_sum() {
        let m = Mlp::new(&[3, 5, 1], 2).unwrap();
        let x = random_matrix(7, 3, 3);
        let y = random_matrix(7, 1, 4);
        let g = per_group_gradients(&m, &x, &y, &[0; 7], 1).unwrap();
        let (_, mean_grad) = loss_and_gradient(&m, &x, &y).unwrap();
        for (a, b) in g[0].iter().zip(&mean_grad) {
            assert!((a - 7.0 * b).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_group_is_zero_and_unknown_group_errors() {
        let m = Mlp::new(&[3, 5, 1], 2).unwrap();
        let x = random_matrix(4, 3, 3);
        let y = random_matrix(4, 1, 4);
        let g = per_group_gradients(&m, &x, &y, &[0; 4], 2).unwrap();
        assert!(g[1].iter().all(|&v| v == 0.0));
        assert!(matches!(
            per_group_gradients(&m, &x, &y, &[0, 1, 2, 0], 2),
            Err(Error::UnknownGroup { id: 2, groups: 2 })
        ));
    }

    #[test]
    fn two_single_row_groups_add_up() {
        let m = Mlp::new(&[3, 5, 1], 8).unwrap();
        let x = random_matrix(2, 3, 6);
        let y = random_matrix(2, 1, 7);
        let g = per_group_gradients(&m, &x, &y, &[0, 1], 2).unwrap();
        // Oracle: two separate single-row backward passes.
        let (_, g0) = loss_and_gradient(
            &m,
            &x.select_rows(&[0]).unwrap(),
            &y.select_rows(&[0]).unwrap(),
        )
        .unwrap();
        let (_, g1) = loss_and_gradient(
            &m,
            &x.select_rows(&[1]).unwrap(),
            &y.select_rows(&[1]).unwrap(),
        )
        .unwrap();
        let (_, both) = loss_and_gradient(&m, &x, &y).unwrap();
        for i in 0..g0.len() {
            assert!((g[0][i] + g[1][i] - (g0[i] + g1[i])).abs() < 1e-10);
            assert!((g[0][i] + g[1][i] - 2.0 * both[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn sgd_and_adam_steps() {
        let cfg = TrainConfig::default();
        let mut sgd = Optimizer::new(OptimizerKind::Sgd, 0.1, 1, &cfg);
        let mut p = [1.0];
        sgd.step(&mut p, &[2.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        sgd.step(&mut p, &[0.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);

        // First Adam step with constant g moves by lr * g / (|g| + eps) ≈ lr.
        let mut adam = Optimizer::new(OptimizerKind::Adam, 1e-3, 3, &cfg);
        let mut q = [0.5, -0.2, 3.0];
        adam.step(&mut q, &[0.3, -2.0, 7.0]).unwrap();
        for (after, (before, g)) in q.iter().zip([(0.5, 0.3f64), (-0.2, -2.0), (3.0, 7.0)]) {
            assert!(((before - after) - 1e-3 * g.signum()).abs() < 1e-6);
        }
        let mut zero = Optimizer::new(OptimizerKind::Adam, 1e-3, 2, &cfg);
        let mut r = [1.0, 2.0];
        zero.step(&mut r, &[0.0, 0.0]).unwrap();
        assert_eq!(r, [1.0, 2.0]);
        assert!(matches!(
            zero.step(&mut r, &[f64::NAN, 0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn sampler_covers_every_row_per_epoch() {
        let mut s = BatchSampler::new(10, 3, 1, stream::TRAIN_BATCHES);
        let batches = s.epoch();
        assert_eq!(
            batches.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![3, 3, 3, 1]
        );
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn training_is_reproducible_and_learns() {
        let x = random_matrix(64, 3, 11);
        let y = Matrix::column_vector((0..64).map(|r| x.get(r, 0) - 0.5 * x.get(r, 2)).collect());
        let cfg = TrainConfig {
            epochs: 20,
            hidden_layers: vec![8],
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let mut a = Mlp::for_inputs(3, &cfg).unwrap();
        let mut b = a.clone();
        let ha = train_regressor(&mut a, &x, &y, Some((&x, &y)), &cfg).unwrap();
        let hb = train_regressor(&mut b, &x, &y, Some((&x, &y)), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(ha.val_rmse.last().unwrap() < &ha.val_rmse[0]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn group_gradients_partition_the_batch(
            seed in 0u64..1000,
            ids in proptest::collection::vec(0usize..3, 1..12),
        ) {
            let n = ids.len();
            let m = Mlp::new(&[2, 4, 1], seed).unwrap();
            let x = random_matrix(n, 2, seed + 1);
            let y = random_matrix(n, 1, seed + 2);
            let g = per_group_gradients(&m, &x, &y, &ids, 3).unwrap();
            let whole = per_group_gradients(&m, &x, &y, &vec![0; n], 1).unwrap();
            for i in 0..m.param_count() {
                let total: f64 = g.iter().map(|gk| gk[i]).sum();
                prop_assert!((total - whole[0][i]).abs() < 1e-10);
            }
        }
    }
}
