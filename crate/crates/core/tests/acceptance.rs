//! End-to-end acceptance checks. All criteria run sequentially inside one test
//! so wall-clock comparisons are not disturbed by concurrent tests.

use std::collections::BTreeMap;
use std::fs;
use std::time::{Duration, Instant};

use pipegrad::autodiff::{finite_diff_check, relative_error, Tape, Var};
use pipegrad::cleaning::{
    detect, repair, train_cleaning, CleaningData, CleaningMixture, DetectorKind, LambdaBatchSource,
    RepairKind,
};
use pipegrad::data::{synth_make, ErrorKind, ErrorSpec, SynthSpec, Table};
use pipegrad::harness::{
    emit_report, run_experiment, Baseline, DataSource, ExperimentConfig, ExperimentKind, RunReport,
    LEARNED,
};
use pipegrad::nn::{self, train_regressor, Mlp, TrainConfig};
use pipegrad::selection::{meta_grad_lambda, weighted_update, SourceWeights};
use pipegrad::{Matrix, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    )
    .unwrap()
}

fn ten_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn rmse_of(report: &RunReport, seed: u64, method: &str) -> f64 {
    report
        .result(seed, method)
        .and_then(|r| r.test_rmse)
        .unwrap_or(f64::INFINITY)
}

fn synth(n_rows: usize, n_informative: usize, n_noise: usize) -> DataSource {
    DataSource::Synth(SynthSpec {
        n_rows,
        n_informative,
        n_noise,
        noise_std: 0.1,
    })
}

fn base_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        lambda_learning_rate: 0.05,
        epochs: 30,
        batch_size: 32,
        hidden_layers: vec![32, 32],
        ..TrainConfig::default()
    }
}

fn cleaning_config(rate: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(ExperimentKind::Cleaning, synth(1000, 5, 0), ten_seeds());
    c.error_specs = vec![ErrorSpec::new(ErrorKind::Missing, rate, 0)];
    c.baselines = vec![Baseline::Dirty, Baseline::GridAllPairs];
    c.train_config = base_train_config();
    c
}

fn selection_config(swap_rate: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(
        ExperimentKind::DatasetSelection,
        synth(1000, 5, 0),
        ten_seeds(),
    );
    c.error_specs = vec![ErrorSpec::new(ErrorKind::LabelSwap, swap_rate, 0)];
    c.baselines = vec![Baseline::UnionDefault];
    c.train_config = TrainConfig {
        learning_rate: 0.05,
        lambda_learning_rate: 0.005,
        ..base_train_config()
    };
    c.selection.record_every = 10;
    c
}

fn feature_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(
        ExperimentKind::FeatureSelection,
        synth(1000, 5, 20),
        ten_seeds(),
    );
    c.baselines = vec![Baseline::NoSelection, Baseline::PcaGrid];
    c.train_config = base_train_config();
    c
}

/// Random composed graph: returns the loss for the given parameter leaves.
fn random_graph(kind: usize, consts: &[Matrix], tape: &mut Tape, p: &[Var]) -> Result<Var> {
    let c: Vec<Var> = consts.iter().map(|m| tape.constant(m.clone())).collect();
    let (variants, target) = (&c[..c.len() - 1], *c.last().unwrap());
    match kind {
        // softmax mixture of inputs -> relu layer -> linear
        0 => {
            let sigma = tape.softmax_rowwise(p[0])?;
            let x = tape.mix(sigma, variants)?;
            let z = tape.matmul(x, p[1])?;
            let z = tape.add(z, p[2])?;
            let h = tape.relu(z);
            let out = tape.matmul(h, p[3])?;
            tape.mse_loss(out, target)
        }
        // sigmoid gates on inputs -> sigmoid layer -> linear + bias
        1 => {
            let g = tape.sigmoid(p[0]);
            let x = tape.mul(variants[0], g)?;
            let z = tape.matmul(x, p[1])?;
            let z = tape.add(z, p[2])?;
            let h = tape.sigmoid(z);
            let out = tape.matmul(h, p[3])?;
            let out = tape.add(out, p[4])?;
            tape.mse_loss(out, target)
        }
        // additive pair logits -> mixture -> gates -> mean of squares
        2 => {
            let logits = tape.pair_sum(p[0], p[1])?;
            let sigma = tape.softmax_rowwise(logits)?;
            let x = tape.mix(sigma, variants)?;
            let g = tape.sigmoid(p[2]);
            let x = tape.mul(x, g)?;
            let out = tape.matmul(x, p[3])?;
            let sq = tape.mul(out, out)?;
            tape.mean(sq)
        }
        // concatenation, subtraction, scaling and sum
        3 => {
            let a = tape.matmul(variants[0], p[0])?;
            let b = tape.sigmoid(a);
            let cat = tape.concat_cols(&[a, b])?;
            let d = tape.matmul(cat, p[1])?;
            let e = tape.sub(d, target)?;
            let f = tape.mul(e, e)?;
            let s = tape.sum(f);
            Ok(tape.scalar_mul(s, 0.1))
        }
        // mixture + gates + two relu layers + mse + gate penalty
        _ => {
            let sigma = tape.softmax_rowwise(p[0])?;
            let x = tape.mix(sigma, variants)?;
            let g = tape.sigmoid(p[1]);
            let x = tape.mul(x, g)?;
            let z1 = tape.matmul(x, p[2])?;
            let h1 = tape.relu(z1);
            let z2 = tape.matmul(h1, p[3])?;
            let h2 = tape.relu(z2);
            let out = tape.matmul(h2, p[4])?;
            let mse = tape.mse_loss(out, target)?;
            let pen = tape.sum(g);
            let pen = tape.scalar_mul(pen, 0.01);
            tape.add(mse, pen)
        }
    }
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let kind = (trial % 5) as usize;
        let n = rng.random_range(3..7);
        let f = rng.random_range(2..5);
        let h = rng.random_range(2..6);
        let k = rng.random_range(2..4);
        let mut consts: Vec<Matrix> = (0..k)
            .map(|_| uniform_matrix(&mut rng, n, f, 1.0))
            .collect();
        let target_cols = if kind == 3 { h } else { 1 };
        consts.push(uniform_matrix(&mut rng, n, target_cols, 1.0));
        let shapes: Vec<(usize, usize)> = match kind {
            0 => vec![(1, k), (f, h), (1, h), (h, 1)],
            1 => vec![(1, f), (f, h), (1, h), (h, 1), (1, 1)],
            2 => vec![(1, k), (1, 1), (1, f), (f, 1)],
            3 => vec![(f, h), (2 * h, h)],
            _ => vec![(1, k), (1, f), (f, h), (h, h), (h, 1)],
        };
        let params: Vec<(String, Matrix)> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| (format!("p{i}"), uniform_matrix(&mut rng, r, c, 1.0)))
            .collect();
        let report = finite_diff_check(
            |tape, p| random_graph(kind, &consts, tape, p),
            &params,
            1e-5,
        );
        match report {
            Ok(r) => worst = worst.max(r.max_rel_error),
            Err(e) => {
                return Outcome {
                    pass: false,
                    detail: format!("trial {trial}: {e}"),
                }
            }
        }
    }
    Outcome {
        pass: worst < 1e-4,
        detail: format!("max relative error {worst:.2e} over 50 graphs"),
    }
}

fn criterion_2() -> Outcome {
    let synth = synth_make(200, 4, 0, 0.1, 3).unwrap();
    let (dirty, _) =
        pipegrad::data::inject_errors(&synth.table, &ErrorSpec::new(ErrorKind::Missing, 0.1, 3))
            .unwrap();
    let detectors = DetectorKind::defaults();
    let repairs = RepairKind::defaults();
    let variants = pipegrad::cleaning::build_variants(&dirty, &detectors, &repairs).unwrap();
    let y = dirty.targets();
    let vx = synth.table.features();
    let vy = synth.table.targets();
    let chosen = 1;
    let cfg = TrainConfig {
        lambda_learning_rate: 0.0,
        epochs: 5,
        batch_size: 16,
        hidden_layers: vec![8],
        seed: 11,
        ..TrainConfig::default()
    };
    let mut identical = true;
    for epochs in 1..=cfg.epochs {
        let cfg = TrainConfig {
            epochs,
            ..cfg.clone()
        };
        let mut mixture = CleaningMixture::new(detectors.clone(), repairs.clone());
        mixture.lambda_d = vec![0.0, -1e4, -1e4];
        mixture.lambda_r = vec![-1e4, 0.0];
        let data = CleaningData {
            train_variants: &variants,
            train_targets: &y,
            val_features: &vx,
            val_targets: &vy,
            val_variants: None,
            lambda_source: LambdaBatchSource::Train,
        };
        let mut model = Mlp::for_inputs(4, &cfg).unwrap();
        let hist = train_cleaning(&data, &mut mixture, &mut model, &cfg).unwrap();
        let mut plain = Mlp::for_inputs(4, &cfg).unwrap();
        let plain_hist = train_regressor(
            &mut plain,
            &variants[chosen].features(),
            &y,
            Some((&vx, &vy)),
            &cfg,
        )
        .unwrap();
        let sigma_one_hot = hist.epochs.iter().all(|e| e.sigma[chosen] == 1.0);
        let val: Vec<f64> = hist.epochs.iter().map(|e| e.val_rmse).collect();
        identical &= sigma_one_hot
            && model.flat_params() == plain.flat_params()
            && val == plain_hist.val_rmse;
    }
    Outcome {
        pass: identical,
        detail: format!(
            "parameters after each of {} epochs bit-identical: {identical}",
            cfg.epochs
        ),
    }
}

fn criterion_3() -> Outcome {
    let mut worst_rel: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + trial);
        let f = rng.random_range(2..5);
        let hidden = rng.random_range(2..6);
        let n = rng.random_range(4..17);
        let sources = rng.random_range(2..5);
        let model = Mlp::new(&[f, hidden, 1], trial).unwrap();
        let x = uniform_matrix(&mut rng, n, f, 2.0);
        let y = uniform_matrix(&mut rng, n, 1, 2.0);
        let vx = uniform_matrix(&mut rng, 8, f, 2.0);
        let vy = uniform_matrix(&mut rng, 8, 1, 2.0);
        let ids: Vec<usize> = (0..n).map(|i| i % sources).collect();
        let lambda: Vec<f64> = (0..sources).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eta = rng.random_range(0.1..1.0);
        let eval = |lam: &[f64]| {
            let pi = SourceWeights::from_logits(lam.to_vec()).unwrap().pi();
            let step = weighted_update(&model, &x, &y, &ids, &pi, eta).unwrap();
            meta_grad_lambda(&model, &step, &vx, &vy).unwrap()
        };
        let (grad, _) = eval(&lambda);
        worst_sum = worst_sum.max(grad.iter().sum::<f64>().abs());
        let h = 1e-4;
        for k in 0..sources {
            let mut up = lambda.clone();
            up[k] += h;
            let mut down = lambda.clone();
            down[k] -= h;
            let fd = (eval(&up).1 - eval(&down).1) / (2.0 * h);
            worst_rel = worst_rel.max(relative_error(grad[k], fd));
        }
    }
    Outcome {
        pass: worst_rel < 1e-3 && worst_sum < 1e-9,
        detail: format!("max relative error {worst_rel:.2e}, max |sum of gradient| {worst_sum:.2e} over 20 trials"),
    }
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + trial);
        let f = rng.random_range(1..6);
        let n = rng.random_range(1..33);
        let sources = rng.random_range(1..5);
        let model = Mlp::new(&[f, 6, 4, 1], trial).unwrap();
        let x = uniform_matrix(&mut rng, n, f, 2.0);
        let y = uniform_matrix(&mut rng, n, 1, 2.0);
        let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..sources)).collect();
        let lambda: Vec<f64> = (0..sources).map(|_| rng.random_range(-2.0..2.0)).collect();
        let pi = SourceWeights::from_logits(lambda).unwrap().pi();
        let eta = rng.random_range(0.01..0.5);
        let step = weighted_update(&model, &x, &y, &ids, &pi, eta).unwrap();
        let mut brute = model.flat_params();
        for i in 0..n {
            let (_, g) = nn::loss_and_gradient(
                &model,
                &x.select_rows(&[i]).unwrap(),
                &y.select_rows(&[i]).unwrap(),
            )
            .unwrap();
            for (t, gi) in brute.iter_mut().zip(g) {
                *t -= eta * (1.0 / n as f64) * pi[ids[i]] * gi;
            }
        }
        for (a, b) in step.theta_after.iter().zip(&brute) {
            worst = worst.max((a - b).abs());
        }
    }
    Outcome {
        pass: worst < 1e-10,
        detail: format!("max |difference| {worst:.2e} over 20 batches of <= 32 rows"),
    }
}

/// Exhaustive search over every candidate row, sorted by (distance, row).
fn knn_oracle(table: &Table, mask: &pipegrad::data::Mask, k: usize) -> Table {
    let feats = table.feature_indices();
    let n = table.n_rows();
    let usable = |r: usize, j: usize| !mask.get(r, j) && !table.is_missing(r, feats[j]);
    let mut out = table.clone();
    for (r, j) in mask.cells() {
        let observed: Vec<f64> = (0..n)
            .filter(|&q| usable(q, j))
            .map(|q| table.value(q, feats[j]))
            .collect();
        let fallback = if observed.is_empty() {
            0.0
        } else {
            observed.iter().sum::<f64>() / observed.len() as f64
        };
        let shared: Vec<usize> = (0..feats.len())
            .filter(|&o| o != j && usable(r, o))
            .collect();
        let mut cands: Vec<(f64, usize)> = Vec::new();
        for q in 0..n {
            if q == r || !usable(q, j) {
                continue;
            }
            let common: Vec<usize> = shared.iter().copied().filter(|&o| usable(q, o)).collect();
            if common.is_empty() {
                continue;
            }
            let d2 = common
                .iter()
                .map(|&o| (table.value(r, feats[o]) - table.value(q, feats[o])).powi(2))
                .fold(0.0, |a, b| a + b);
            cands.push((d2, q));
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let value = if cands.is_empty() {
            fallback
        } else {
            let top = &cands[..k.min(cands.len())];
            top.iter()
                .map(|&(_, q)| table.value(q, feats[j]))
                .fold(0.0, |a, b| a + b)
                / top.len() as f64
        };
        out.set(r, feats[j], value);
    }
    out
}

fn criterion_5() -> Outcome {
    let mut mismatches = 0;
    let mut cells = 0;
    for trial in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + trial);
        let n = rng.random_range(5..51);
        let f = rng.random_range(2..6);
        let mut columns: Vec<Vec<f64>> = (0..f)
            .map(|_| {
                (0..n)
                    .map(|_| f64::from(rng.random_range(-3i32..4)))
                    .collect()
            })
            .collect();
        for col in columns.iter_mut() {
            for v in col.iter_mut() {
                if rng.random_bool(0.2) {
                    *v = f64::NAN;
                }
            }
        }
        columns.push((0..n).map(|i| i as f64).collect());
        let mut names: Vec<String> = (0..f).map(|j| format!("x{j}")).collect();
        names.push("y".into());
        let table = Table::new(names, columns, f).unwrap();
        let mask = detect(&DetectorKind::MissingValue, &table).unwrap();
        let k = rng.random_range(1..6);
        let got = repair(&RepairKind::KnnImpute { k }, &table, &mask).unwrap();
        let want = knn_oracle(&table, &mask, k);
        for (r, j) in mask.cells() {
            cells += 1;
            let c = table.feature_indices()[j];
            if got.value(r, c).to_bits() != want.value(r, c).to_bits() {
                mismatches += 1;
            }
        }
    }
    Outcome {
        pass: mismatches == 0 && cells > 0,
        detail: format!("{mismatches} mismatches over {cells} imputed cells (30 tables, integer-valued for ties)"),
    }
}

fn criterion_6() -> Outcome {
    let report = run_experiment(&cleaning_config(0.1)).unwrap();
    let mut beats_dirty = 0;
    let mut near_best = 0;
    let mut pipelines_ok = true;
    for seed in ten_seeds() {
        let learned = rmse_of(&report, seed, LEARNED);
        let best_cell = report
            .grid_rows(seed, Baseline::GridAllPairs.name())
            .iter()
            .filter_map(|g| g.test_rmse)
            .fold(f64::INFINITY, f64::min);
        beats_dirty += usize::from(learned < rmse_of(&report, seed, "dirty"));
        near_best += usize::from(learned <= 1.1 * best_cell);
        let pipelines: usize = report
            .results
            .iter()
            .filter(|r| r.seed == seed)
            .map(|r| r.pipelines_trained)
            .sum();
        pipelines_ok &= pipelines == 8;
    }
    Outcome {
        pass: beats_dirty >= 8 && near_best >= 7,
        detail: format!(
            "learned < dirty on {beats_dirty}/10 seeds, <= 1.1 x best grid cell on {near_best}/10 (8 pipelines per seed: {pipelines_ok})"
        ),
    }
}

fn final_pi(report: &RunReport, seed: u64) -> Vec<f64> {
    let t = report.trajectories.iter().find(|t| t.seed == seed).unwrap();
    let last = t.rows.last().unwrap();
    t.columns
        .iter()
        .zip(last)
        .filter(|(c, _)| c.starts_with("pi__"))
        .map(|(_, v)| *v)
        .collect()
}

fn criterion_7() -> Outcome {
    let report = run_experiment(&selection_config(0.3)).unwrap();
    let mut beats = 0;
    let mut ordered = 0;
    for seed in ten_seeds() {
        beats +=
            usize::from(rmse_of(&report, seed, LEARNED) < rmse_of(&report, seed, "union_default"));
        let pi = final_pi(&report, seed);
        ordered += usize::from(pi[1] < pi[0]);
    }
    Outcome {
        pass: beats >= 8 && ordered >= 8,
        detail: format!(
            "learned < union_default on {beats}/10 seeds, final pi_2 < pi_1 on {ordered}/10"
        ),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}

fn criterion_8() -> Outcome {
    let report = run_experiment(&feature_config()).unwrap();
    let mut ordered = 0;
    let mut counts_ok = true;
    let mut seconds: BTreeMap<String, f64> = BTreeMap::new();
    for seed in ten_seeds() {
        let t = report.trajectories.iter().find(|t| t.seed == seed).unwrap();
        let last = t.rows.last().unwrap();
        let gates = |prefix: &str| -> Vec<f64> {
            t.columns
                .iter()
                .zip(last)
                .filter(|(c, _)| c.starts_with(prefix))
                .map(|(_, v)| *v)
                .collect()
        };
        ordered += usize::from(median(gates("gate__noise")) < median(gates("gate__inf")));
        for r in report.results.iter().filter(|r| r.seed == seed) {
            *seconds.entry(r.method.clone()).or_default() += r.seconds;
            let expected = if r.method == "pca_grid" { 15 } else { 1 };
            counts_ok &= r.pipelines_trained == expected;
        }
    }
    let ratio = seconds[LEARNED] / seconds["no_selection"];
    Outcome {
        pass: ordered >= 8 && ratio <= 1.2 && counts_ok,
        detail: format!(
            "noise median gate < informative on {ordered}/10 seeds; wall-clock ratio {ratio:.3}; pipelines 1 vs 15: {counts_ok}"
        ),
    }
}

fn small(config: ExperimentConfig) -> ExperimentConfig {
    let mut c = config;
    c.seeds = vec![0, 1];
    c.train_config.epochs = 3;
    if let DataSource::Synth(s) = &mut c.data {
        s.n_rows = 200;
    }
    c
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut same = true;
    let mut compared = 0;
    for (name, config) in [
        ("cleaning", small(cleaning_config(0.1))),
        ("dataset_selection", small(selection_config(0.3))),
        ("feature_selection", small(feature_config())),
    ] {
        let outputs: Vec<_> = (0..2)
            .map(|i| {
                let out = dir.path().join(format!("{name}_{i}"));
                emit_report(&run_experiment(&config).unwrap(), &out).unwrap();
                out
            })
            .collect();
        for file in ["summary.csv".to_string(), format!("weights_{name}.csv")] {
            let a = fs::read(outputs[0].join(&file)).unwrap();
            let b = fs::read(outputs[1].join(&file)).unwrap();
            same &= a == b && !a.is_empty();
            compared += 1;
        }
    }
    Outcome {
        pass: same,
        detail: format!("{compared} files byte-identical across repeated runs: {same}"),
    }
}

fn criterion_10() -> Outcome {
    let clean = run_experiment(&cleaning_config(0.0)).unwrap();
    let select = run_experiment(&selection_config(0.0)).unwrap();
    let mut worst: f64 = f64::NEG_INFINITY;
    for seed in ten_seeds() {
        worst = worst.max(rmse_of(&clean, seed, LEARNED) - rmse_of(&clean, seed, "dirty"));
        worst =
            worst.max(rmse_of(&select, seed, LEARNED) - rmse_of(&select, seed, "union_default"));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in &select.trajectories {
        for row in &t.rows {
            for (c, v) in t.columns.iter().zip(row) {
                if c.starts_with("pi__") {
                    lo = lo.min(*v);
                    hi = hi.max(*v);
                }
            }
        }
    }
    Outcome {
        pass: worst <= 0.05 && lo >= 0.35 && hi <= 0.65,
        detail: format!(
            "max RMSE increase over default {worst:.4}; pi range [{lo:.3}, {hi:.3}] at swap rate 0"
        ),
    }
}

#[test]
fn acceptance_criteria() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check, Option<Duration>); 10] = [
        (
            "1 gradient correctness",
            criterion_1,
            Some(Duration::from_secs(30)),
        ),
        (
            "2 cleaning one-hot equivalence",
            criterion_2,
            Some(Duration::from_secs(10)),
        ),
        (
            "3 meta-gradient exactness",
            criterion_3,
            Some(Duration::from_secs(60)),
        ),
        ("4 weighted update oracle", criterion_4, None),
        ("5 knn imputer oracle", criterion_5, None),
        (
            "6 cleaning direction",
            criterion_6,
            Some(Duration::from_secs(300)),
        ),
        (
            "7 dataset selection direction",
            criterion_7,
            Some(Duration::from_secs(300)),
        ),
        (
            "8 feature selection direction",
            criterion_8,
            Some(Duration::from_secs(300)),
        ),
        ("9 determinism", criterion_9, None),
        ("10 null-case safety", criterion_10, None),
    ];
    let mut failures = Vec::new();
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let pass = outcome.pass && in_time;
        println!(
            "{} criterion {name}: {} ({:.1}s{})",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            limit.map_or(String::new(), |l| format!(", limit {}s", l.as_secs()))
        );
        if !pass {
            failures.push(name);
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
