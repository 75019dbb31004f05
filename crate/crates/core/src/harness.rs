//! Config-driven experiments: builds the corrupted bundle for every seed, runs
//! the learned method and the requested baselines on it, and writes reports.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cleaning::{
    build_variants, fill_missing_with_mean, train_cleaning, CleaningData, CleaningMixture,
    DetectorKind, LambdaBatchSource, RepairKind, RepairedVariant,
};
use crate::data::{
    inject_errors_in_rows, load_table, split_bundle, standardize_fit_apply, synth_make,
    DatasetBundle, ErrorSpec, SynthSpec, Table,
};
use crate::error::{Error, Result};
use crate::features::{
    default_k_grid, gated_predict, run_pca_grid, train_gated, FeatureGates, GateData, GateOptions,
};
use crate::matrix::Matrix;
use crate::nn::{self, train_regressor, Mlp, TrainConfig};
use crate::selection::{train_selection, LambdaSchedule, SelectionData, SourceWeights};

/// Method label of the learned pipeline in every report.
pub const LEARNED: &str = "learned";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Cleaning,
    DatasetSelection,
    FeatureSelection,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Cleaning => "cleaning",
            ExperimentKind::DatasetSelection => "dataset_selection",
            ExperimentKind::FeatureSelection => "feature_selection",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv { path: PathBuf, target: String },
    Synth(SynthSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Dirty,
    GridAllPairs,
    UnionDefault,
    NoSelection,
    PcaGrid,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Dirty => "dirty",
            Baseline::GridAllPairs => "grid_all_pairs",
            Baseline::UnionDefault => "union_default",
            Baseline::NoSelection => "no_selection",
            Baseline::PcaGrid => "pca_grid",
        }
    }

    pub fn applies_to(self, kind: ExperimentKind) -> bool {
        matches!(
            (self, kind),
            (
                Baseline::Dirty | Baseline::GridAllPairs,
                ExperimentKind::Cleaning
            ) | (Baseline::UnionDefault, ExperimentKind::DatasetSelection)
                | (
                    Baseline::NoSelection | Baseline::PcaGrid,
                    ExperimentKind::FeatureSelection
                )
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningSettings {
    pub detectors: Vec<DetectorKind>,
    pub repairs: Vec<RepairKind>,
    pub lambda_batch: LambdaBatchSource,
    /// Adds one free logit per detector/repair pair.
    pub free_pairs: bool,
}

impl Default for CleaningSettings {
    fn default() -> Self {
        CleaningSettings {
            detectors: DetectorKind::defaults(),
            repairs: RepairKind::defaults(),
            lambda_batch: LambdaBatchSource::default(),
            free_pairs: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSettings {
    /// Training rows are split into this many equal sources.
    pub n_sources: usize,
    /// Sources that receive the configured errors; all but source 0 when absent.
    pub corrupted_sources: Option<Vec<usize>>,
    pub schedule: LambdaSchedule,
    pub record_every: usize,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        SelectionSettings {
            n_sources: 2,
            corrupted_sources: None,
            schedule: LambdaSchedule::default(),
            record_every: 1,
        }
    }
}

impl SelectionSettings {
    pub fn corrupted(&self) -> Vec<usize> {
        self.corrupted_sources
            .clone()
            .unwrap_or_else(|| (1..self.n_sources).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    pub gates: GateOptions,
    pub k_grid_size: usize,
    /// Explicit component counts; overrides `k_grid_size`.
    pub k_values: Option<Vec<usize>>,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        FeatureSettings {
            gates: GateOptions::default(),
            k_grid_size: 15,
            k_values: None,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_split() -> [f64; 3] {
    [0.7, 0.1, 0.2]
}

fn default_budget() -> f64 {
    120.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub data: DataSource,
    #[serde(default)]
    pub error_specs: Vec<ErrorSpec>,
    #[serde(default)]
    pub train_config: TrainConfig,
    #[serde(default)]
    pub baselines: Vec<Baseline>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Train/validation/test fractions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Wall-clock budget per grid baseline.
    #[serde(default = "default_budget")]
    pub budget_seconds: f64,
    #[serde(default)]
    pub cleaning: CleaningSettings,
    #[serde(default)]
    pub selection: SelectionSettings,
    #[serde(default)]
    pub features: FeatureSettings,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind, data: DataSource, seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            experiment,
            data,
            error_specs: Vec::new(),
            train_config: TrainConfig::default(),
            baselines: Vec::new(),
            seeds,
            output_dir: default_output_dir(),
            split: default_split(),
            budget_seconds: default_budget(),
            cleaning: CleaningSettings::default(),
            selection: SelectionSettings::default(),
            features: FeatureSettings::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidArgument(m));
        if self.seeds.is_empty() {
            return invalid("at least one seed is required".into());
        }
        let mut seen = self.baselines.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.baselines.len() {
            return invalid("baselines must not repeat".into());
        }
        if let Some(b) = self
            .baselines
            .iter()
            .find(|b| !b.applies_to(self.experiment))
        {
            return invalid(format!(
                "baseline {} does not apply to {}",
                b.name(),
                self.experiment.name()
            ));
        }
        self.train_config.validate()?;
        for spec in &self.error_specs {
            spec.validate()?;
        }
        if !(self.budget_seconds >= 0.0) {
            return invalid("budget_seconds must be >= 0".into());
        }
        if let DataSource::Synth(s) = &self.data {
            if s.n_informative == 0 || s.n_rows == 0 {
                return invalid(
                    "synthetic data needs rows and at least one informative feature".into(),
                );
            }
        }
        match self.experiment {
            ExperimentKind::Cleaning => {
                if self.cleaning.detectors.is_empty() || self.cleaning.repairs.is_empty() {
                    return invalid("cleaning needs at least one detector and one repair".into());
                }
                for d in &self.cleaning.detectors {
                    d.validate()?;
                }
                for r in &self.cleaning.repairs {
                    r.validate()?;
                }
            }
            ExperimentKind::DatasetSelection => {
                let s = &self.selection;
                if s.n_sources < 2 {
                    return invalid("dataset selection needs at least two sources".into());
                }
                if s.corrupted().iter().any(|&k| k >= s.n_sources) {
                    return invalid("corrupted source index out of range".into());
                }
            }
            ExperimentKind::FeatureSelection => {
                if self
                    .features
                    .k_values
                    .as_ref()
                    .is_some_and(|k| k.is_empty() || k.contains(&0))
                {
                    return invalid("k_values must be non-empty and positive".into());
                }
                if self.features.k_values.is_none() && self.features.k_grid_size == 0 {
                    return invalid("k_grid_size must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// The test split, readable only through [`SealedTest::evaluate`], which
/// counts every access.
pub struct SealedTest {
    x: Matrix,
    y: Matrix,
    evaluations: Cell<usize>,
}

impl SealedTest {
    pub fn new(table: &Table) -> Self {
        SealedTest {
            x: table.features(),
            y: table.targets(),
            evaluations: Cell::new(0),
        }
    }

    /// RMSE of `predict` on the test features.
    pub fn evaluate(&self, predict: impl FnOnce(&Matrix) -> Result<Matrix>) -> Result<f64> {
        self.evaluations.set(self.evaluations.get() + 1);
        nn::rmse(&predict(&self.x)?, &self.y)
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations.get()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub seed: u64,
    pub method: String,
    pub status: CellStatus,
    pub val_rmse: Option<f64>,
    pub test_rmse: Option<f64>,
    pub seconds: f64,
    pub pipelines_trained: usize,
    pub test_evaluations: usize,
    pub bundle_hash: Option<String>,
    pub error: Option<String>,
}

/// Per-epoch or per-step weight values of one learned run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// One trained pipeline of a grid baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub seed: u64,
    pub method: String,
    pub label: String,
    pub val_rmse: f64,
    /// Absent for cells that were not selected and so never saw the test split.
    pub test_rmse: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub seed: u64,
    pub bundle_hash: Option<String>,
    pub corrupted_cells: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedInfo>,
    pub results: Vec<MethodResult>,
    pub trajectories: Vec<Trajectory>,
    pub grid: Vec<GridRow>,
    pub notes: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Success,
    Partial,
    AllFailed,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Success => 0,
            RunStatus::AllFailed => 2,
            RunStatus::Partial => 3,
        }
    }
}

impl RunReport {
    pub fn methods(&self) -> Vec<String> {
        let mut m = vec![LEARNED.to_string()];
        m.extend(self.config.baselines.iter().map(|b| b.name().to_string()));
        m
    }

    pub fn result(&self, seed: u64, method: &str) -> Option<&MethodResult> {
        self.results
            .iter()
            .find(|r| r.seed == seed && r.method == method)
    }

    pub fn grid_rows(&self, seed: u64, method: &str) -> Vec<&GridRow> {
        self.grid
            .iter()
            .filter(|g| g.seed == seed && g.method == method)
            .collect()
    }

    pub fn status(&self) -> RunStatus {
        let failed = self
            .results
            .iter()
            .filter(|r| r.status == CellStatus::Failed)
            .count();
        match failed {
            0 => RunStatus::Success,
            f if f == self.results.len() => RunStatus::AllFailed,
            _ => RunStatus::Partial,
        }
    }
}

/// Builds the split, corrupts the training rows and standardizes. Validation
/// and test rows stay clean. Returns the bundle and the corrupted-cell count.
pub fn prepare_bundle(
    config: &ExperimentConfig,
    loaded: Option<&Table>,
    seed: u64,
) -> Result<(DatasetBundle, usize)> {
    let synth;
    let table = match (&config.data, loaded) {
        (DataSource::Synth(s), _) => {
            synth = synth_make(s.n_rows, s.n_informative, s.n_noise, s.noise_std, seed)?.table;
            &synth
        }
        (DataSource::Csv { .. }, Some(t)) => t,
        (DataSource::Csv { path, target }, None) => {
            synth = load_table(path, target)?;
            &synth
        }
    };
    let [ft, fv, fs] = config.split;
    let mut bundle = split_bundle(table, (ft, fv, fs), seed)?;
    let n_train = bundle.train.n_rows();
    let mut eligible: Vec<usize> = (0..n_train).collect();
    if config.experiment == ExperimentKind::DatasetSelection {
        let k = config.selection.n_sources;
        if n_train < k {
            return Err(Error::InvalidArgument(format!(
                "{n_train} training rows for {k} sources"
            )));
        }
        bundle.source_ids = (0..n_train).map(|i| i * k / n_train).collect();
        let corrupted = config.selection.corrupted();
        eligible.retain(|&i| corrupted.contains(&bundle.source_ids[i]));
    }
    let mut corrupted_cells = 0;
    for (i, spec) in config.error_specs.iter().enumerate() {
        let mut spec = spec.clone();
        spec.seed ^= (seed << 32) ^ i as u64;
        let (train, mask) = inject_errors_in_rows(&bundle.train, &spec, &eligible)?;
        corrupted_cells += mask.count();
        bundle.train = train;
    }
    Ok((standardize_fit_apply(&bundle)?, corrupted_cells))
}

struct SeedContext<'a> {
    config: &'a ExperimentConfig,
    train_config: TrainConfig,
    bundle: DatasetBundle,
    seed: u64,
}

#[derive(Default)]
struct MethodOutput {
    val_rmse: f64,
    test_rmse: f64,
    pipelines: usize,
    trajectory: Option<Trajectory>,
    grid: Vec<GridRow>,
}

fn val_data(bundle: &DatasetBundle) -> (Matrix, Matrix) {
    (bundle.val.features(), bundle.val.targets())
}

/// Trains one model per repaired variant; rows are `(label, val_rmse, test_rmse, seconds)`.
pub fn run_grid_baseline(
    variants: &[RepairedVariant],
    labels: &[String],
    targets: &Matrix,
    val: (&Matrix, &Matrix),
    test: &SealedTest,
    config: &TrainConfig,
    budget_seconds: Option<f64>,
) -> Result<Vec<(String, f64, f64, f64)>> {
    if variants.is_empty() {
        return Err(Error::InvalidArgument(
            "grid needs at least one variant".into(),
        ));
    }
    let start = Instant::now();
    let mut rows = Vec::new();
    for (variant, label) in variants.iter().zip(labels) {
        if budget_seconds.is_some_and(|b| start.elapsed().as_secs_f64() >= b) {
            log::warn!(
                "grid budget exhausted after {} of {} cells",
                rows.len(),
                variants.len()
            );
            break;
        }
        let cell_start = Instant::now();
        let x = variant.features();
        let mut model = Mlp::for_inputs(x.cols(), config)?;
        train_regressor(&mut model, &x, targets, None, config)?;
        let val_rmse = nn::rmse(&model.predict(val.0)?, val.1)?;
        let test_rmse = test.evaluate(|tx| model.predict(tx))?;
        rows.push((
            label.clone(),
            val_rmse,
            test_rmse,
            cell_start.elapsed().as_secs_f64(),
        ));
    }
    if rows.is_empty() {
        return Err(Error::Timeout {
            budget_seconds: budget_seconds.unwrap_or(0.0),
        });
    }
    Ok(rows)
}

fn learned_cleaning(ctx: &SeedContext<'_>, test: &SealedTest) -> Result<MethodOutput> {
    let s = &ctx.config.cleaning;
    let train = &ctx.bundle.train;
    let variants = build_variants(train, &s.detectors, &s.repairs)?;
    let val_variants = match s.lambda_batch {
        LambdaBatchSource::Validation => {
            Some(build_variants(&ctx.bundle.val, &s.detectors, &s.repairs)?)
        }
        LambdaBatchSource::Train => None,
    };
    let mut mixture = CleaningMixture::new(s.detectors.clone(), s.repairs.clone());
    if s.free_pairs {
        mixture = mixture.with_free_pairs();
    }
    let (vx, vy) = val_data(&ctx.bundle);
    let targets = train.targets();
    let data = CleaningData {
        train_variants: &variants,
        train_targets: &targets,
        val_features: &vx,
        val_targets: &vy,
        val_variants: val_variants.as_deref(),
        lambda_source: s.lambda_batch,
    };
    let mut model = Mlp::for_inputs(train.n_features(), &ctx.train_config)?;
    let hist = train_cleaning(&data, &mut mixture, &mut model, &ctx.train_config)?;
    let mut columns = vec!["epoch".to_string(), "val_rmse".to_string()];
    columns.extend((0..mixture.n_pairs()).map(|p| format!("sigma__{}", mixture.pair_name(p))));
    let rows = hist
        .epochs
        .iter()
        .map(|e| {
            let mut r = vec![e.epoch as f64, e.val_rmse];
            r.extend(&e.sigma);
            r
        })
        .collect();
    Ok(MethodOutput {
        val_rmse: hist.epochs.last().map_or(f64::NAN, |e| e.val_rmse),
        test_rmse: test.evaluate(|tx| model.predict(tx))?,
        pipelines: 1,
        trajectory: Some(Trajectory {
            seed: ctx.seed,
            columns,
            rows,
        }),
        grid: Vec::new(),
    })
}

fn plain_training(ctx: &SeedContext<'_>, train: &Table, test: &SealedTest) -> Result<MethodOutput> {
    let (x, y) = (train.features(), train.targets());
    let (vx, vy) = val_data(&ctx.bundle);
    let mut model = Mlp::for_inputs(x.cols(), &ctx.train_config)?;
    let hist = train_regressor(&mut model, &x, &y, Some((&vx, &vy)), &ctx.train_config)?;
    Ok(MethodOutput {
        val_rmse: hist.val_rmse.last().copied().unwrap_or(f64::NAN),
        test_rmse: test.evaluate(|tx| model.predict(tx))?,
        pipelines: 1,
        ..MethodOutput::default()
    })
}

fn grid_all_pairs(ctx: &SeedContext<'_>, test: &SealedTest) -> Result<MethodOutput> {
    let s = &ctx.config.cleaning;
    let variants = build_variants(&ctx.bundle.train, &s.detectors, &s.repairs)?;
    let mixture = CleaningMixture::new(s.detectors.clone(), s.repairs.clone());
    let labels: Vec<String> = (0..variants.len()).map(|p| mixture.pair_name(p)).collect();
    let (vx, vy) = val_data(&ctx.bundle);
    let cells = run_grid_baseline(
        &variants,
        &labels,
        &ctx.bundle.train.targets(),
        (&vx, &vy),
        test,
        &ctx.train_config,
        Some(ctx.config.budget_seconds),
    )?;
    Ok(grid_output(ctx, Baseline::GridAllPairs, cells))
}

/// Reports the cell with the best validation RMSE (first wins ties).
fn grid_output(
    ctx: &SeedContext<'_>,
    baseline: Baseline,
    cells: Vec<(String, f64, f64, f64)>,
) -> MethodOutput {
    let best = cells
        .iter()
        .enumerate()
        .fold(0, |b, (i, c)| if c.1 < cells[b].1 { i } else { b });
    MethodOutput {
        val_rmse: cells[best].1,
        test_rmse: cells[best].2,
        pipelines: cells.len(),
        trajectory: None,
        grid: cells
            .into_iter()
            .map(|(label, val_rmse, test_rmse, seconds)| GridRow {
                seed: ctx.seed,
                method: baseline.name().to_string(),
                label,
                val_rmse,
                test_rmse: Some(test_rmse),
                seconds,
            })
            .collect(),
    }
}

fn selection_run(ctx: &SeedContext<'_>, test: &SealedTest, learn: bool) -> Result<MethodOutput> {
    let s = &ctx.config.selection;
    let b = &ctx.bundle;
    let (x, y) = (b.train.features(), b.train.targets());
    if !x.all_finite() {
        return Err(Error::NonFinite(
            "dataset selection needs complete training features".into(),
        ));
    }
    let (vx, vy) = val_data(b);
    let data = SelectionData {
        train_x: &x,
        train_y: &y,
        source_ids: &b.source_ids,
        val_x: &vx,
        val_y: &vy,
    };
    let mut config = ctx.train_config.clone();
    if !learn {
        config.lambda_learning_rate = 0.0;
    }
    let mut weights = SourceWeights::new(s.n_sources)?;
    let mut model = Mlp::for_inputs(x.cols(), &config)?;
    let hist = train_selection(
        &data,
        &mut weights,
        &mut model,
        &config,
        s.schedule,
        s.record_every,
    )?;
    let trajectory = learn.then(|| {
        let mut columns = vec!["step".to_string(), "val_rmse".to_string()];
        columns.extend((0..s.n_sources).map(|k| format!("pi__source{k}")));
        Trajectory {
            seed: ctx.seed,
            columns,
            rows: hist
                .steps
                .iter()
                .map(|st| {
                    let mut r = vec![st.step as f64, st.val_rmse];
                    r.extend(&st.pi);
                    r
                })
                .collect(),
        }
    });
    Ok(MethodOutput {
        val_rmse: hist.steps.last().map_or(f64::NAN, |st| st.val_rmse),
        test_rmse: test.evaluate(|tx| model.predict(tx))?,
        pipelines: 1,
        trajectory,
        grid: Vec::new(),
    })
}

fn learned_features(ctx: &SeedContext<'_>, test: &SealedTest) -> Result<MethodOutput> {
    let b = &ctx.bundle;
    let (x, y) = (b.train.features(), b.train.targets());
    let (vx, vy) = val_data(b);
    let mut gates = FeatureGates::new(x.cols())?;
    let mut model = Mlp::for_inputs(x.cols(), &ctx.train_config)?;
    let data = GateData {
        train_x: &x,
        train_y: &y,
        val_x: &vx,
        val_y: &vy,
    };
    let hist = train_gated(
        &data,
        &mut gates,
        &mut model,
        &ctx.train_config,
        &ctx.config.features.gates,
    )?;
    let mut columns = vec!["epoch".to_string(), "val_rmse".to_string()];
    columns.extend(b.train.feature_names().iter().map(|n| format!("gate__{n}")));
    let rows = hist
        .epochs
        .iter()
        .map(|e| {
            let mut r = vec![e.epoch as f64, e.val_rmse];
            r.extend(&e.gates);
            r
        })
        .collect();
    Ok(MethodOutput {
        val_rmse: hist.epochs.last().map_or(f64::NAN, |e| e.val_rmse),
        test_rmse: test.evaluate(|tx| gated_predict(&model, &gates, tx))?,
        pipelines: 1,
        trajectory: Some(Trajectory {
            seed: ctx.seed,
            columns,
            rows,
        }),
        grid: Vec::new(),
    })
}

fn pca_grid(ctx: &SeedContext<'_>, test: &SealedTest) -> Result<MethodOutput> {
    let f = ctx.bundle.train.n_features();
    let ks = match &ctx.config.features.k_values {
        Some(k) => k.clone(),
        None => default_k_grid(f, ctx.config.features.k_grid_size),
    };
    let report = run_pca_grid(
        &ctx.bundle,
        &ks,
        &ctx.train_config,
        Some(ctx.config.budget_seconds),
    )?;
    let Some(best) = report.best() else {
        return Err(Error::Timeout {
            budget_seconds: ctx.config.budget_seconds,
        });
    };
    let test_rmse = test.evaluate(|tx| best.model.predict(&best.pca.transform(tx)?))?;
    let grid = report
        .cells
        .iter()
        .map(|c| GridRow {
            seed: ctx.seed,
            method: Baseline::PcaGrid.name().to_string(),
            label: format!("k={}", c.k),
            val_rmse: c.val_rmse,
            test_rmse: (c.k == best.k).then_some(test_rmse),
            seconds: c.seconds,
        })
        .collect();
    Ok(MethodOutput {
        val_rmse: best.val_rmse,
        test_rmse,
        pipelines: report.cells.len(),
        trajectory: None,
        grid,
    })
}

fn run_method(
    ctx: &SeedContext<'_>,
    method: Option<Baseline>,
    test: &SealedTest,
) -> Result<MethodOutput> {
    use ExperimentKind as E;
    match (ctx.config.experiment, method) {
        (E::Cleaning, None) => learned_cleaning(ctx, test),
        (E::Cleaning, Some(Baseline::Dirty)) => {
            plain_training(ctx, &fill_missing_with_mean(&ctx.bundle.train), test)
        }
        (E::Cleaning, Some(Baseline::GridAllPairs)) => grid_all_pairs(ctx, test),
        (E::DatasetSelection, None) => selection_run(ctx, test, true),
        (E::DatasetSelection, Some(Baseline::UnionDefault)) => selection_run(ctx, test, false),
        (E::FeatureSelection, None) => learned_features(ctx, test),
        (E::FeatureSelection, Some(Baseline::NoSelection)) => {
            plain_training(ctx, &ctx.bundle.train, test)
        }
        (E::FeatureSelection, Some(Baseline::PcaGrid)) => pca_grid(ctx, test),
        (kind, Some(b)) => Err(Error::InvalidArgument(format!(
            "baseline {} does not apply to {}",
            b.name(),
            kind.name()
        ))),
    }
}

fn failed(
    seed: u64,
    method: &str,
    bundle_hash: Option<String>,
    seconds: f64,
    err: &Error,
) -> MethodResult {
    MethodResult {
        seed,
        method: method.to_string(),
        status: CellStatus::Failed,
        val_rmse: None,
        test_rmse: None,
        seconds,
        pipelines_trained: 0,
        test_evaluations: 0,
        bundle_hash,
        error: Some(err.to_string()),
    }
}

/// Runs every (seed, method) cell in order. Cell failures are recorded in the
/// report; only an invalid config is an error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let loaded = match &config.data {
        DataSource::Csv { path, target } => Some(load_table(path, target)?),
        DataSource::Synth(_) => None,
    };
    let mut report = RunReport {
        experiment: config.experiment,
        config_hash: config.hash(),
        config: config.clone(),
        seeds: Vec::new(),
        results: Vec::new(),
        trajectories: Vec::new(),
        grid: Vec::new(),
        notes: BTreeMap::from([
            (
                "error_rate_scope".to_string(),
                "all eligible feature cells of the corrupted training rows".to_string(),
            ),
            (
                "gates_applied".to_string(),
                "after standardization".to_string(),
            ),
            ("validation_split".to_string(), "clean".to_string()),
            (
                "selection_theta_step".to_string(),
                "weighted sgd at train_config.learning_rate".to_string(),
            ),
        ]),
    };
    let mut methods: Vec<Option<Baseline>> = vec![None];
    methods.extend(config.baselines.iter().copied().map(Some));

    for &seed in &config.seeds {
        log::info!("seed {seed}: preparing data");
        let prepared = prepare_bundle(config, loaded.as_ref(), seed);
        let (bundle, corrupted_cells) = match prepared {
            Ok(p) => p,
            Err(e) => {
                log::error!("seed {seed}: {e}");
                for m in &methods {
                    report.results.push(failed(
                        seed,
                        m.map_or(LEARNED, Baseline::name),
                        None,
                        0.0,
                        &e,
                    ));
                }
                report.seeds.push(SeedInfo {
                    seed,
                    bundle_hash: None,
                    corrupted_cells: 0,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        let seed_hash = bundle.content_hash();
        report.seeds.push(SeedInfo {
            seed,
            bundle_hash: Some(seed_hash.clone()),
            corrupted_cells,
            error: None,
        });
        let ctx = SeedContext {
            config,
            train_config: config.train_config.with_seed(seed),
            bundle,
            seed,
        };
        for m in &methods {
            let name = m.map_or(LEARNED, Baseline::name);
            let hash = ctx.bundle.content_hash();
            assert_eq!(hash, seed_hash, "bundle changed between methods");
            let test = SealedTest::new(&ctx.bundle.test);
            let start = Instant::now();
            let outcome = run_method(&ctx, *m, &test);
            let seconds = start.elapsed().as_secs_f64();
            match outcome {
                Ok(out) => {
                    log::info!(
                        "seed {seed} {name}: test rmse {:.4} ({seconds:.2}s)",
                        out.test_rmse
                    );
                    report.results.push(MethodResult {
                        seed,
                        method: name.to_string(),
                        status: CellStatus::Ok,
                        val_rmse: Some(out.val_rmse),
                        test_rmse: Some(out.test_rmse),
                        seconds,
                        pipelines_trained: out.pipelines,
                        test_evaluations: test.evaluations(),
                        bundle_hash: Some(hash),
                        error: None,
                    });
                    report.trajectories.extend(out.trajectory);
                    report.grid.extend(out.grid);
                }
                Err(e) => {
                    log::error!("seed {seed} {name}: {e}");
                    report
                        .results
                        .push(failed(seed, name, Some(hash), seconds, &e));
                }
            }
        }
    }
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite())
        .map(|x| x.to_string())
        .unwrap_or_default()
}

fn write_csv(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Writes `summary.csv`, `timings.csv`, `weights_<experiment>.csv`,
/// `grid_<experiment>.csv` (when a grid ran), `config.json` and `report.json`.
/// Only `config.json` carries a timestamp; wall-clock seconds live in
/// `timings.csv`, the grid file and `report.json`.
pub fn emit_report(report: &RunReport, output_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let exp = report.experiment.name();
    let mut written = Vec::new();

    let summary = output_dir.join("summary.csv");
    write_csv(
        &summary,
        &strings(&[
            "seed",
            "method",
            "status",
            "val_rmse",
            "test_rmse",
            "pipelines_trained",
            "test_evaluations",
        ]),
        report.results.iter().map(|r| {
            vec![
                r.seed.to_string(),
                r.method.clone(),
                match r.status {
                    CellStatus::Ok => "ok".into(),
                    CellStatus::Failed => "failed".into(),
                },
                fmt_opt(r.val_rmse),
                fmt_opt(r.test_rmse),
                r.pipelines_trained.to_string(),
                r.test_evaluations.to_string(),
            ]
        }),
    )?;
    written.push(summary);

    let timings = output_dir.join("timings.csv");
    write_csv(
        &timings,
        &strings(&["seed", "method", "seconds"]),
        report
            .results
            .iter()
            .map(|r| vec![r.seed.to_string(), r.method.clone(), r.seconds.to_string()]),
    )?;
    written.push(timings);

    let weights = output_dir.join(format!("weights_{exp}.csv"));
    let mut header = vec!["seed".to_string()];
    if let Some(t) = report.trajectories.first() {
        header.extend(t.columns.iter().cloned());
    }
    write_csv(
        &weights,
        &header,
        report.trajectories.iter().flat_map(|t| {
            t.rows.iter().map(move |row| {
                let mut r = vec![t.seed.to_string()];
                r.extend(row.iter().map(|v| fmt_opt(Some(*v))));
                r
            })
        }),
    )?;
    written.push(weights);

    if !report.grid.is_empty() {
        let grid = output_dir.join(format!("grid_{exp}.csv"));
        write_csv(
            &grid,
            &strings(&[
                "seed",
                "method",
                "label",
                "val_rmse",
                "test_rmse",
                "seconds",
            ]),
            report.grid.iter().map(|g| {
                vec![
                    g.seed.to_string(),
                    g.method.clone(),
                    g.label.clone(),
                    fmt_opt(Some(g.val_rmse)),
                    fmt_opt(g.test_rmse),
                    g.seconds.to_string(),
                ]
            }),
        )?;
        written.push(grid);
    }

    let config = output_dir.join("config.json");
    let meta = serde_json::json!({
        "config": report.config,
        "seeds": report.config.seeds,
        "config_hash": report.config_hash,
        "budget_seconds": report.config.budget_seconds,
        "notes": report.notes,
        "run_at": humantime::format_rfc3339_seconds(SystemTime::now()).to_string(),
    });
    fs::write(&config, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&config, e))?;
    written.push(config);

    let full = output_dir.join("report.json");
    fs::write(&full, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&full, e))?;
    written.push(full);
    Ok(written)
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
