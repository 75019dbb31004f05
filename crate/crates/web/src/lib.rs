//! Browser bindings. Each export takes plain numbers and returns a JSON string.

use pipegrad::cleaning::{CleaningMixture, DetectorKind, RepairKind};
use pipegrad::data::{ErrorKind, ErrorSpec, SynthSpec};
use pipegrad::features::{train_gated, FeatureGates, GateData, GateOptions};
use pipegrad::harness::{prepare_bundle, DataSource, ExperimentConfig, ExperimentKind};
use pipegrad::nn::{Mlp, TrainConfig};
use pipegrad::selection::{train_selection, LambdaSchedule, SelectionData, SourceWeights};
use pipegrad::Result;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn to_js(result: Result<Value>) -> std::result::Result<String, JsValue> {
    result
        .map(|v| v.to_string())
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Pair distribution for the default 3 detectors x 2 repairs.
pub fn pair_softmax_json(lambda_d: &[f64], lambda_r: &[f64]) -> Result<Value> {
    let detectors = DetectorKind::defaults();
    let repairs = RepairKind::defaults();
    if lambda_d.len() != detectors.len() || lambda_r.len() != repairs.len() {
        return Err(pipegrad::Error::InvalidArgument(format!(
            "expected {} detector and {} repair logits",
            detectors.len(),
            repairs.len()
        )));
    }
    let mut mixture = CleaningMixture::new(detectors, repairs);
    mixture.lambda_d = lambda_d.to_vec();
    mixture.lambda_r = lambda_r.to_vec();
    let sigma = mixture.pair_softmax();
    Ok(json!({
        "detectors": mixture.detectors.iter().map(|d| d.name()).collect::<Vec<_>>(),
        "repairs": mixture.repairs.iter().map(|r| r.name()).collect::<Vec<_>>(),
        "sigma": sigma,
        "chosen": mixture.pair_name(mixture.chosen_pair()),
    }))
}

fn demo_bundle(
    kind: ExperimentKind,
    spec: SynthSpec,
    errors: Vec<ErrorSpec>,
    seed: u64,
) -> Result<pipegrad::data::DatasetBundle> {
    let mut config = ExperimentConfig::new(kind, DataSource::Synth(spec), vec![seed]);
    config.error_specs = errors;
    config.validate()?;
    Ok(prepare_bundle(&config, None, seed)?.0)
}

/// Trains sigmoid gates on 5 informative and `n_noise` noise features.
pub fn gate_demo_json(seed: u64, n_noise: usize, epochs: usize) -> Result<Value> {
    let spec = SynthSpec {
        n_rows: 400,
        n_informative: 5,
        n_noise,
        noise_std: 0.1,
    };
    let bundle = demo_bundle(ExperimentKind::FeatureSelection, spec, Vec::new(), seed)?;
    let config = TrainConfig {
        learning_rate: 3e-3,
        lambda_learning_rate: 0.05,
        epochs,
        hidden_layers: vec![16, 16],
        seed,
        ..TrainConfig::default()
    };
    let (x, y) = (bundle.train.features(), bundle.train.targets());
    let (vx, vy) = (bundle.val.features(), bundle.val.targets());
    let mut gates = FeatureGates::new(x.cols())?;
    let mut model = Mlp::for_inputs(x.cols(), &config)?;
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
        &config,
        &GateOptions::default(),
    )?;
    Ok(json!({
        "features": bundle.train.feature_names(),
        "epochs": hist.epochs,
        "selected": gates.selected(),
    }))
}

/// Learns weights over two sources, the second with `swap_rate` swapped labels.
pub fn selection_demo_json(seed: u64, swap_rate: f64, epochs: usize) -> Result<Value> {
    let spec = SynthSpec {
        n_rows: 600,
        ..SynthSpec::default()
    };
    let errors = vec![ErrorSpec::new(ErrorKind::LabelSwap, swap_rate, 0)];
    let bundle = demo_bundle(ExperimentKind::DatasetSelection, spec, errors, seed)?;
    let config = TrainConfig {
        learning_rate: 0.05,
        lambda_learning_rate: 0.005,
        epochs,
        hidden_layers: vec![16, 16],
        seed,
        ..TrainConfig::default()
    };
    let (x, y) = (bundle.train.features(), bundle.train.targets());
    let (vx, vy) = (bundle.val.features(), bundle.val.targets());
    let data = SelectionData {
        train_x: &x,
        train_y: &y,
        source_ids: &bundle.source_ids,
        val_x: &vx,
        val_y: &vy,
    };
    let mut weights = SourceWeights::new(2)?;
    let mut model = Mlp::for_inputs(x.cols(), &config)?;
    let hist = train_selection(
        &data,
        &mut weights,
        &mut model,
        &config,
        LambdaSchedule::PerBatch,
        5,
    )?;
    Ok(json!({ "steps": hist.steps }))
}

#[wasm_bindgen]
pub fn pair_softmax(lambda_d: &[f64], lambda_r: &[f64]) -> std::result::Result<String, JsValue> {
    to_js(pair_softmax_json(lambda_d, lambda_r))
}

#[wasm_bindgen]
pub fn gate_demo(seed: u32, n_noise: u32, epochs: u32) -> std::result::Result<String, JsValue> {
    to_js(gate_demo_json(
        u64::from(seed),
        n_noise as usize,
        epochs as usize,
    ))
}

#[wasm_bindgen]
pub fn selection_demo(
    seed: u32,
    swap_rate: f64,
    epochs: u32,
) -> std::result::Result<String, JsValue> {
    to_js(selection_demo_json(
        u64::from(seed),
        swap_rate,
        epochs as usize,
    ))
}
