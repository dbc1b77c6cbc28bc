//! High-level pipeline runs: generate a dataset directory, train a model
//! against it, evaluate a held-out split, authenticate single measurements.
//!
//! The command-line tool is a thin wrapper over these functions, so an
//! in-process run and a CLI run with the same seeds produce byte-identical
//! artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::digest::digest_file;
use crate::error::{Error, Result};
use crate::eval::{self, Evaluation};
use crate::imaging::{downscale, to_image, FingerprintImage};
use crate::nn::model::{build_model, Model};
use crate::sim::{generate_dataset, Condition, Dataset, SimParams};
use crate::train::{presets, split_dataset, train, TrainConfig, TrainHistory};

/// Dataset generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub devices: usize,
    pub conditions: Vec<Condition>,
    pub per_condition: usize,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub params: SimParams,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            devices: 3,
            conditions: Condition::all_default(),
            per_condition: 10,
            rows: 1024,
            cols: 1024,
            seed: 7,
            params: SimParams::default(),
        }
    }
}

/// Generate and write a dataset directory; returns the dataset and the
/// manifest digest.
pub fn run_gen(spec: &GenSpec, out_dir: &Path) -> Result<(Dataset, String)> {
    let dataset = generate_dataset(
        spec.devices,
        &spec.conditions,
        spec.per_condition,
        spec.rows,
        spec.cols,
        spec.seed,
        &spec.params,
    )?;
    dataset.save(out_dir)?;
    let digest = digest_file(&out_dir.join("manifest.json"))?;
    Ok((dataset, digest))
}

/// Decode every measurement of a dataset to a network-sized grayscale image.
pub fn prepare_images(dataset: &Dataset, input_size: usize) -> Result<Vec<FingerprintImage>> {
    dataset
        .measurements
        .iter()
        .map(|m| {
            let img = to_image(m);
            if img.rows == input_size && img.cols == input_size {
                Ok(img)
            } else {
                downscale(&img, input_size, input_size)
            }
        })
        .collect()
}

/// Training request: dataset directory in, model + history out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub arch: String,
    pub config: TrainConfig,
}

/// Everything a finished training run produced.
pub struct TrainOutcome {
    pub model_path: PathBuf,
    pub history_path: PathBuf,
    pub history: TrainHistory,
    pub model_digest: String,
    pub history_digest: String,
    pub final_test_accuracy: f64,
}

/// Split → (augment) → train → save model and history CSV.
pub fn run_train(
    dataset: &Dataset,
    spec: &TrainSpec,
    model_path: &Path,
    history_path: &Path,
) -> Result<TrainOutcome> {
    spec.config.validate()?;
    let arch = presets::by_name(&spec.arch, spec.config.input_size, dataset.manifest.n_devices)?;
    let images = prepare_images(dataset, spec.config.input_size)?;
    let (train_idx, test_idx) = split_dataset(dataset, spec.config.split_ratio, spec.config.seed)?;
    let train_images: Vec<FingerprintImage> = train_idx.iter().map(|&i| images[i].clone()).collect();
    let test_images: Vec<FingerprintImage> = test_idx.iter().map(|&i| images[i].clone()).collect();

    let mut model = build_model::<f32>(&arch, spec.config.seed)?;
    let history = train(&mut model, &train_images, &test_images, &spec.config)?;

    model.save(model_path)?;
    fs::write(history_path, history.to_csv())?;

    Ok(TrainOutcome {
        model_path: model_path.to_path_buf(),
        history_path: history_path.to_path_buf(),
        model_digest: digest_file(model_path)?,
        history_digest: digest_file(history_path)?,
        final_test_accuracy: history.final_test_accuracy().unwrap_or(0.0),
        history,
    })
}

/// Evaluation artifacts written by [`run_eval`].
pub struct EvalOutcome {
    pub evaluation: Evaluation,
    pub metrics_path: PathBuf,
    pub roc_path: PathBuf,
    pub confusion_path: PathBuf,
    pub metrics_digest: String,
}

/// Re-derive the held-out split and write metrics JSON + ROC CSV + confusion
/// CSV into `out_dir`.
pub fn run_eval(
    model: &Model<f32>,
    dataset: &Dataset,
    split_ratio: f64,
    split_seed: u64,
    out_dir: &Path,
) -> Result<EvalOutcome> {
    let input_size = model.arch.input_height;
    let images = prepare_images(dataset, input_size)?;
    let (_, test_idx) = split_dataset(dataset, split_ratio, split_seed)?;
    let test_images: Vec<FingerprintImage> = test_idx.iter().map(|&i| images[i].clone()).collect();

    let evaluation = eval::evaluate(model, &test_images, 64)?;

    fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.json");
    let roc_path = out_dir.join("roc.csv");
    let confusion_path = out_dir.join("confusion.csv");

    let metrics_json = serde_json::to_string_pretty(&evaluation.report)
        .map_err(|e| Error::format(format!("metrics serialization failed: {e}")))?;
    fs::write(&metrics_path, metrics_json)?;
    fs::write(&roc_path, eval::rocs_to_csv(&evaluation.rocs))?;
    fs::write(&confusion_path, evaluation.confusion.to_csv())?;

    Ok(EvalOutcome {
        metrics_digest: digest_file(&metrics_path)?,
        evaluation,
        metrics_path,
        roc_path,
        confusion_path,
    })
}
