//! Command-line front end: dataset generation, training, evaluation,
//! authentication, image export and shape inspection.
//!
//! Exit codes: 0 success/accept, 1 reject, 2 usage, 3 I/O, 4 training
//! contract, 5 split-seed mismatch. Machine-readable JSON goes to stdout,
//! human logs to stderr. `DRAMNET_THREADS` caps internal parallelism;
//! `--config` supplies defaults that explicit flags override.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use dramnet::error::Error;
use dramnet::eval::authenticate;
use dramnet::imaging::{export_pgm, import_pgm, to_image};
use dramnet::nn::model::Model;
use dramnet::nn::{infer_shapes, ShapeTable};
use dramnet::pipeline::{run_eval, run_gen, run_train, GenSpec, TrainSpec};
use dramnet::sim::{read_measurement_bin, Condition, ConditionKind, Dataset, Measurement, SimParams};
use dramnet::train::{presets, OptimizerKind, TrainConfig};

use manifest::RunManifest;

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

const EXIT_REJECT: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_CONTRACT: u8 = 4;
const EXIT_SPLIT_MISMATCH: u8 = 5;

#[derive(Parser)]
#[command(name = "dramnet", version, about = "DRAM power-up fingerprint simulation and CNN device authentication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic measurement dataset
    Gen(GenArgs),
    /// Train a model on a dataset directory
    Train(TrainArgs),
    /// Evaluate a trained model on the held-out split
    Eval(EvalArgs),
    /// Authenticate a single measurement against a trained model
    Auth(AuthArgs),
    /// Convert a measurement file to a PGM image
    ExportImage(ExportArgs),
    /// Print the per-layer shape table of an architecture
    Shapes(ShapesArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Number of simulated devices
    #[arg(long)]
    devices: Option<usize>,
    /// Comma-separated condition names, or "all"
    #[arg(long)]
    conditions: Option<String>,
    /// Measurements per device per condition
    #[arg(long)]
    per_condition: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    /// Master seed for the whole dataset
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// JSON config file (flags override its values)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory produced by `gen`
    #[arg(long)]
    dataset: PathBuf,
    /// Output model file
    #[arg(long)]
    out: PathBuf,
    /// History CSV path (default: model path with .csv extension)
    #[arg(long)]
    history: Option<PathBuf>,
    /// Architecture: dramnet, alexnet-s or vggnet-s
    #[arg(long)]
    arch: Option<String>,
    /// Optimizer: sgd or adam
    #[arg(long)]
    optimizer: Option<String>,
    /// Apply six-way crop augmentation to the training split
    #[arg(long)]
    augment: bool,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate (default: 0.01 for sgd, 0.001 for adam)
    #[arg(long)]
    lr: Option<f64>,
    /// L2 penalty coefficient λ
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    split_ratio: Option<f64>,
    #[arg(long)]
    crop_fraction: Option<f64>,
    /// Seed driving init, split, shuffling and dropout
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Split seed; defaults to the one recorded in the training manifest
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_ratio: Option<f64>,
    /// Output directory for metrics.json, roc.csv, confusion.csv
    #[arg(long)]
    out_dir: PathBuf,
    /// Proceed even if the split seed disagrees with the training manifest
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct AuthArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    measurement: PathBuf,
    /// Acceptance threshold τ on the maximum class probability
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
}

#[derive(Args)]
struct ExportArgs {
    /// Input measurement (.bin)
    input: PathBuf,
    /// Output image (.pgm)
    output: PathBuf,
}

#[derive(Args)]
struct ShapesArgs {
    #[arg(long)]
    arch: String,
    /// Square input size
    #[arg(long, default_value_t = 1024)]
    input: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Emit the table as JSON instead of text
    #[arg(long)]
    json: bool,
}

/// Optional values loadable from `--config`; explicit flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct FileConfig {
    sim: Option<SimParams>,
    gen: Option<GenFileConfig>,
    train: Option<TrainFileConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct GenFileConfig {
    devices: Option<usize>,
    conditions: Option<String>,
    per_condition: Option<usize>,
    rows: Option<usize>,
    cols: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct TrainFileConfig {
    arch: Option<String>,
    optimizer: Option<String>,
    lr0: Option<f64>,
    decay_rate: Option<f64>,
    decay_period: Option<usize>,
    momentum: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    weight_decay: Option<f64>,
    augment: Option<bool>,
    crop_fraction: Option<f64>,
    input_size: Option<usize>,
    split_ratio: Option<f64>,
    seed: Option<u64>,
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
            serde_json::from_slice(&bytes)
                .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }
    fn io(message: impl Into<String>) -> Self {
        CliError { code: EXIT_IO, message: message.into() }
    }
    fn split(message: impl Into<String>) -> Self {
        CliError { code: EXIT_SPLIT_MISMATCH, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Format(_) => EXIT_IO,
            Error::Contract(_) => EXIT_CONTRACT,
            _ => EXIT_USAGE,
        };
        CliError { code, message: e.to_string() }
    }
}

fn parse_conditions(spec: &str) -> Result<Vec<Condition>, CliError> {
    if spec == "all" {
        return Ok(Condition::all_default());
    }
    spec.split(',')
        .map(|name| {
            name.trim()
                .parse::<ConditionKind>()
                .map(Condition::new)
                .map_err(CliError::from)
        })
        .collect()
}

fn parse_optimizer(name: &str) -> Result<OptimizerKind, CliError> {
    match name {
        "sgd" | "sgd_momentum" => Ok(OptimizerKind::SgdMomentum),
        "adam" => Ok(OptimizerKind::Adam),
        other => Err(CliError::usage(format!("unknown optimizer {other:?} (expected sgd or adam)"))),
    }
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let file = load_config(&args.config)?;
    let gen_file = file.gen.unwrap_or_default();
    let defaults = GenSpec::default();
    let conditions_spec = args
        .conditions
        .or(gen_file.conditions)
        .unwrap_or_else(|| "all".to_string());
    let spec = GenSpec {
        devices: args.devices.or(gen_file.devices).unwrap_or(defaults.devices),
        conditions: parse_conditions(&conditions_spec)?,
        per_condition: args
            .per_condition
            .or(gen_file.per_condition)
            .unwrap_or(defaults.per_condition),
        rows: args.rows.or(gen_file.rows).unwrap_or(defaults.rows),
        cols: args.cols.or(gen_file.cols).unwrap_or(defaults.cols),
        seed: args.seed.or(gen_file.seed).unwrap_or(defaults.seed),
        params: file.sim.unwrap_or_default(),
    };

    eprintln!(
        "generating {} devices x {} conditions x {} measurements at {}x{} (seed {})",
        spec.devices,
        spec.conditions.len(),
        spec.per_condition,
        spec.rows,
        spec.cols,
        spec.seed
    );
    let (dataset, manifest_digest) = run_gen(&spec, &args.out)?;

    let mut run = RunManifest::new(
        "gen",
        serde_json::to_value(&spec).unwrap(),
        json!({ "master_seed": spec.seed }),
    );
    run.record_output(&args.out.join("manifest.json"))?;
    for record in &dataset.manifest.records {
        run.record_output(&args.out.join(&record.file))?;
    }
    run.write(&args.out.join("run_manifest.json"))?;

    println!(
        "{}",
        json!({
            "dataset": args.out,
            "measurements": dataset.len(),
            "manifest_digest": manifest_digest,
        })
    );
    Ok(())
}

fn resolve_train_config(args: &TrainArgs, file: &TrainFileConfig) -> Result<(String, TrainConfig), CliError> {
    let defaults = TrainConfig::default();
    let optimizer = match args.optimizer.as_deref().or(file.optimizer.as_deref()) {
        Some(name) => parse_optimizer(name)?,
        None => defaults.optimizer,
    };
    let config = TrainConfig {
        optimizer,
        lr0: args.lr.or(file.lr0),
        decay_rate: file.decay_rate.unwrap_or(defaults.decay_rate),
        decay_period: file.decay_period.unwrap_or(defaults.decay_period),
        momentum: file.momentum.unwrap_or(defaults.momentum),
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(defaults.batch_size),
        epochs: args.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        weight_decay: args.lambda.or(file.weight_decay).unwrap_or(defaults.weight_decay),
        augment: args.augment || file.augment.unwrap_or(false),
        crop_fraction: args.crop_fraction.or(file.crop_fraction).unwrap_or(defaults.crop_fraction),
        input_size: args.input_size.or(file.input_size).unwrap_or(defaults.input_size),
        split_ratio: args.split_ratio.or(file.split_ratio).unwrap_or(defaults.split_ratio),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        ..defaults
    };
    let arch = args
        .arch
        .clone()
        .or_else(|| file.arch.clone())
        .unwrap_or_else(|| "dramnet".to_string());
    Ok((arch, config))
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let file = load_config(&args.config)?;
    let (arch, config) = resolve_train_config(&args, &file.train.unwrap_or_default())?;
    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| args.out.with_extension("csv"));

    let dataset = Dataset::load(&args.dataset)?;
    eprintln!(
        "training {arch} on {} measurements ({} epochs, batch {}, {}, augment={})",
        dataset.len(),
        config.epochs,
        config.batch_size,
        config.optimizer.name(),
        config.augment
    );

    let spec = TrainSpec { arch: arch.clone(), config: config.clone() };
    let outcome = run_train(&dataset, &spec, &args.out, &history_path)?;

    let mut run = RunManifest::new(
        "train",
        serde_json::to_value(&spec).unwrap(),
        json!({ "seed": config.seed, "split_ratio": config.split_ratio }),
    );
    run.record_input(&args.dataset.join("manifest.json"))?;
    run.record_output(&args.out)?;
    run.record_output(&history_path)?;
    let manifest_path = manifest_path_for(&args.out);
    run.write(&manifest_path)?;

    println!(
        "{}",
        json!({
            "model": args.out,
            "history": history_path,
            "manifest": manifest_path,
            "model_digest": outcome.model_digest,
            "final_test_accuracy": outcome.final_test_accuracy,
            "steps": outcome.history.steps.len(),
        })
    );
    Ok(())
}

fn manifest_path_for(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

#[derive(Deserialize)]
struct RecordedTrainRun {
    seeds: serde_json::Value,
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    // Re-derive the held-out split: explicit flags win, then the training
    // manifest, then defaults.
    let train_manifest_path = manifest_path_for(&args.model);
    let recorded: Option<RecordedTrainRun> = std::fs::read(&train_manifest_path)
        .ok()
        .and_then(|bytes| serde_json::from_slice(&bytes).ok());
    let recorded_seed = recorded
        .as_ref()
        .and_then(|r| r.seeds.get("seed"))
        .and_then(|v| v.as_u64());
    let recorded_ratio = recorded
        .as_ref()
        .and_then(|r| r.seeds.get("split_ratio"))
        .and_then(|v| v.as_f64());

    if let (Some(flag), Some(rec)) = (args.seed, recorded_seed) {
        if flag != rec && !args.force {
            eprintln!(
                "warning: --seed {flag} does not match the training manifest's split seed {rec} \
                 ({}); the evaluated split would differ from the held-out set. \
                 Pass --force to evaluate anyway.",
                train_manifest_path.display()
            );
            return Err(CliError::split("split seed mismatch"));
        }
    }
    let seed = args.seed.or(recorded_seed).unwrap_or(TrainConfig::default().seed);
    let ratio = args
        .split_ratio
        .or(recorded_ratio)
        .unwrap_or(TrainConfig::default().split_ratio);

    let model: Model<f32> = Model::load(&args.model)?;
    let dataset = Dataset::load(&args.dataset)?;
    eprintln!(
        "evaluating {} on {} (split seed {seed}, ratio {ratio})",
        args.model.display(),
        args.dataset.display()
    );
    let outcome = run_eval(&model, &dataset, ratio, seed, &args.out_dir)?;

    let mut run = RunManifest::new(
        "eval",
        json!({ "model": args.model, "dataset": args.dataset }),
        json!({ "seed": seed, "split_ratio": ratio }),
    );
    run.record_input(&args.model)?;
    run.record_input(&args.dataset.join("manifest.json"))?;
    run.record_output(&outcome.metrics_path)?;
    run.record_output(&outcome.roc_path)?;
    run.record_output(&outcome.confusion_path)?;
    run.write(&args.out_dir.join("run_manifest.json"))?;

    println!(
        "{}",
        serde_json::to_string(&outcome.evaluation.report).expect("report serializes")
    );
    Ok(())
}

fn cmd_auth(args: AuthArgs) -> Result<bool, CliError> {
    let model: Model<f32> = Model::load(&args.model)?;
    let bits = read_measurement_bin(&args.measurement)?;
    let measurement = Measurement {
        device_id: 0, // unknown; classification decides
        condition: Condition::new(ConditionKind::Nominal),
        bits,
        measurement_seed: 0,
    };
    let decision = authenticate(&model, &measurement, args.threshold)?;
    println!(
        "{}",
        json!({
            "accepted": decision.accepted,
            "device_id": decision.device_id,
            "probabilities": decision.probabilities,
            "threshold": decision.threshold,
            "model_digest": dramnet::digest::digest_file(&args.model)?,
            "measurement_digest": dramnet::digest::digest_file(&args.measurement)?,
        })
    );
    Ok(decision.accepted)
}

fn cmd_export_image(args: ExportArgs) -> Result<(), CliError> {
    let bits = read_measurement_bin(&args.input)?;
    let measurement = Measurement {
        device_id: 0,
        condition: Condition::new(ConditionKind::Nominal),
        bits,
        measurement_seed: 0,
    };
    let image = to_image(&measurement);
    export_pgm(&image, &args.output)?;
    // verify the roundtrip before reporting success
    let back = import_pgm(&args.output)?;
    debug_assert_eq!(back.pixels, image.pixels);

    let mut run = RunManifest::new(
        "export-image",
        json!({ "input": args.input, "output": args.output }),
        json!({}),
    );
    run.record_input(&args.input)?;
    run.record_output(&args.output)?;
    run.write(&manifest_path_for(&args.output))?;

    println!(
        "{}",
        json!({ "output": args.output, "rows": image.rows, "cols": image.cols })
    );
    Ok(())
}

fn format_dims(d: (usize, usize, usize)) -> String {
    if d.0 == 1 && d.1 == 1 {
        format!("{}", d.2)
    } else {
        format!("{}x{}x{}", d.0, d.1, d.2)
    }
}

fn render_shape_table(table: &ShapeTable) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<5} {:<10} {:>16} {:>16} {:>14}\n",
        "row", "layer", "input", "output", "params"
    ));
    for row in &table.rows {
        let label = row
            .table_row
            .map(|r| r.to_string())
            .unwrap_or_else(|| "-".to_string());
        out.push_str(&format!(
            "{:<5} {:<10} {:>16} {:>16} {:>14}\n",
            label,
            row.kind,
            format_dims(row.input),
            format_dims(row.output),
            row.params
        ));
    }
    out.push_str(&format!("total parameters: {}\n", table.total_params));
    for note in &table.notes {
        out.push_str(&format!("note: {note}\n"));
    }
    out
}

fn cmd_shapes(args: ShapesArgs) -> Result<(), CliError> {
    let arch = presets::by_name(&args.arch, args.input, args.classes)?;
    let table = infer_shapes(&arch)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&table).expect("table serializes"));
    } else {
        println!("arch: {} (input {}x{}x1, {} classes)", arch.name, args.input, args.input, args.classes);
        print!("{}", render_shape_table(&table));
    }
    Ok(())
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("DRAMNET_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: DRAMNET_THREADS must be a positive integer, got {threads:?}");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }

    let cli = Cli::parse(); // clap exits with code 2 on usage errors
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Auth(args) => {
            return match cmd_auth(args) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(EXIT_REJECT),
                Err(e) => {
                    eprintln!("error: {}", e.message);
                    ExitCode::from(e.code)
                }
            }
        }
        Command::ExportImage(args) => cmd_export_image(args),
        Command::Shapes(args) => cmd_shapes(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
