//! End-to-end tests of the `dramnet` binary: flags, exit codes, artifacts
//! and reproducibility at small scale.

use std::path::Path;
use std::process::{Command, Output};

use dramnet::digest::digest_file;
use dramnet::imaging::{import_pgm, to_image};
use dramnet::nn::model::Model;
use dramnet::sim::Dataset;

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn dramnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dramnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn gen_tiny(dir: &Path, seed: u64) {
    let out = dramnet(&[
        "gen",
        "--devices", "3",
        "--per-condition", "2",
        "--rows", "64",
        "--cols", "64",
        "--seed", &seed.to_string(),
        "--out", dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
}

#[test]
fn gen_is_reproducible_across_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen_tiny(&a, 7);
    gen_tiny(&b, 7);
    for name in ["manifest.json", "m_00_nominal_000.bin", "m_02_aged_001.bin"] {
        assert_eq!(
            digest_file(&a.join(name)).unwrap(),
            digest_file(&b.join(name)).unwrap(),
            "{name}"
        );
    }
    let c = tmp.path().join("c");
    gen_tiny(&c, 8);
    assert_ne!(
        digest_file(&a.join("m_00_nominal_000.bin")).unwrap(),
        digest_file(&c.join("m_00_nominal_000.bin")).unwrap()
    );
}

#[test]
fn gen_default_protocol_yields_180_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("ds");
    let out = dramnet(&[
        "gen",
        "--devices", "3",
        "--per-condition", "10",
        "--rows", "32",
        "--cols", "32",
        "--seed", "7",
        "--out", dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let bins = std::fs::read_dir(&dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "bin")
        })
        .count();
    assert_eq!(bins, 180);
}

#[test]
fn gen_single_measurement() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("ds");
    let out = dramnet(&[
        "gen",
        "--devices", "1",
        "--conditions", "nominal",
        "--per-condition", "1",
        "--rows", "16",
        "--cols", "16",
        "--seed", "1",
        "--out", dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let ds = Dataset::load(&dir).unwrap();
    assert_eq!(ds.len(), 1);
}

#[test]
fn bad_flags_exit_2_and_bad_paths_exit_3() {
    let out = dramnet(&["gen", "--devices", "not-a-number", "--out", "x"]);
    assert_code(&out, 2);

    let out = dramnet(&["gen", "--conditions", "lukewarm", "--out", "/tmp/never-x"]);
    assert_code(&out, 2);

    let out = dramnet(&["train", "--dataset", "/definitely/missing", "--out", "/tmp/m.drnw"]);
    assert_code(&out, 3);

    let out = dramnet(&["no-such-command"]);
    assert_code(&out, 2);
}

#[test]
fn threads_env_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_dramnet"))
        .env("DRAMNET_THREADS", "zero?")
        .args(["shapes", "--arch", "dramnet", "--input", "64"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_dramnet"))
        .env("DRAMNET_THREADS", "1")
        .args(["shapes", "--arch", "dramnet", "--input", "64"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn export_image_roundtrips_through_pgm() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("ds");
    gen_tiny(&dir, 3);
    let bin = dir.join("m_01_high-temp_000.bin");
    let pgm = tmp.path().join("fp.pgm");
    let out = dramnet(&["export-image", bin.to_str().unwrap(), pgm.to_str().unwrap()]);
    assert_code(&out, 0);

    let ds = Dataset::load(&dir).unwrap();
    let measurement = ds
        .manifest
        .records
        .iter()
        .zip(&ds.measurements)
        .find(|(r, _)| r.file == "m_01_high-temp_000.bin")
        .unwrap()
        .1;
    let imported = import_pgm(&pgm).unwrap();
    assert_eq!(imported.pixels, to_image(measurement).pixels);
}

#[test]
fn shapes_desk_flatten_and_json() {
    let out = dramnet(&["shapes", "--arch", "dramnet", "--input", "64"]);
    assert_code(&out, 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("8x8x192"), "{text}");

    let out = dramnet(&["shapes", "--arch", "vggnet-s", "--input", "64", "--json"]);
    assert_code(&out, 0);
    let table: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(table["arch"], "vggnet_s");

    let out = dramnet(&["shapes", "--arch", "resnet", "--input", "64"]);
    assert_code(&out, 2);
}

struct TrainedFixture {
    _tmp: tempfile::TempDir,
    dataset: std::path::PathBuf,
    model: std::path::PathBuf,
}

fn train_tiny_fixture(augment: bool, epochs: &str) -> TrainedFixture {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("ds");
    gen_tiny(&dataset, 7); // 3 devices x 6 conditions x 2 = 36 measurements @64x64
    let model = tmp.path().join("model.drnw");
    let mut args = vec![
        "train",
        "--dataset", dataset.to_str().unwrap(),
        "--out", model.to_str().unwrap(),
        "--arch", "dramnet",
        "--input-size", "16",
        "--epochs", epochs,
        "--batch-size", "7",
        "--seed", "5",
    ];
    if augment {
        args.push("--augment");
    }
    let out = dramnet(&args);
    assert_code(&out, 0);
    TrainedFixture { _tmp: tmp, dataset, model }
}

#[test]
fn zero_epochs_writes_untrained_weights() {
    let fx = train_tiny_fixture(false, "0");
    let loaded: Model<f32> = Model::load(&fx.model).unwrap();
    // seeded untouched initialization
    let arch = dramnet::train::presets::dramnet_at("dramnet", 16, 3);
    let fresh: Model<f32> = dramnet::nn::build_model(&arch, 5).unwrap();
    assert_eq!(loaded.layers, fresh.layers);
}

#[test]
fn augment_multiplies_steps_per_epoch() {
    // 36 measurements, split 0.6 -> 21 train (7 per device); batch 7.
    let plain = train_tiny_fixture(false, "2");
    let augmented = train_tiny_fixture(true, "2");
    let count_steps = |fx: &TrainedFixture| {
        let csv = std::fs::read_to_string(fx.model.with_extension("csv")).unwrap();
        csv.lines().count() - 1
    };
    // 21/7 = 3 steps vs 126/7 = 18 steps per epoch
    assert_eq!(count_steps(&plain), 6);
    assert_eq!(count_steps(&augmented), 36);
}

#[test]
fn eval_split_seed_guard() {
    let fx = train_tiny_fixture(false, "1");
    let reports = fx.dataset.parent().unwrap().join("reports");

    // matching seed (from the manifest) works
    let out = dramnet(&[
        "eval",
        "--model", fx.model.to_str().unwrap(),
        "--dataset", fx.dataset.to_str().unwrap(),
        "--out-dir", reports.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(reports.join("metrics.json").exists());
    assert!(reports.join("roc.csv").exists());
    assert!(reports.join("confusion.csv").exists());
    let roc = std::fs::read_to_string(reports.join("roc.csv")).unwrap();
    assert!(roc.starts_with("class,threshold,fpr,tpr\n"));
    // three class sections
    for class in ["\n0,", "\n1,", "\n2,"] {
        assert!(roc.contains(class), "{roc}");
    }

    // mismatched seed refuses without --force
    let out = dramnet(&[
        "eval",
        "--model", fx.model.to_str().unwrap(),
        "--dataset", fx.dataset.to_str().unwrap(),
        "--seed", "999",
        "--out-dir", reports.to_str().unwrap(),
    ]);
    assert_code(&out, 5);

    let out = dramnet(&[
        "eval",
        "--model", fx.model.to_str().unwrap(),
        "--dataset", fx.dataset.to_str().unwrap(),
        "--seed", "999",
        "--force",
        "--out-dir", reports.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
}

#[test]
fn eval_matches_training_history_and_is_deterministic() {
    let fx = train_tiny_fixture(false, "2");
    let reports1 = fx.dataset.parent().unwrap().join("r1");
    let reports2 = fx.dataset.parent().unwrap().join("r2");
    for r in [&reports1, &reports2] {
        let out = dramnet(&[
            "eval",
            "--model", fx.model.to_str().unwrap(),
            "--dataset", fx.dataset.to_str().unwrap(),
            "--out-dir", r.to_str().unwrap(),
        ]);
        assert_code(&out, 0);
    }
    assert_eq!(
        std::fs::read(reports1.join("metrics.json")).unwrap(),
        std::fs::read(reports2.join("metrics.json")).unwrap()
    );

    // metrics.json accuracy equals the last epoch's test accuracy in history
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(reports1.join("metrics.json")).unwrap()).unwrap();
    let csv = std::fs::read_to_string(fx.model.with_extension("csv")).unwrap();
    let last = csv.lines().last().unwrap();
    let test_acc: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(metrics["accuracy"].as_f64().unwrap(), test_acc);
}

#[test]
fn auth_threshold_zero_always_accepts() {
    let fx = train_tiny_fixture(false, "1");
    let out = dramnet(&[
        "auth",
        "--model", fx.model.to_str().unwrap(),
        "--measurement", fx.dataset.join("m_00_low-volt_001.bin").to_str().unwrap(),
        "--threshold", "0",
    ]);
    assert_code(&out, 0);
    let decision: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(decision["accepted"], true);
    assert_eq!(decision["threshold"], 0.0);
    assert_eq!(decision["probabilities"].as_array().unwrap().len(), 3);
}

#[test]
fn auth_impossible_threshold_rejects_with_exit_1() {
    let fx = train_tiny_fixture(false, "1");
    let out = dramnet(&[
        "auth",
        "--model", fx.model.to_str().unwrap(),
        "--measurement", fx.dataset.join("m_00_nominal_000.bin").to_str().unwrap(),
        "--threshold", "1.1",
    ]);
    assert_code(&out, 1);
}

#[test]
fn config_file_merges_under_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("ds");
    gen_tiny(&dataset, 7);
    let config = tmp.path().join("cfg.json");
    std::fs::write(
        &config,
        r#"{ "train": { "epochs": 1, "batch_size": 7, "input_size": 16, "seed": 5 } }"#,
    )
    .unwrap();

    // config alone: 1 epoch -> 3 steps
    let m1 = tmp.path().join("m1.drnw");
    let out = dramnet(&[
        "train",
        "--dataset", dataset.to_str().unwrap(),
        "--out", m1.to_str().unwrap(),
        "--config", config.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let steps1 = std::fs::read_to_string(m1.with_extension("csv")).unwrap().lines().count() - 1;
    assert_eq!(steps1, 3);

    // explicit flag overrides the config's epoch count
    let m2 = tmp.path().join("m2.drnw");
    let out = dramnet(&[
        "train",
        "--dataset", dataset.to_str().unwrap(),
        "--out", m2.to_str().unwrap(),
        "--config", config.to_str().unwrap(),
        "--epochs", "2",
    ]);
    assert_code(&out, 0);
    let steps2 = std::fs::read_to_string(m2.with_extension("csv")).unwrap().lines().count() - 1;
    assert_eq!(steps2, 6);
}

#[test]
fn gen_does_not_mutate_inputs_and_train_leaves_dataset_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("ds");
    gen_tiny(&dataset, 7);
    let before = digest_file(&dataset.join("manifest.json")).unwrap();
    let model = tmp.path().join("m.drnw");
    let out = dramnet(&[
        "train",
        "--dataset", dataset.to_str().unwrap(),
        "--out", model.to_str().unwrap(),
        "--input-size", "16",
        "--epochs", "1",
        "--batch-size", "7",
    ]);
    assert_code(&out, 0);
    assert_eq!(digest_file(&dataset.join("manifest.json")).unwrap(), before);
}
