//! Dataset splitting, optimizers, the learning-rate schedule and the
//! training loop.

pub mod presets;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::imaging::{six_crops, FingerprintImage};
use crate::nn::model::{Gradients, LayerGrads, LayerParams, Model};
use crate::nn::tensor::{Scalar, Tensor};
use crate::rng::StreamKey;
use crate::sim::Dataset;

const TAG_SPLIT: u64 = 0x53_504C_54; // "SPLT"
const TAG_SHUFFLE: u64 = 0x5348_5546; // "SHUF"
const TAG_DROPOUT: u64 = 0x44_524F_50; // "DROP"

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

impl OptimizerKind {
    pub fn default_lr0(self) -> f64 {
        match self {
            OptimizerKind::SgdMomentum => 0.01,
            OptimizerKind::Adam => 0.001,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum => "sgd_momentum",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// Training hyperparameters. Defaults mirror the reference protocol: batch 16,
/// staircase decay ×0.9 every 500 steps, momentum 0.9, Adam (β₁ 0.9, β₂ 0.999,
/// ε 1e-8) at lr 0.001 or SGD+momentum at lr 0.01, L2 λ = 1e-4, 60/40 split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    /// Initial learning rate; `None` uses the optimizer's default.
    pub lr0: Option<f64>,
    pub decay_rate: f64,
    pub decay_period: usize,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// L2 penalty coefficient λ.
    pub weight_decay: f64,
    pub augment: bool,
    pub crop_fraction: f64,
    pub input_size: usize,
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr0: None,
            decay_rate: 0.9,
            decay_period: 500,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            epochs: 30,
            weight_decay: 1e-4,
            augment: false,
            crop_fraction: 0.875,
            input_size: 64,
            split_ratio: 0.6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn initial_lr(&self) -> f64 {
        self.lr0.unwrap_or_else(|| self.optimizer.default_lr0())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::param(format!(
                "split_ratio must be in (0,1), got {}",
                self.split_ratio
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::param(format!(
                "batch_size must be >= 2 (batchnorm contract), got {}",
                self.batch_size
            )));
        }
        if self.decay_period == 0 {
            return Err(Error::param("decay_period must be >= 1".to_string()));
        }
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            return Err(Error::param(format!(
                "crop_fraction must be in (0,1], got {}",
                self.crop_fraction
            )));
        }
        if self.input_size == 0 {
            return Err(Error::param("input_size must be >= 1".to_string()));
        }
        if !(self.initial_lr() > 0.0) {
            return Err(Error::param(format!("learning rate must be > 0, got {}", self.initial_lr())));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::param(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        Ok(())
    }
}

/// Stratified 60/40-style split: within each device the measurements are
/// shuffled by a seeded stream and the first `⌊ratio·n⌋` go to the training
/// set, so every device contributes the same train count. Returns
/// (train, test) index lists into `dataset.measurements`.
pub fn split_dataset(dataset: &Dataset, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::param(format!("split ratio must be in (0,1), got {ratio}")));
    }
    let mut per_device: Vec<Vec<usize>> = Vec::new();
    for (idx, m) in dataset.measurements.iter().enumerate() {
        let d = m.device_id as usize;
        if per_device.len() <= d {
            per_device.resize_with(d + 1, Vec::new);
        }
        per_device[d].push(idx);
    }
    for (d, group) in per_device.iter().enumerate() {
        if group.len() < 2 {
            return Err(Error::param(format!(
                "device {d} has {} measurements; stratified split needs >= 2 per device",
                group.len()
            )));
        }
    }

    let key = StreamKey::new(seed).child(TAG_SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (d, group) in per_device.iter_mut().enumerate() {
        let mut rng = key.child(d as u64).sequence();
        rng.shuffle(group);
        let take = (ratio * group.len() as f64).floor() as usize;
        train.extend_from_slice(&group[..take]);
        test.extend_from_slice(&group[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Staircase decay: `lr0 · decay_rate^⌊step/decay_period⌋`.
pub fn lr_at(step: usize, lr0: f64, decay_rate: f64, decay_period: usize) -> f64 {
    lr0 * decay_rate.powi((step / decay_period) as i32)
}

/// SGD with momentum: `v ← momentum·v + g; ω ← ω − lr·v`.
pub fn sgd_momentum_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: f64,
    momentum: f64,
) {
    sgd_update(params, grads, velocity, lr, momentum, 0.0);
}

/// SGD kernel with the L2 penalty gradient `2λω` folded into the read of each
/// weight (`two_lambda` is 0 for biases and normalization parameters).
fn sgd_update<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: f64,
    momentum: f64,
    two_lambda: f64,
) {
    let n = params.len();
    let (p, g, v) = (&mut params[..n], &grads[..n], &mut velocity[..n]);
    let lr = T::from_f64(lr);
    let mu = T::from_f64(momentum);
    let tl = T::from_f64(two_lambda);
    for i in 0..n {
        let gi = g[i] + tl * p[i];
        let vi = mu * v[i] + gi;
        v[i] = vi;
        p[i] = p[i] - lr * vi;
    }
}

/// Adam with bias correction; `t` is the 1-based step count after increment.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    first: &mut [T],
    second: &mut [T],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    adam_update(params, grads, first, second, t, lr, beta1, beta2, eps, 0.0);
}

/// Adam kernel with the L2 penalty gradient folded in, written as an indexed
/// loop over equal-length slices so it vectorizes.
#[allow(clippy::too_many_arguments)]
fn adam_update<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    first: &mut [T],
    second: &mut [T],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    two_lambda: f64,
) {
    assert!(t >= 1, "adam step count is 1-based");
    let n = params.len();
    let (p, g, m, v) = (&mut params[..n], &grads[..n], &mut first[..n], &mut second[..n]);
    let b1 = T::from_f64(beta1);
    let b2 = T::from_f64(beta2);
    let one_m_b1 = T::ONE - b1;
    let one_m_b2 = T::ONE - b2;
    // m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ); fold the corrections into multipliers
    let inv_corr1 = T::from_f64(1.0 / (1.0 - beta1.powi(t as i32)));
    let inv_sqrt_corr2 = T::from_f64(1.0 / (1.0 - beta2.powi(t as i32)).sqrt());
    let lr = T::from_f64(lr);
    let eps = T::from_f64(eps);
    let tl = T::from_f64(two_lambda);
    for i in 0..n {
        let gi = g[i] + tl * p[i];
        let mi = b1 * m[i] + one_m_b1 * gi;
        let vi = b2 * v[i] + one_m_b2 * gi * gi;
        m[i] = mi;
        v[i] = vi;
        p[i] = p[i] - lr * (mi * inv_corr1) / (vi.sqrt() * inv_sqrt_corr2 + eps);
    }
}

/// Per-parameter optimizer accumulators, shaped like the model's trainable
/// arrays.
#[derive(Debug, Clone)]
pub enum OptimizerState<T> {
    Sgd { velocity: Vec<Vec<Vec<T>>> },
    Adam { first: Vec<Vec<Vec<T>>>, second: Vec<Vec<Vec<T>>>, t: u64 },
}

fn zeros_like<T: Scalar>(model: &Model<T>) -> Vec<Vec<Vec<T>>> {
    model
        .layers
        .iter()
        .map(|l| match l {
            LayerParams::Conv { weights, bias } | LayerParams::Dense { weights, bias } => {
                vec![vec![T::ZERO; weights.len()], vec![T::ZERO; bias.len()]]
            }
            LayerParams::Norm { gamma, beta, .. } => {
                vec![vec![T::ZERO; gamma.len()], vec![T::ZERO; beta.len()]]
            }
            LayerParams::Stateless => vec![],
        })
        .collect()
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, model: &Model<T>) -> Self {
        match kind {
            OptimizerKind::SgdMomentum => OptimizerState::Sgd { velocity: zeros_like(model) },
            OptimizerKind::Adam => OptimizerState::Adam {
                first: zeros_like(model),
                second: zeros_like(model),
                t: 0,
            },
        }
    }

    /// Apply one optimizer update. The L2 penalty gradient `2λω`
    /// (λ = `config.weight_decay`) is folded into the update of conv/dense
    /// weight arrays; biases and normalization parameters are not decayed.
    pub fn step(&mut self, model: &mut Model<T>, grads: &Gradients<T>, lr: f64, config: &TrainConfig) {
        let two_lambda = 2.0 * config.weight_decay;
        match self {
            OptimizerState::Sgd { velocity } => {
                for ((layer, grad), vel) in model.layers.iter_mut().zip(&grads.layers).zip(velocity) {
                    for (((p, is_weight), g), v) in trainable_arrays(layer)
                        .into_iter()
                        .zip(grad_arrays(grad))
                        .zip(vel.iter_mut())
                    {
                        let tl = if is_weight { two_lambda } else { 0.0 };
                        sgd_update(p, g, v, lr, config.momentum, tl);
                    }
                }
            }
            OptimizerState::Adam { first, second, t } => {
                *t += 1;
                let t_now = *t;
                for (((layer, grad), m), v) in model
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(first)
                    .zip(second)
                {
                    for ((((p, is_weight), g), ma), va) in trainable_arrays(layer)
                        .into_iter()
                        .zip(grad_arrays(grad))
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        let tl = if is_weight { two_lambda } else { 0.0 };
                        adam_update(
                            p,
                            g,
                            ma,
                            va,
                            t_now,
                            lr,
                            config.beta1,
                            config.beta2,
                            config.adam_eps,
                            tl,
                        );
                    }
                }
            }
        }
    }
}

/// The layer's trainable arrays, each tagged with whether it is a weight
/// matrix (subject to L2 decay) as opposed to a bias/γ/β vector.
fn trainable_arrays<T: Scalar>(layer: &mut LayerParams<T>) -> Vec<(&mut [T], bool)> {
    match layer {
        LayerParams::Conv { weights, bias } | LayerParams::Dense { weights, bias } => {
            vec![(weights.data_mut(), true), (bias.as_mut_slice(), false)]
        }
        LayerParams::Norm { gamma, beta, .. } => {
            vec![(gamma.as_mut_slice(), false), (beta.as_mut_slice(), false)]
        }
        LayerParams::Stateless => vec![],
    }
}

fn grad_arrays<T: Scalar>(grad: &LayerGrads<T>) -> Vec<&[T]> {
    match grad {
        LayerGrads::Conv { weights, bias } | LayerGrads::Dense { weights, bias } => {
            vec![weights.data(), bias.as_slice()]
        }
        LayerGrads::Norm { gamma, beta } => vec![gamma.as_slice(), beta.as_slice()],
        LayerGrads::Stateless => vec![],
    }
}

/// Add the L2 penalty gradient `2λω` to the conv/dense weight gradients.
pub fn apply_l2_gradient<T: Scalar>(model: &Model<T>, grads: &mut Gradients<T>, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    let two_lambda = T::from_f64(2.0 * lambda);
    for (layer, grad) in model.layers.iter().zip(&mut grads.layers) {
        match (layer, grad) {
            (LayerParams::Conv { weights, .. }, LayerGrads::Conv { weights: gw, .. })
            | (LayerParams::Dense { weights, .. }, LayerGrads::Dense { weights: gw, .. }) => {
                for (g, &w) in gw.data_mut().iter_mut().zip(weights.data()) {
                    *g += two_lambda * w;
                }
            }
            _ => {}
        }
    }
}

/// One training step's record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Loss per step, accuracy per epoch, and wall time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub wall_time_secs: f64,
}

impl TrainHistory {
    /// CSV with columns `step,lr,loss,epoch,train_acc,test_acc`; each step row
    /// carries its epoch's accuracies. Wall time is intentionally not a
    /// column so identical runs produce identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lr,loss,epoch,train_acc,test_acc\n");
        for s in &self.steps {
            let e = &self.epochs[s.epoch];
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.step, s.lr, s.loss, s.epoch, e.train_accuracy, e.test_accuracy
            ));
        }
        out
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.test_accuracy)
    }
}

/// The epoch's batch index lists: a seeded shuffle cut into `batch_size`
/// chunks, keeping the final partial batch so each image is used exactly once
/// per epoch.
pub fn epoch_batches(n_items: usize, batch_size: usize, key: StreamKey) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_items).collect();
    key.sequence().shuffle(&mut order);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn correct_count<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> usize {
    let classes = probs.sample_len();
    probs
        .data()
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best == label
        })
        .count()
}

fn batch_tensor<T: Scalar>(images: &[FingerprintImage], indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
    let (h, w) = (images[indices[0]].rows, images[indices[0]].cols);
    let mut data = Vec::with_capacity(indices.len() * h * w);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let img = &images[i];
        data.extend(img.pixels.iter().map(|&p| T::from_f64(p as f64 / 255.0)));
        labels.push(img.label as usize);
    }
    (Tensor::from_vec([indices.len(), h, w, 1], data), labels)
}

/// Fit `model` to the training images. Images must already be at the model's
/// input size; augmentation (six-way crops) is applied to the training set
/// only, before batching, when `config.augment` is set. Per-epoch history
/// records the running train accuracy over that epoch's training batches and
/// the test accuracy from an inference-mode sweep of the untouched test set.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_images: &[FingerprintImage],
    test_images: &[FingerprintImage],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if train_images.is_empty() {
        return Err(Error::param("training set is empty".to_string()));
    }
    let (h, w) = model.input_dims();
    for img in train_images.iter().chain(test_images) {
        if img.rows != h || img.cols != w {
            return Err(Error::Contract(format!(
                "image is {}x{} but the model expects {h}x{w}",
                img.rows, img.cols
            )));
        }
    }

    let started = Instant::now();
    let augmented: Vec<FingerprintImage> = if config.augment {
        let mut out = Vec::with_capacity(train_images.len() * 6);
        for img in train_images {
            out.extend(six_crops(img, config.crop_fraction)?);
        }
        out
    } else {
        train_images.to_vec()
    };

    if config.batch_size > augmented.len() {
        return Err(Error::param(format!(
            "batch_size {} exceeds training set size {}",
            config.batch_size,
            augmented.len()
        )));
    }
    if augmented.len() % config.batch_size == 1 {
        return Err(Error::Contract(format!(
            "training set of {} leaves a final batch of 1, which batchnorm cannot normalize; \
             adjust batch_size",
            augmented.len()
        )));
    }

    let key = StreamKey::new(config.seed);
    let lr0 = config.initial_lr();
    let lambda = config.weight_decay;
    let mut optimizer = OptimizerState::new(config.optimizer, model);
    let mut history = TrainHistory {
        steps: Vec::new(),
        epochs: Vec::new(),
        wall_time_secs: 0.0,
    };

    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let batches = epoch_batches(
            augmented.len(),
            config.batch_size,
            key.child(TAG_SHUFFLE).child(epoch as u64),
        );
        let mut epoch_correct = 0usize;
        let mut epoch_seen = 0usize;
        for batch in batches {
            let (input, labels) = batch_tensor::<T>(&augmented, &batch);
            let pass = model.forward_train(&input, key.child(TAG_DROPOUT).child(step as u64))?;
            let loss_value =
                crate::nn::loss::loss(&pass.probs, &labels, model.weight_arrays(), lambda);
            epoch_correct += correct_count(&pass.probs, &labels);
            epoch_seen += labels.len();
            let dlogits = crate::nn::loss::loss_grad_logits(&pass.probs, &labels);
            let grads = model.backward(&pass, dlogits);
            let lr = lr_at(step, lr0, config.decay_rate, config.decay_period);
            optimizer.step(model, &grads, lr, config);
            history.steps.push(StepRecord {
                step,
                lr,
                loss: loss_value.to_f64(),
                epoch,
            });
            step += 1;
        }

        // running train accuracy over the epoch's own training batches;
        // test accuracy from a frozen inference sweep
        let train_accuracy = epoch_correct as f64 / epoch_seen as f64;
        let test_accuracy = if test_images.is_empty() {
            0.0
        } else {
            eval::accuracy_on(model, test_images, 64)?
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_accuracy,
            test_accuracy,
        });
    }

    history.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_dataset, Condition, SimParams};

    #[test]
    fn lr_staircase_values() {
        assert_eq!(lr_at(0, 0.01, 0.9, 500), 0.01);
        assert_eq!(lr_at(499, 0.01, 0.9, 500), 0.01);
        assert!((lr_at(500, 0.01, 0.9, 500) - 0.009).abs() < 1e-15);
        assert!((lr_at(1000, 0.01, 0.9, 500) - 0.0081).abs() < 1e-15);
    }

    #[test]
    fn lr_non_increasing_piecewise_constant() {
        let mut last = f64::INFINITY;
        for step in 0..2000 {
            let lr = lr_at(step, 0.01, 0.9, 500);
            assert!(lr <= last);
            if step % 500 != 0 {
                assert_eq!(lr, lr_at(step - 1, 0.01, 0.9, 500));
            }
            last = lr;
        }
    }

    #[test]
    fn sgd_zero_gradient_is_identity() {
        let mut p = vec![1.0f64, -2.0];
        let mut v = vec![0.0f64; 2];
        sgd_momentum_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9);
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn sgd_first_step_and_momentum_accumulation() {
        let mut p = vec![0.0f64];
        let mut v = vec![0.0f64];
        let g = [2.0f64];
        sgd_momentum_step(&mut p, &g, &mut v, 0.1, 0.9);
        assert!((p[0] + 0.1 * 2.0).abs() < 1e-15);
        sgd_momentum_step(&mut p, &g, &mut v, 0.1, 0.9);
        // v₂ = 0.9·g + g = 1.9·g; total decrease lr·g·(1 + 1.9)
        assert!((p[0] + 0.1 * 2.0 * 2.9).abs() < 1e-12, "{}", p[0]);
    }

    #[test]
    fn adam_zero_gradient_from_zero_state() {
        let mut p = vec![0.5f64];
        let mut m = vec![0.0f64];
        let mut v = vec![0.0f64];
        adam_step(&mut p, &[0.0], &mut m, &mut v, 1, 0.001, 0.9, 0.999, 1e-8);
        assert_eq!(p, vec![0.5]);
    }

    #[test]
    fn adam_first_step_magnitude_and_sign() {
        let mut p = vec![1.0f64, 1.0];
        let mut m = vec![0.0f64; 2];
        let mut v = vec![0.0f64; 2];
        adam_step(&mut p, &[1.0, -3.5], &mut m, &mut v, 1, 0.001, 0.9, 0.999, 1e-8);
        // m̂ = g, v̂ = g² ⇒ update = −lr·sign(g)/(1+ε)
        assert!((p[0] - (1.0 - 0.001)).abs() < 1e-6, "{}", p[0]);
        assert!((p[1] - (1.0 + 0.001)).abs() < 1e-6, "{}", p[1]);
    }

    #[test]
    fn split_is_stratified_and_exhaustive() {
        let ds = generate_dataset(3, &Condition::all_default(), 10, 8, 8, 7, &SimParams::default()).unwrap();
        let (train, test) = split_dataset(&ds, 0.6, 42).unwrap();
        assert_eq!(train.len(), 108);
        assert_eq!(test.len(), 72);
        for d in 0..3u32 {
            let n = train.iter().filter(|&&i| ds.measurements[i].device_id == d).count();
            assert_eq!(n, 36, "device {d}");
        }
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..180).collect::<Vec<_>>());

        let (train2, test2) = split_dataset(&ds, 0.6, 42).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        let (train3, _) = split_dataset(&ds, 0.6, 43).unwrap();
        assert_ne!(train, train3);
    }

    #[test]
    fn split_rejects_bad_ratio() {
        let ds = generate_dataset(
            1,
            &[Condition::all_default()[0]],
            4,
            8,
            8,
            1,
            &SimParams::default(),
        )
        .unwrap();
        assert!(split_dataset(&ds, 0.0, 1).is_err());
        assert!(split_dataset(&ds, 1.0, 1).is_err());
    }

    #[test]
    fn epoch_batches_partition_exactly_once() {
        let key = StreamKey::new(3).child(1);
        let batches = epoch_batches(1080, 16, key);
        assert_eq!(batches.len(), 68); // 67 full + final 8
        assert_eq!(batches[66].len(), 16);
        assert_eq!(batches[67].len(), 8);
        let mut seen: Vec<usize> = batches.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..1080).collect::<Vec<_>>());
    }

    #[test]
    fn weight_decay_shrinks_weights_with_zero_data_gradient() {
        use crate::nn::build_model;
        let arch = presets::dramnet_at("t", 8, 3);
        let mut model = build_model::<f64>(&arch, 1).unwrap();
        let before: f64 = model
            .weight_arrays()
            .iter()
            .flat_map(|a| a.iter())
            .map(|&w| w * w)
            .sum();

        // zero gradients everywhere
        let grads = Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| match l {
                    LayerParams::Conv { weights, bias } => LayerGrads::Conv {
                        weights: Tensor::zeros(weights.shape()),
                        bias: vec![0.0; bias.len()],
                    },
                    LayerParams::Dense { weights, bias } => LayerGrads::Dense {
                        weights: Tensor::zeros(weights.shape()),
                        bias: vec![0.0; bias.len()],
                    },
                    LayerParams::Norm { gamma, beta, .. } => LayerGrads::Norm {
                        gamma: vec![0.0; gamma.len()],
                        beta: vec![0.0; beta.len()],
                    },
                    LayerParams::Stateless => LayerGrads::Stateless,
                })
                .collect(),
        };
        let config = TrainConfig {
            optimizer: OptimizerKind::SgdMomentum,
            weight_decay: 0.01,
            ..TrainConfig::default()
        };
        let mut opt = OptimizerState::new(OptimizerKind::SgdMomentum, &model);
        opt.step(&mut model, &grads, 0.1, &config);

        let after: f64 = model
            .weight_arrays()
            .iter()
            .flat_map(|a| a.iter())
            .map(|&w| w * w)
            .sum();
        assert!(after < before, "Σω² did not decrease: {before} -> {after}");
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.batch_size = 1;
        assert!(c.validate().is_err());
        c = TrainConfig { split_ratio: 1.2, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_lrs_follow_optimizer() {
        let sgd = TrainConfig {
            optimizer: OptimizerKind::SgdMomentum,
            ..TrainConfig::default()
        };
        assert_eq!(sgd.initial_lr(), 0.01);
        let adam = TrainConfig::default();
        assert_eq!(adam.initial_lr(), 0.001);
    }
}
