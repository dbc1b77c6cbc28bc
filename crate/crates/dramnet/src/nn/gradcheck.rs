//! Central finite differences for gradient verification.
//!
//! [`finite_diff_grad`] is the independent oracle the gradient suite checks
//! the analytic backward passes against; it only ever calls forward code.
//! The `check_*` drivers build a random case for one layer kind, compute the
//! analytic gradients, and return the worst relative error against the
//! oracle — the test targets assert the bound.

use crate::rng::StreamKey;

use super::layers::{self, Mode};
use super::loss::{cross_entropy, l2_penalty, loss_grad_logits, softmax};
use super::model::{build_model, LayerGrads, LayerParams};
use super::tensor::Tensor;

/// Central-difference gradient of `f` at `x`: (f(x+h) − f(x−h)) / 2h per
/// coordinate.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Maximum relative error between two gradients. The denominator is floored
/// at 1e-5 so finite-difference roundoff (≈1e-11 absolute for O(1) losses)
/// cannot produce spurious failures on near-zero coordinates, while any
/// formula error still shows up at the gradient's own magnitude.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-5))
        .fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-5;

fn rand_vec(key: StreamKey, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|i| lo + (hi - lo) * key.uniform_at(i as u64)).collect()
}

/// Projection weights turning a tensor-valued output into a scalar loss
/// L = Σ out·r, so dL/dout = r.
fn projection(key: StreamKey, len: usize) -> Vec<f64> {
    rand_vec(key.child(0xB00), len, -1.0, 1.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Convolution: checks d_input, d_weights and d_bias.
pub fn check_conv2d(seed: u64, stride: usize) -> f64 {
    let key = StreamKey::new(seed).child(0xC0);
    let (n, h, w, cin, kh, kw, cout) = (2, 5, 6, 3, 3, 3, 4);
    let x0 = rand_vec(key.child(1), n * h * w * cin, -1.0, 1.0);
    let w0 = rand_vec(key.child(2), kh * kw * cin * cout, -0.7, 0.7);
    let b0 = rand_vec(key.child(3), cout, -0.5, 0.5);

    let forward = |x: &[f64], wv: &[f64], bv: &[f64]| {
        let input = Tensor::from_vec([n, h, w, cin], x.to_vec());
        let weights = Tensor::from_vec([kh, kw, cin, cout], wv.to_vec());
        layers::conv2d_forward(&input, &weights, bv, stride).unwrap().0
    };
    let out_len = forward(&x0, &w0, &b0).len();
    let r = projection(key, out_len);

    let input = Tensor::from_vec([n, h, w, cin], x0.clone());
    let weights = Tensor::from_vec([kh, kw, cin, cout], w0.clone());
    let (out, cache) = layers::conv2d_forward(&input, &weights, &b0, stride).unwrap();
    let dout = Tensor::from_vec(out.shape(), r.clone());
    let (dx, dw, db) = layers::conv2d_backward(&cache, &weights, &dout);

    let fd_x = finite_diff_grad(|x| dot(forward(x, &w0, &b0).data(), &r), &x0, FD_STEP);
    let fd_w = finite_diff_grad(|wv| dot(forward(&x0, wv, &b0).data(), &r), &w0, FD_STEP);
    let fd_b = finite_diff_grad(|bv| dot(forward(&x0, &w0, bv).data(), &r), &b0, FD_STEP);

    max_relative_error(dx.data(), &fd_x)
        .max(max_relative_error(dw.data(), &fd_w))
        .max(max_relative_error(&db, &fd_b))
}

/// Max pooling: checks d_input. Inputs are redrawn until every pooling window
/// has distinct-enough values, so the finite difference never crosses a max
/// switch.
pub fn check_maxpool(seed: u64) -> f64 {
    let (n, h, w, c) = (2, 4, 6, 3);
    let mut sub = 0u64;
    let x0 = loop {
        let key = StreamKey::new(seed).child(0xA0 + sub);
        let x: Vec<f64> = rand_vec(key, n * h * w * c, 0.0, 1.0);
        let mut ok = true;
        'windows: for img in 0..n {
            for oy in 0..h / 2 {
                for ox in 0..w / 2 {
                    for ch in 0..c {
                        let mut vals = Vec::with_capacity(4);
                        for dy in 0..2 {
                            for dx in 0..2 {
                                vals.push(x[((img * h + oy * 2 + dy) * w + ox * 2 + dx) * c + ch]);
                            }
                        }
                        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        if vals.windows(2).any(|p| p[1] - p[0] < 1e-3) {
                            ok = false;
                            break 'windows;
                        }
                    }
                }
            }
        }
        if ok {
            break x;
        }
        sub += 1;
    };

    let forward = |x: &[f64]| {
        let input = Tensor::from_vec([n, h, w, c], x.to_vec());
        layers::maxpool_forward(&input, (2, 2), 2).unwrap().0
    };
    let out_len = forward(&x0).len();
    let r = projection(StreamKey::new(seed).child(0xA1), out_len);

    let input = Tensor::from_vec([n, h, w, c], x0.clone());
    let (out, cache) = layers::maxpool_forward(&input, (2, 2), 2).unwrap();
    let dout = Tensor::from_vec(out.shape(), r.clone());
    let dx = layers::maxpool_backward(&cache, &dout);

    let fd_x = finite_diff_grad(|x| dot(forward(x).data(), &r), &x0, FD_STEP);
    max_relative_error(dx.data(), &fd_x)
}

/// Batch normalization (training mode): checks d_input, d_gamma, d_beta.
pub fn check_batchnorm(seed: u64) -> f64 {
    let key = StreamKey::new(seed).child(0xB4);
    let (n, h, w, c) = (4, 3, 3, 2);
    let x0 = rand_vec(key.child(1), n * h * w * c, -2.0, 2.0);
    let g0 = rand_vec(key.child(2), c, 0.5, 1.5);
    let b0 = rand_vec(key.child(3), c, -0.5, 0.5);

    let forward = |x: &[f64], g: &[f64], b: &[f64]| {
        let input = Tensor::from_vec([n, h, w, c], x.to_vec());
        let mut rm = vec![0.0; c];
        let mut rv = vec![1.0; c];
        layers::batchnorm_train(&input, g, b, &mut rm, &mut rv).unwrap().0
    };
    let r = projection(key, n * h * w * c);

    let input = Tensor::from_vec([n, h, w, c], x0.clone());
    let mut rm = vec![0.0; c];
    let mut rv = vec![1.0; c];
    let (out, cache) = layers::batchnorm_train(&input, &g0, &b0, &mut rm, &mut rv).unwrap();
    let dout = Tensor::from_vec(out.shape(), r.clone());
    let (dx, dg, db) = layers::batchnorm_backward(&cache, &g0, &dout);

    let fd_x = finite_diff_grad(|x| dot(forward(x, &g0, &b0).data(), &r), &x0, FD_STEP);
    let fd_g = finite_diff_grad(|g| dot(forward(&x0, g, &b0).data(), &r), &g0, FD_STEP);
    let fd_b = finite_diff_grad(|b| dot(forward(&x0, &g0, b).data(), &r), &b0, FD_STEP);

    max_relative_error(dx.data(), &fd_x)
        .max(max_relative_error(&dg, &fd_g))
        .max(max_relative_error(&db, &fd_b))
}

/// ReLU: checks d_input on values kept away from the kink.
pub fn check_relu(seed: u64) -> f64 {
    let len = 2 * 3 * 4 * 3;
    let mut sub = 0u64;
    let x0 = loop {
        let x = rand_vec(StreamKey::new(seed).child(0xE0 + sub), len, -1.0, 1.0);
        if x.iter().all(|v| v.abs() > 1e-3) {
            break x;
        }
        sub += 1;
    };
    let r = projection(StreamKey::new(seed).child(0xE9), len);

    let forward = |x: &[f64]| layers::relu_forward(&Tensor::from_vec([2, 3, 4, 3], x.to_vec()));
    let input = Tensor::from_vec([2, 3, 4, 3], x0.clone());
    let dout = Tensor::from_vec([2, 3, 4, 3], r.clone());
    let dx = layers::relu_backward(&input, &dout);

    let fd_x = finite_diff_grad(|x| dot(forward(x).data(), &r), &x0, FD_STEP);
    max_relative_error(dx.data(), &fd_x)
}

/// Dropout with the mask held fixed (training mode, same key every call):
/// checks d_input.
pub fn check_dropout_fixed_mask(seed: u64) -> f64 {
    let len = 3 * 1 * 1 * 40;
    let key = StreamKey::new(seed).child(0xD0);
    let mask_key = key.child(7);
    let x0 = rand_vec(key.child(1), len, -1.0, 1.0);
    let r = projection(key, len);

    let forward = |x: &[f64]| {
        let input = Tensor::from_vec([3, 1, 1, 40], x.to_vec());
        layers::dropout_forward(&input, 0.5, Mode::Train, mask_key).unwrap().0
    };
    let input = Tensor::from_vec([3, 1, 1, 40], x0.clone());
    let (_, cache) = layers::dropout_forward(&input, 0.5, Mode::Train, mask_key).unwrap();
    let dout = Tensor::from_vec([3, 1, 1, 40], r.clone());
    let dx = layers::dropout_backward(&cache.unwrap(), &dout);

    let fd_x = finite_diff_grad(|x| dot(forward(x).data(), &r), &x0, FD_STEP);
    max_relative_error(dx.data(), &fd_x)
}

/// Dense layer: checks d_input, d_weights, d_bias.
pub fn check_dense(seed: u64) -> f64 {
    let key = StreamKey::new(seed).child(0xDE);
    let (n, f_in, f_out) = (3, 7, 5);
    let x0 = rand_vec(key.child(1), n * f_in, -1.0, 1.0);
    let w0 = rand_vec(key.child(2), f_in * f_out, -0.8, 0.8);
    let b0 = rand_vec(key.child(3), f_out, -0.5, 0.5);

    let forward = |x: &[f64], wv: &[f64], bv: &[f64]| {
        let input = Tensor::from_rows(n, f_in, x.to_vec());
        let weights = Tensor::from_vec([1, 1, f_in, f_out], wv.to_vec());
        layers::dense_forward(&input, &weights, bv).unwrap().0
    };
    let r = projection(key, n * f_out);

    let input = Tensor::from_rows(n, f_in, x0.clone());
    let weights = Tensor::from_vec([1, 1, f_in, f_out], w0.clone());
    let (_, cache) = layers::dense_forward(&input, &weights, &b0).unwrap();
    let dout = Tensor::from_rows(n, f_out, r.clone());
    let (dx, dw, db) = layers::dense_backward(&cache, &weights, &dout);

    let fd_x = finite_diff_grad(|x| dot(forward(x, &w0, &b0).data(), &r), &x0, FD_STEP);
    let fd_w = finite_diff_grad(|wv| dot(forward(&x0, wv, &b0).data(), &r), &w0, FD_STEP);
    let fd_b = finite_diff_grad(|bv| dot(forward(&x0, &w0, bv).data(), &r), &b0, FD_STEP);

    max_relative_error(dx.data(), &fd_x)
        .max(max_relative_error(dw.data(), &fd_w))
        .max(max_relative_error(&db, &fd_b))
}

/// Softmax + cross-entropy, fused gradient at the logits.
pub fn check_softmax_loss(seed: u64) -> f64 {
    let key = StreamKey::new(seed).child(0x50);
    let (n, classes) = (4, 5);
    let z0 = rand_vec(key.child(1), n * classes, -2.0, 2.0);
    let labels: Vec<usize> = (0..n).map(|i| (key.child(2).u64_at(i as u64) % classes as u64) as usize).collect();

    let forward = |z: &[f64]| {
        let logits = Tensor::from_rows(n, classes, z.to_vec());
        cross_entropy(&softmax(&logits), &labels)
    };

    let logits = Tensor::from_rows(n, classes, z0.clone());
    let dz = loss_grad_logits(&softmax(&logits), &labels);

    let fd_z = finite_diff_grad(forward, &z0, FD_STEP);
    max_relative_error(dz.data(), &fd_z)
}

/// L2 penalty gradient: analytic 2λω against finite differences.
pub fn check_l2_penalty(seed: u64) -> f64 {
    let lambda = 1e-2;
    let w0 = rand_vec(StreamKey::new(seed).child(0x12), 30, -1.5, 1.5);
    let analytic: Vec<f64> = w0.iter().map(|&w| 2.0 * lambda * w).collect();
    let fd = finite_diff_grad(|w| l2_penalty([w], lambda), &w0, FD_STEP);
    max_relative_error(&analytic, &fd)
}

/// Whole-model check: a small conv/pool/batchnorm/dense/dropout/softmax stack
/// with cross-entropy + L2 loss; every trainable array is checked against
/// finite differences through the full training-mode forward pass.
pub fn check_full_model(seed: u64) -> f64 {
    use super::arch::{ArchitectureSpec, LayerKind, LayerSpec};

    let arch = ArchitectureSpec {
        name: "gradcheck".to_string(),
        input_height: 6,
        input_width: 6,
        n_classes: 3,
        layers: vec![
            LayerSpec::new(LayerKind::Conv2d { kernel: (3, 3), stride: 1, out_channels: 2 }),
            LayerSpec::new(LayerKind::BatchNorm),
            LayerSpec::new(LayerKind::Relu),
            LayerSpec::new(LayerKind::Pool { kernel: (2, 2), stride: 2 }),
            LayerSpec::new(LayerKind::Full { out_units: 8 }),
            LayerSpec::new(LayerKind::BatchNorm),
            LayerSpec::new(LayerKind::Relu),
            LayerSpec::new(LayerKind::Dropout { p: 0.5 }),
            LayerSpec::new(LayerKind::Full { out_units: 3 }),
            LayerSpec::new(LayerKind::Softmax),
        ],
        notes: vec![],
    };

    let key = StreamKey::new(seed).child(0xF1);
    let base = build_model::<f64>(&arch, seed).unwrap();
    let batch = 3;
    let input = Tensor::from_vec(
        [batch, 6, 6, 1],
        rand_vec(key.child(1), batch * 36, 0.0, 1.0),
    );
    let labels: Vec<usize> = (0..batch).map(|i| (key.child(2).u64_at(i as u64) % 3) as usize).collect();
    let dropout_key = key.child(3);
    let lambda = 1e-3;

    // Give the zero-initialized head random weights so its gradient flow is
    // exercised too.
    let mut base = base;
    if let LayerParams::Dense { weights, .. } = &mut base.layers[8] {
        let w = rand_vec(key.child(4), weights.len(), -0.5, 0.5);
        *weights = Tensor::from_vec(weights.shape(), w);
    }

    let loss_of = |model: &mut super::model::Model<f64>| {
        let pass = model.forward_train(&input, dropout_key).unwrap();
        cross_entropy(&pass.probs, &labels) + l2_penalty(model.weight_arrays(), lambda)
    };

    // analytic gradients
    let mut model = base.clone();
    let pass = model.forward_train(&input, dropout_key).unwrap();
    let dlogits = loss_grad_logits(&pass.probs, &labels);
    let mut grads = model.backward(&pass, dlogits);
    crate::train::apply_l2_gradient(&model, &mut grads, lambda);

    // finite differences per trainable array
    let mut worst: f64 = 0.0;
    for (layer_idx, grad) in grads.layers.iter().enumerate() {
        let arrays: Vec<(usize, Vec<f64>)> = match grad {
            LayerGrads::Conv { weights, bias } | LayerGrads::Dense { weights, bias } => {
                vec![(0, weights.data().to_vec()), (1, bias.clone())]
            }
            LayerGrads::Norm { gamma, beta } => vec![(0, gamma.clone()), (1, beta.clone())],
            LayerGrads::Stateless => vec![],
        };
        for (slot, analytic) in arrays {
            let x0 = read_param(&base, layer_idx, slot);
            let fd = finite_diff_grad(
                |x| {
                    let mut probe = base.clone();
                    write_param(&mut probe, layer_idx, slot, x);
                    loss_of(&mut probe)
                },
                &x0,
                FD_STEP,
            );
            worst = worst.max(max_relative_error(&analytic, &fd));
        }
    }
    worst
}

fn read_param(model: &super::model::Model<f64>, layer: usize, slot: usize) -> Vec<f64> {
    match (&model.layers[layer], slot) {
        (LayerParams::Conv { weights, .. }, 0) | (LayerParams::Dense { weights, .. }, 0) => {
            weights.data().to_vec()
        }
        (LayerParams::Conv { bias, .. }, 1) | (LayerParams::Dense { bias, .. }, 1) => bias.clone(),
        (LayerParams::Norm { gamma, .. }, 0) => gamma.clone(),
        (LayerParams::Norm { beta, .. }, 1) => beta.clone(),
        _ => unreachable!(),
    }
}

fn write_param(model: &mut super::model::Model<f64>, layer: usize, slot: usize, values: &[f64]) {
    match (&mut model.layers[layer], slot) {
        (LayerParams::Conv { weights, .. }, 0) | (LayerParams::Dense { weights, .. }, 0) => {
            weights.data_mut().copy_from_slice(values);
        }
        (LayerParams::Conv { bias, .. }, 1) | (LayerParams::Dense { bias, .. }, 1) => {
            bias.copy_from_slice(values);
        }
        (LayerParams::Norm { gamma, .. }, 0) => gamma.copy_from_slice(values),
        (LayerParams::Norm { beta, .. }, 1) => beta.copy_from_slice(values),
        _ => unreachable!(),
    }
}
