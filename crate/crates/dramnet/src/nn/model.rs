//! Model parameters, initialization, the full forward/backward pass, and the
//! `.drnw` model file format.
//!
//! File layout: magic `DRNW`, version u8, u32 LE length-prefixed UTF-8 JSON
//! architecture block, then each layer's parameter arrays in architecture
//! order (conv/full: weights then bias; batchnorm: gamma, beta, running mean,
//! running variance), each array a u64 LE count followed by little-endian
//! 32-bit floats.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::StreamKey;

use super::arch::{ArchitectureSpec, LayerKind};
use super::layers::{self, Mode};
use super::loss::softmax;
use super::tensor::{Scalar, Tensor};

pub const MODEL_MAGIC: &[u8; 4] = b"DRNW";
pub const MODEL_VERSION: u8 = 1;

const TAG_INIT: u64 = 0x494E_4954; // "INIT"

/// Per-layer parameters, aligned index-for-index with `arch.layers`.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    Conv {
        /// `[kh, kw, cin, cout]`
        weights: Tensor<T>,
        bias: Vec<T>,
    },
    Norm {
        gamma: Vec<T>,
        beta: Vec<T>,
        running_mean: Vec<T>,
        running_var: Vec<T>,
    },
    Dense {
        /// `[1, 1, f_in, f_out]`
        weights: Tensor<T>,
        bias: Vec<T>,
    },
    Stateless,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub arch: ArchitectureSpec,
    pub layers: Vec<LayerParams<T>>,
    pub init_seed: u64,
}

/// Gradients mirroring the trainable arrays of [`LayerParams`].
#[derive(Debug, Clone)]
pub enum LayerGrads<T> {
    Conv { weights: Tensor<T>, bias: Vec<T> },
    Norm { gamma: Vec<T>, beta: Vec<T> },
    Dense { weights: Tensor<T>, bias: Vec<T> },
    Stateless,
}

pub struct Gradients<T> {
    pub layers: Vec<LayerGrads<T>>,
}

enum LayerCache<T> {
    Conv(layers::Conv2dCache<T>),
    Pool(layers::MaxPoolCache),
    Norm(layers::BatchNormCache<T>),
    Relu(Tensor<T>),
    Dropout(Option<layers::DropoutCache>),
    Dense(layers::DenseCache<T>),
    Passthrough,
}

/// Activations and caches of one training-mode forward pass.
pub struct ForwardPass<T> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    caches: Vec<LayerCache<T>>,
}

/// Geometry of each parameter block, derived from the architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
enum ParamDims {
    Conv { kh: usize, kw: usize, cin: usize, cout: usize },
    Norm { c: usize },
    Dense { f_in: usize, f_out: usize },
    None,
}

fn param_dims(arch: &ArchitectureSpec) -> Result<Vec<ParamDims>> {
    let table = super::arch::infer_shapes(arch)?;
    Ok(arch
        .layers
        .iter()
        .zip(&table.rows)
        .map(|(layer, row)| match layer.kind {
            LayerKind::Conv2d { kernel, out_channels, .. } => ParamDims::Conv {
                kh: kernel.0,
                kw: kernel.1,
                cin: row.input.2,
                cout: out_channels,
            },
            LayerKind::BatchNorm => ParamDims::Norm { c: row.input.2 },
            LayerKind::Full { out_units } => ParamDims::Dense {
                f_in: row.input.0 * row.input.1 * row.input.2,
                f_out: out_units,
            },
            _ => ParamDims::None,
        })
        .collect())
}

/// He-uniform initialization scaled by fan-in from a seeded stream; biases
/// zero, batchnorm at identity with fresh running statistics. The final
/// classifier layer is zero-initialized so a fresh model predicts uniformly.
pub fn build_model<T: Scalar>(arch: &ArchitectureSpec, init_seed: u64) -> Result<Model<T>> {
    arch.validate()?;
    let dims = param_dims(arch)?;
    let last_full = arch
        .layers
        .iter()
        .rposition(|l| matches!(l.kind, LayerKind::Full { .. }))
        .expect("validated architectures end in full+softmax");

    let init_key = StreamKey::new(init_seed).child(TAG_INIT);
    let he_uniform = |layer_idx: usize, count: usize, fan_in: usize| -> Vec<T> {
        let limit = (6.0 / fan_in as f64).sqrt();
        let key = init_key.child(layer_idx as u64);
        (0..count)
            .map(|i| T::from_f64((key.uniform_at(i as u64) * 2.0 - 1.0) * limit))
            .collect()
    };

    let layers = dims
        .iter()
        .enumerate()
        .map(|(idx, d)| match *d {
            ParamDims::Conv { kh, kw, cin, cout } => LayerParams::Conv {
                weights: Tensor::from_vec([kh, kw, cin, cout], he_uniform(idx, kh * kw * cin * cout, kh * kw * cin)),
                bias: vec![T::ZERO; cout],
            },
            ParamDims::Norm { c } => LayerParams::Norm {
                gamma: vec![T::ONE; c],
                beta: vec![T::ZERO; c],
                running_mean: vec![T::ZERO; c],
                running_var: vec![T::ONE; c],
            },
            ParamDims::Dense { f_in, f_out } => {
                let weights = if idx == last_full {
                    vec![T::ZERO; f_in * f_out]
                } else {
                    he_uniform(idx, f_in * f_out, f_in)
                };
                LayerParams::Dense {
                    weights: Tensor::from_vec([1, 1, f_in, f_out], weights),
                    bias: vec![T::ZERO; f_out],
                }
            }
            ParamDims::None => LayerParams::Stateless,
        })
        .collect();

    Ok(Model {
        arch: arch.clone(),
        layers,
        init_seed,
    })
}

impl<T: Scalar> Model<T> {
    pub fn input_dims(&self) -> (usize, usize) {
        (self.arch.input_height, self.arch.input_width)
    }

    /// Total trainable parameter count actually allocated.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerParams::Conv { weights, bias } | LayerParams::Dense { weights, bias } => {
                    weights.len() + bias.len()
                }
                LayerParams::Norm { gamma, beta, .. } => gamma.len() + beta.len(),
                LayerParams::Stateless => 0,
            })
            .sum()
    }

    /// The conv/dense weight arrays (the ω of the L2 penalty).
    pub fn weight_arrays(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerParams::Conv { weights, .. } | LayerParams::Dense { weights, .. } => {
                    Some(weights.data())
                }
                _ => None,
            })
            .collect()
    }

    /// Training-mode forward pass (updates batchnorm running statistics,
    /// applies dropout with masks keyed off `dropout_key`).
    pub fn forward_train(&mut self, input: &Tensor<T>, dropout_key: StreamKey) -> Result<ForwardPass<T>> {
        self.forward_inner(input, Mode::Train, dropout_key)
    }

    /// Inference-mode class probabilities: frozen statistics, no dropout, no
    /// caches. Read-only, so a frozen model can serve many threads.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = (self.arch.input_height, self.arch.input_width);
        if input.h() != h || input.w() != w || input.c() != 1 {
            return Err(Error::shape(
                "input",
                format!(
                    "expected {h}x{w}x1 input, got {}x{}x{}",
                    input.h(),
                    input.w(),
                    input.c()
                ),
            ));
        }
        let mut x = input.clone();
        for (idx, spec) in self.arch.layers.iter().enumerate() {
            match (spec.kind, &self.layers[idx]) {
                (LayerKind::Conv2d { stride, .. }, LayerParams::Conv { weights, bias }) => {
                    x = layers::conv2d_forward(&x, weights, bias, stride)?.0;
                }
                (LayerKind::Pool { kernel, stride }, LayerParams::Stateless) => {
                    x = layers::maxpool_forward(&x, kernel, stride)?.0;
                }
                (
                    LayerKind::BatchNorm,
                    LayerParams::Norm { gamma, beta, running_mean, running_var },
                ) => {
                    x = layers::batchnorm_infer(&x, gamma, beta, running_mean, running_var)?;
                }
                (LayerKind::Relu, LayerParams::Stateless) => {
                    x = layers::relu_forward(&x);
                }
                (LayerKind::Dropout { .. }, LayerParams::Stateless) => {} // identity at inference
                (LayerKind::Full { .. }, LayerParams::Dense { weights, bias }) => {
                    x = layers::dense_forward(&x, weights, bias)?.0;
                }
                (LayerKind::Softmax, LayerParams::Stateless) => {
                    x = softmax(&x);
                }
                (kind, _) => {
                    return Err(Error::shape(
                        format!("layer {} ({})", idx + 1, kind.name()),
                        "parameters do not match architecture",
                    ))
                }
            }
        }
        Ok(x)
    }

    fn forward_inner(&mut self, input: &Tensor<T>, mode: Mode, dropout_key: StreamKey) -> Result<ForwardPass<T>> {
        let (h, w) = (self.arch.input_height, self.arch.input_width);
        if input.h() != h || input.w() != w || input.c() != 1 {
            return Err(Error::shape(
                "input",
                format!(
                    "expected {h}x{w}x1 input, got {}x{}x{}",
                    input.h(),
                    input.w(),
                    input.c()
                ),
            ));
        }

        let mut caches = Vec::with_capacity(self.arch.layers.len());
        let mut x = input.clone();
        let n_layers = self.arch.layers.len();
        let specs: Vec<LayerKind> = self.arch.layers.iter().map(|l| l.kind).collect();

        let mut logits = None;
        for idx in 0..n_layers {
            match (specs[idx], &mut self.layers[idx]) {
                (LayerKind::Conv2d { stride, .. }, LayerParams::Conv { weights, bias }) => {
                    let (out, cache) = layers::conv2d_forward(&x, weights, bias, stride)?;
                    caches.push(LayerCache::Conv(cache));
                    x = out;
                }
                (LayerKind::Pool { kernel, stride }, LayerParams::Stateless) => {
                    let (out, cache) = layers::maxpool_forward(&x, kernel, stride)?;
                    caches.push(LayerCache::Pool(cache));
                    x = out;
                }
                (
                    LayerKind::BatchNorm,
                    LayerParams::Norm { gamma, beta, running_mean, running_var },
                ) => match mode {
                    Mode::Train => {
                        let (out, cache) =
                            layers::batchnorm_train(&x, gamma, beta, running_mean, running_var)?;
                        caches.push(LayerCache::Norm(cache));
                        x = out;
                    }
                    Mode::Infer => {
                        let out = layers::batchnorm_infer(&x, gamma, beta, running_mean, running_var)?;
                        caches.push(LayerCache::Passthrough);
                        x = out;
                    }
                },
                (LayerKind::Relu, LayerParams::Stateless) => {
                    let out = layers::relu_forward(&x);
                    caches.push(LayerCache::Relu(x));
                    x = out;
                }
                (LayerKind::Dropout { p }, LayerParams::Stateless) => {
                    let (out, cache) = layers::dropout_forward(&x, p, mode, dropout_key.child(idx as u64))?;
                    caches.push(LayerCache::Dropout(cache));
                    x = out;
                }
                (LayerKind::Full { .. }, LayerParams::Dense { weights, bias }) => {
                    let (out, cache) = layers::dense_forward(&x, weights, bias)?;
                    caches.push(LayerCache::Dense(cache));
                    x = out;
                }
                (LayerKind::Softmax, LayerParams::Stateless) => {
                    logits = Some(x.clone());
                    x = softmax(&x);
                    caches.push(LayerCache::Passthrough);
                }
                (kind, _) => {
                    return Err(Error::shape(
                        format!("layer {} ({})", idx + 1, kind.name()),
                        "parameters do not match architecture",
                    ))
                }
            }
        }

        let logits = logits.ok_or_else(|| Error::shape("softmax", "architecture has no softmax head"))?;
        Ok(ForwardPass {
            logits,
            probs: x,
            caches,
        })
    }

    /// Backpropagate from the loss gradient at the logits. Returns gradients
    /// for every trainable array; the pass must come from `forward_train` on
    /// this same model state.
    pub fn backward(&self, pass: &ForwardPass<T>, dlogits: Tensor<T>) -> Gradients<T> {
        let mut grads: Vec<LayerGrads<T>> = Vec::with_capacity(self.layers.len());
        let mut dx = dlogits;
        // Walk layers in reverse; softmax is fused into the loss gradient.
        for (idx, cache) in pass.caches.iter().enumerate().rev() {
            let grad = match (cache, &self.layers[idx]) {
                (LayerCache::Conv(c), LayerParams::Conv { weights, .. }) => {
                    if idx == 0 {
                        // nothing consumes the gradient at the network input
                        let (dw, db) = layers::conv2d_backward_params(c, &dx);
                        LayerGrads::Conv { weights: dw, bias: db }
                    } else {
                        let (dinput, dw, db) = layers::conv2d_backward(c, weights, &dx);
                        dx = dinput;
                        LayerGrads::Conv { weights: dw, bias: db }
                    }
                }
                (LayerCache::Pool(c), _) => {
                    dx = layers::maxpool_backward(c, &dx);
                    LayerGrads::Stateless
                }
                (LayerCache::Norm(c), LayerParams::Norm { gamma, .. }) => {
                    // Shape-restore: dense gradients arrive flattened.
                    let (dinput, dgamma, dbeta) = layers::batchnorm_backward(c, gamma, &dx);
                    dx = dinput;
                    LayerGrads::Norm { gamma: dgamma, beta: dbeta }
                }
                (LayerCache::Relu(pre), _) => {
                    dx = layers::relu_backward(pre, &dx.reshaped(pre.shape()));
                    LayerGrads::Stateless
                }
                (LayerCache::Dropout(Some(c)), _) => {
                    dx = layers::dropout_backward(c, &dx);
                    LayerGrads::Stateless
                }
                (LayerCache::Dropout(None), _) => LayerGrads::Stateless,
                (LayerCache::Dense(c), LayerParams::Dense { weights, .. }) => {
                    let (n, features) = (dx.n(), dx.sample_len());
                    let flat = dx.reshaped([n, 1, 1, features]);
                    let (dinput, dw, db) = layers::dense_backward(c, weights, &flat);
                    dx = dinput;
                    LayerGrads::Dense { weights: dw, bias: db }
                }
                (LayerCache::Passthrough, _) => LayerGrads::Stateless,
                _ => unreachable!("cache/parameter mismatch"),
            };
            grads.push(grad);
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Write the model in the `.drnw` format (always 32-bit floats on disk).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.push(MODEL_VERSION);
        let arch_json = serde_json::to_vec(&self.arch)
            .map_err(|e| Error::format(format!("architecture serialization failed: {e}")))?;
        out.extend_from_slice(&(arch_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&arch_json);
        out.extend_from_slice(&self.init_seed.to_le_bytes());

        let write_arr = |out: &mut Vec<u8>, arr: &[T]| {
            out.extend_from_slice(&(arr.len() as u64).to_le_bytes());
            for &v in arr {
                out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            }
        };

        for layer in &self.layers {
            match layer {
                LayerParams::Conv { weights, bias } | LayerParams::Dense { weights, bias } => {
                    write_arr(&mut out, weights.data());
                    write_arr(&mut out, bias);
                }
                LayerParams::Norm { gamma, beta, running_mean, running_var } => {
                    write_arr(&mut out, gamma);
                    write_arr(&mut out, beta);
                    write_arr(&mut out, running_mean);
                    write_arr(&mut out, running_var);
                }
                LayerParams::Stateless => {}
            }
        }

        fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    /// Read a `.drnw` model file.
    pub fn load(path: &Path) -> Result<Model<T>> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;

        let take = |pos: &mut usize, len: usize| -> Result<&[u8]> {
            if *pos + len > bytes.len() {
                return Err(Error::format(format!("{}: truncated model file", path.display())));
            }
            let s = &bytes[*pos..*pos + len];
            *pos += len;
            Ok(s)
        };

        if take(&mut pos, 4)? != MODEL_MAGIC {
            return Err(Error::format(format!(
                "{}: bad magic, expected {:?}",
                path.display(),
                MODEL_MAGIC
            )));
        }
        let version = take(&mut pos, 1)?[0];
        if version != MODEL_VERSION {
            return Err(Error::format(format!("{}: unsupported version {version}", path.display())));
        }
        let json_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let arch: ArchitectureSpec = serde_json::from_slice(take(&mut pos, json_len)?)
            .map_err(|e| Error::format(format!("{}: architecture block: {e}", path.display())))?;
        let init_seed = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());

        let read_arr = |pos: &mut usize, expected: usize, what: &str| -> Result<Vec<T>> {
            let count = u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()) as usize;
            if count != expected {
                return Err(Error::format(format!(
                    "{}: {what} has {count} values, architecture expects {expected}",
                    path.display()
                )));
            }
            let raw = take(pos, count * 4)?;
            Ok(raw
                .chunks_exact(4)
                .map(|b| T::from_f64(f32::from_le_bytes(b.try_into().unwrap()) as f64))
                .collect())
        };

        let dims = param_dims(&arch)?;
        let mut layers = Vec::with_capacity(dims.len());
        for (idx, d) in dims.iter().enumerate() {
            let what = format!("layer {}", idx + 1);
            match *d {
                ParamDims::Conv { kh, kw, cin, cout } => {
                    let weights = read_arr(&mut pos, kh * kw * cin * cout, &what)?;
                    let bias = read_arr(&mut pos, cout, &what)?;
                    layers.push(LayerParams::Conv {
                        weights: Tensor::from_vec([kh, kw, cin, cout], weights),
                        bias,
                    });
                }
                ParamDims::Norm { c } => {
                    layers.push(LayerParams::Norm {
                        gamma: read_arr(&mut pos, c, &what)?,
                        beta: read_arr(&mut pos, c, &what)?,
                        running_mean: read_arr(&mut pos, c, &what)?,
                        running_var: read_arr(&mut pos, c, &what)?,
                    });
                }
                ParamDims::Dense { f_in, f_out } => {
                    let weights = read_arr(&mut pos, f_in * f_out, &what)?;
                    let bias = read_arr(&mut pos, f_out, &what)?;
                    layers.push(LayerParams::Dense {
                        weights: Tensor::from_vec([1, 1, f_in, f_out], weights),
                        bias,
                    });
                }
                ParamDims::None => layers.push(LayerParams::Stateless),
            }
        }
        if pos != bytes.len() {
            return Err(Error::format(format!(
                "{}: {} trailing bytes after parameters",
                path.display(),
                bytes.len() - pos
            )));
        }

        Ok(Model { arch, layers, init_seed })
    }
}
