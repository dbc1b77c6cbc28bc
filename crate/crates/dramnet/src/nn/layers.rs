//! Layer forward and backward passes.
//!
//! Convolution is cross-correlation (no kernel flip) with zero same-padding,
//! lowered to a GEMM through im2col. Pooling is max with first-occurrence
//! tie-breaking. Batch normalization reduces per channel over batch and
//! spatial positions with biased variance, ε=1e-5 and running-statistics
//! momentum 0.9. Dropout is inverted (survivors scaled by 1/(1−p)) with a
//! keyed deterministic mask.

use crate::error::{Error, Result};
use crate::rng::StreamKey;

use super::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.9;

// ---------------------------------------------------------------------------
// convolution

pub struct Conv2dCache<T> {
    /// im2col matrix, (n·oh·ow) × (kh·kw·cin).
    col: Vec<T>,
    input_shape: [usize; 4],
    out_shape: [usize; 4],
    kernel: (usize, usize),
    stride: usize,
    pad: (usize, usize),
}

fn conv_out_dims(h: usize, w: usize, stride: usize) -> (usize, usize) {
    (h.div_ceil(stride), w.div_ceil(stride))
}

fn same_pad(input: usize, out: usize, kernel: usize, stride: usize) -> usize {
    let needed = (out - 1) * stride + kernel;
    (needed.saturating_sub(input)) / 2
}

/// Cross-correlation with zero same-padding. `weights` has shape
/// `[kh, kw, cin, cout]`, `bias` one value per output channel.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    stride: usize,
) -> Result<(Tensor<T>, Conv2dCache<T>)> {
    let [n, h, w, cin] = input.shape();
    let [kh, kw, wcin, cout] = weights.shape();
    if wcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels but weights expect {wcin}"),
        ));
    }
    if bias.len() != cout {
        return Err(Error::shape("conv2d", format!("bias len {} != {cout} kernels", bias.len())));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be >= 1"));
    }

    let (oh, ow) = conv_out_dims(h, w, stride);
    let pad_top = same_pad(h, oh, kh, stride);
    let pad_left = same_pad(w, ow, kw, stride);

    let m = n * oh * ow;
    let k = kh * kw * cin;
    let mut col = vec![T::ZERO; m * k];

    let x = input.data();
    for img in 0..n {
        let x_img = &x[img * h * w * cin..(img + 1) * h * w * cin];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut col[((img * oh + oy) * ow + ox) * k..((img * oh + oy) * ow + ox + 1) * k];
                for dy in 0..kh {
                    let iy = (oy * stride + dy) as isize - pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &x_img[iy as usize * w * cin..(iy as usize + 1) * w * cin];
                    for dx in 0..kw {
                        let ix = (ox * stride + dx) as isize - pad_left as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = &mut row[(dy * kw + dx) * cin..(dy * kw + dx + 1) * cin];
                        dst.copy_from_slice(&src_row[ix as usize * cin..(ix as usize + 1) * cin]);
                    }
                }
            }
        }
    }

    let mut out = vec![T::ZERO; m * cout];
    T::gemm(m, k, cout, &col, weights.data(), T::ZERO, &mut out);
    for row in out.chunks_exact_mut(cout) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }

    let out_shape = [n, oh, ow, cout];
    Ok((
        Tensor::from_vec(out_shape, out),
        Conv2dCache {
            col,
            input_shape: input.shape(),
            out_shape,
            kernel: (kh, kw),
            stride,
            pad: (pad_top, pad_left),
        },
    ))
}

/// Returns (d_input, d_weights, d_bias).
pub fn conv2d_backward<T: Scalar>(
    cache: &Conv2dCache<T>,
    weights: &Tensor<T>,
    dout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let [n, h, w, cin] = cache.input_shape;
    let [_, oh, ow, cout] = cache.out_shape;
    assert_eq!(
        dout.len(),
        cache.out_shape.iter().product::<usize>(),
        "upstream gradient volume"
    );
    let (kh, kw) = cache.kernel;
    let m = n * oh * ow;
    let k = kh * kw * cin;

    // d_bias: column sums of the output gradient.
    let mut dbias = vec![T::ZERO; cout];
    for row in dout.data().chunks_exact(cout) {
        for (b, &g) in dbias.iter_mut().zip(row) {
            *b += g;
        }
    }

    // d_weights = colᵀ · dout
    let mut dw = vec![T::ZERO; k * cout];
    T::gemm_tn(k, m, cout, &cache.col, dout.data(), &mut dw);

    // d_col = dout · weightsᵀ, then scatter back through the im2col mapping.
    let mut dcol = vec![T::ZERO; m * k];
    T::gemm_nt(m, cout, k, dout.data(), weights.data(), &mut dcol);

    let mut dx = vec![T::ZERO; n * h * w * cin];
    let (pad_top, pad_left) = cache.pad;
    for img in 0..n {
        let dx_img = &mut dx[img * h * w * cin..(img + 1) * h * w * cin];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &dcol[((img * oh + oy) * ow + ox) * k..((img * oh + oy) * ow + ox + 1) * k];
                for dy in 0..kh {
                    let iy = (oy * cache.stride + dy) as isize - pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dx_img[iy as usize * w * cin..(iy as usize + 1) * w * cin];
                    for dx_off in 0..kw {
                        let ix = (ox * cache.stride + dx_off) as isize - pad_left as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = &row[(dy * kw + dx_off) * cin..(dy * kw + dx_off + 1) * cin];
                        let dst = &mut dst_row[ix as usize * cin..(ix as usize + 1) * cin];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    (
        Tensor::from_vec(cache.input_shape, dx),
        Tensor::from_vec([kh, kw, cin, cout], dw),
        dbias,
    )
}

// ---------------------------------------------------------------------------
// max pooling

pub struct MaxPoolCache {
    input_shape: [usize; 4],
    /// Flat input index of each window maximum.
    argmax: Vec<u32>,
}

pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: (usize, usize),
    stride: usize,
) -> Result<(Tensor<T>, MaxPoolCache)> {
    let [n, h, w, c] = input.shape();
    let (kh, kw) = kernel;
    if h < kh || w < kw {
        return Err(Error::shape(
            "pool",
            format!("window {kh}x{kw} does not fit input {h}x{w}"),
        ));
    }
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let mut out = vec![T::ZERO; n * oh * ow * c];
    let mut argmax = vec![0u32; n * oh * ow * c];
    let x = input.data();

    // walk window cells in scan order over whole channel slices; strict >
    // keeps the first occurrence on ties
    for img in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let out_base = ((img * oh + oy) * ow + ox) * c;
                let best = &mut out[out_base..out_base + c];
                let args = &mut argmax[out_base..out_base + c];
                let first = ((img * h + oy * stride) * w + ox * stride) * c;
                best.copy_from_slice(&x[first..first + c]);
                for (a, ch) in args.iter_mut().zip(0u32..) {
                    *a = first as u32 + ch;
                }
                for dy in 0..kh {
                    let iy = oy * stride + dy;
                    for dx in 0..kw {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let ix = ox * stride + dx;
                        let base = ((img * h + iy) * w + ix) * c;
                        let cand = &x[base..base + c];
                        for ch in 0..c {
                            if cand[ch] > best[ch] {
                                best[ch] = cand[ch];
                                args[ch] = (base + ch) as u32;
                            }
                        }
                    }
                }
            }
        }
    }

    Ok((
        Tensor::from_vec([n, oh, ow, c], out),
        MaxPoolCache {
            input_shape: input.shape(),
            argmax,
        },
    ))
}

pub fn maxpool_backward<T: Scalar>(cache: &MaxPoolCache, dout: &Tensor<T>) -> Tensor<T> {
    assert_eq!(dout.len(), cache.argmax.len(), "upstream gradient volume");
    let mut dx = Tensor::zeros(cache.input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(dout.data()) {
        d[idx as usize] += g;
    }
    dx
}

// ---------------------------------------------------------------------------
// batch normalization

pub struct BatchNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    channels: usize,
}

fn check_bn_params<T>(c: usize, gamma: &[T], beta: &[T]) -> Result<()> {
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "batchnorm",
            format!("expected {c} channel parameters, got γ={} β={}", gamma.len(), beta.len()),
        ));
    }
    Ok(())
}

/// Inference-mode batch normalization using frozen running statistics.
pub fn batchnorm_infer<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> Result<Tensor<T>> {
    let c = input.c();
    check_bn_params(c, gamma, beta)?;
    let eps = T::from_f64(BATCHNORM_EPS);
    let scale: Vec<T> = (0..c)
        .map(|ch| gamma[ch] / (running_var[ch] + eps).sqrt())
        .collect();
    let mut out = vec![T::ZERO; input.len()];
    for (orow, xrow) in out.chunks_exact_mut(c).zip(input.data().chunks_exact(c)) {
        for ch in 0..c {
            orow[ch] = (xrow[ch] - running_mean[ch]) * scale[ch] + beta[ch];
        }
    }
    Ok(Tensor::from_vec(input.shape(), out))
}

/// Training-mode batch normalization: per-channel over batch and spatial
/// positions with biased variance. Updates the running statistics in place
/// with momentum 0.9.
pub fn batchnorm_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let [n, h, w, c] = input.shape();
    check_bn_params(c, gamma, beta)?;
    if n < 2 {
        return Err(Error::Contract(format!(
            "batchnorm in training mode needs a batch of >= 2, got {n}"
        )));
    }
    let eps = T::from_f64(BATCHNORM_EPS);
    let x = input.data();
    let m = n * h * w;

    // single pass over the batch accumulating Σx and Σx² in f64 per channel;
    // the f64 headroom keeps E[x²] − mean² well conditioned
    let mut sum = vec![0.0f64; c];
    let mut sumsq = vec![0.0f64; c];
    for xrow in x.chunks_exact(c) {
        for ch in 0..c {
            let v = xrow[ch].to_f64();
            sum[ch] += v;
            sumsq[ch] += v * v;
        }
    }
    let mut mean = vec![T::ZERO; c];
    let mut var = vec![T::ZERO; c];
    for ch in 0..c {
        let mu = sum[ch] / m as f64;
        mean[ch] = T::from_f64(mu);
        var[ch] = T::from_f64((sumsq[ch] / m as f64 - mu * mu).max(0.0));
    }

    let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();

    let momentum = T::from_f64(BATCHNORM_MOMENTUM);
    let rest = T::ONE - momentum;
    for ch in 0..c {
        running_mean[ch] = momentum * running_mean[ch] + rest * mean[ch];
        running_var[ch] = momentum * running_var[ch] + rest * var[ch];
    }

    let mut xhat = vec![T::ZERO; x.len()];
    let mut out = vec![T::ZERO; x.len()];
    for ((orow, hrow), xrow) in out
        .chunks_exact_mut(c)
        .zip(xhat.chunks_exact_mut(c))
        .zip(x.chunks_exact(c))
    {
        for ch in 0..c {
            let xh = (xrow[ch] - mean[ch]) * inv_std[ch];
            hrow[ch] = xh;
            orow[ch] = gamma[ch] * xh + beta[ch];
        }
    }

    Ok((
        Tensor::from_vec(input.shape(), out),
        BatchNormCache {
            xhat,
            inv_std,
            channels: c,
        },
    ))
}

/// Returns (d_input, d_gamma, d_beta).
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    dout: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let c = cache.channels;
    let m = dout.len() / c;
    let m_t = T::from_f64(m as f64);
    let dy = dout.data();

    let mut dbeta = vec![T::ZERO; c];
    let mut dgamma = vec![T::ZERO; c];
    for (drow, hrow) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for ch in 0..c {
            dbeta[ch] += drow[ch];
            dgamma[ch] += drow[ch] * hrow[ch];
        }
    }

    // dx = γ·inv_std/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
    let scale: Vec<T> = (0..c)
        .map(|ch| gamma[ch] * cache.inv_std[ch] / m_t)
        .collect();
    let mut dx = vec![T::ZERO; dy.len()];
    for ((xrow, drow), hrow) in dx
        .chunks_exact_mut(c)
        .zip(dy.chunks_exact(c))
        .zip(cache.xhat.chunks_exact(c))
    {
        for ch in 0..c {
            let term = m_t * drow[ch] - dbeta[ch] - hrow[ch] * dgamma[ch];
            xrow[ch] = scale[ch] * term;
        }
    }

    (
        Tensor::from_vec(dout.shape(), dx),
        dgamma,
        dbeta,
    )
}

// ---------------------------------------------------------------------------
// relu

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.maximum(T::ZERO))
}

pub fn relu_backward<T: Scalar>(input: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&x, &g)| if x > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::from_vec(dout.shape(), data)
}

// ---------------------------------------------------------------------------
// dropout

pub struct DropoutCache {
    /// Survivor mask, one bool per element.
    pub mask: Vec<bool>,
    pub p: f64,
}

/// Inverted dropout with a deterministic keyed mask. `p` is the drop
/// probability; inference mode is the identity.
pub fn dropout_forward<T: Scalar>(
    input: &Tensor<T>,
    p: f64,
    mode: Mode,
    key: StreamKey,
) -> Result<(Tensor<T>, Option<DropoutCache>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::param(format!("dropout probability must be in [0,1), got {p}")));
    }
    match mode {
        Mode::Infer => Ok((input.clone(), None)),
        Mode::Train => {
            let scale = T::from_f64(1.0 / (1.0 - p));
            let mut mask = vec![false; input.len()];
            let data = input
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let keep = key.uniform_at(i as u64) >= p;
                    mask[i] = keep;
                    if keep {
                        v * scale
                    } else {
                        T::ZERO
                    }
                })
                .collect();
            Ok((Tensor::from_vec(input.shape(), data), Some(DropoutCache { mask, p })))
        }
    }
}

pub fn dropout_backward<T: Scalar>(cache: &DropoutCache, dout: &Tensor<T>) -> Tensor<T> {
    let scale = T::from_f64(1.0 / (1.0 - cache.p));
    let data = dout
        .data()
        .iter()
        .zip(&cache.mask)
        .map(|(&g, &keep)| if keep { g * scale } else { T::ZERO })
        .collect();
    Tensor::from_vec(dout.shape(), data)
}

// ---------------------------------------------------------------------------
// dense

pub struct DenseCache<T> {
    /// Flattened input, n × f_in.
    input: Vec<T>,
    n: usize,
    f_in: usize,
}

/// Affine map. `weights` has shape `[1, 1, f_in, f_out]`; the input is
/// flattened per sample.
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
) -> Result<(Tensor<T>, DenseCache<T>)> {
    let n = input.n();
    let f_in = input.sample_len();
    let [_, _, wf_in, f_out] = weights.shape();
    if wf_in != f_in {
        return Err(Error::shape(
            "full",
            format!("flattened input length {f_in} does not match weight rows {wf_in}"),
        ));
    }
    if bias.len() != f_out {
        return Err(Error::shape("full", format!("bias len {} != {f_out} units", bias.len())));
    }

    let mut out = vec![T::ZERO; n * f_out];
    T::gemm(n, f_in, f_out, input.data(), weights.data(), T::ZERO, &mut out);
    for row in out.chunks_exact_mut(f_out) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }

    Ok((
        Tensor::from_rows(n, f_out, out),
        DenseCache {
            input: input.data().to_vec(),
            n,
            f_in,
        },
    ))
}

/// Returns (d_input flattened as [n,1,1,f_in], d_weights, d_bias).
pub fn dense_backward<T: Scalar>(
    cache: &DenseCache<T>,
    weights: &Tensor<T>,
    dout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let [_, _, f_in, f_out] = weights.shape();
    let n = cache.n;
    assert_eq!(cache.f_in, f_in);
    assert_eq!(dout.sample_len(), f_out);

    let mut dbias = vec![T::ZERO; f_out];
    for row in dout.data().chunks_exact(f_out) {
        for (b, &g) in dbias.iter_mut().zip(row) {
            *b += g;
        }
    }

    let mut dw = vec![T::ZERO; f_in * f_out];
    T::gemm_tn(f_in, n, f_out, &cache.input, dout.data(), &mut dw);

    let mut dx = vec![T::ZERO; n * f_in];
    T::gemm_nt(n, f_out, f_in, dout.data(), weights.data(), &mut dx);

    (
        Tensor::from_rows(n, f_in, dx),
        Tensor::from_vec([1, 1, f_in, f_out], dw),
        dbias,
    )
}

/// Weight/bias gradients only, for layers whose input gradient is not needed
/// (the first layer of a network).
pub fn conv2d_backward_params<T: Scalar>(
    cache: &Conv2dCache<T>,
    dout: &Tensor<T>,
) -> (Tensor<T>, Vec<T>) {
    let [_, _, _, cin] = cache.input_shape;
    let [n, oh, ow, cout] = cache.out_shape;
    let (kh, kw) = cache.kernel;
    let m = n * oh * ow;
    let k = kh * kw * cin;

    let mut dbias = vec![T::ZERO; cout];
    for row in dout.data().chunks_exact(cout) {
        for (b, &g) in dbias.iter_mut().zip(row) {
            *b += g;
        }
    }
    let mut dw = vec![T::ZERO; k * cout];
    T::gemm_tn(k, m, cout, &cache.col, dout.data(), &mut dw);
    (Tensor::from_vec([kh, kw, cin, cout], dw), dbias)
}
