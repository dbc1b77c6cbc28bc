//! Row-major GEMM facade over `matrixmultiply`.
//!
//! Three orientations cover every product in the forward/backward passes:
//! `gemm` (A·B), `gemm_tn` (Aᵀ·B, weight gradients) and `gemm_nt` (A·Bᵀ,
//! input gradients). The transposed orientations pick between a strided
//! kernel call, a cheap explicit transpose, or evaluating Cᵀ = Bᵀ·Aᵀ,
//! depending on which operand is small — huge column strides make the
//! kernel's packing pathologically slow otherwise. Path choice is a pure
//! function of the shapes, and parallel bands write disjoint output tiles
//! with a fixed per-element reduction order, so results are deterministic
//! for any thread count.

use rayon::prelude::*;

/// Minimum per-band output elements before splitting is worthwhile.
const MIN_BAND_ELEMS: usize = 64 * 1024;

/// Operand size (elements) below which an explicit transpose beats a strided
/// kernel call.
const TRANSPOSE_LIMIT: usize = 1 << 23;

#[derive(Clone, Copy)]
struct ConstPtr<T>(*const T);
unsafe impl<T> Send for ConstPtr<T> {}
unsafe impl<T> Sync for ConstPtr<T> {}

#[derive(Clone, Copy)]
struct MutPtr<T>(*mut T);
unsafe impl<T> Send for MutPtr<T> {}
unsafe impl<T> Sync for MutPtr<T> {}

/// Band geometry: (row0, rows, col0, cols) of the output tile.
type Band = (usize, usize, usize, usize);

fn bands(m: usize, n: usize) -> Vec<Band> {
    let threads = rayon::current_num_threads();
    if threads <= 1 || m * n <= MIN_BAND_ELEMS {
        return vec![(0, m, 0, n)];
    }
    if m >= n {
        let step = m.div_ceil(threads).max(MIN_BAND_ELEMS / n.max(1)).max(1);
        (0..m).step_by(step).map(|r0| (r0, step.min(m - r0), 0, n)).collect()
    } else {
        let step = n.div_ceil(threads).max(MIN_BAND_ELEMS / m.max(1)).max(1);
        (0..n).step_by(step).map(|c0| (0, m, c0, step.min(n - c0))).collect()
    }
}

fn transpose<T: Copy>(rows: usize, cols: usize, src: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * cols);
    for j in 0..cols {
        out.extend((0..rows).map(|i| src[i * cols + j]));
    }
    out
}

// ---------------------------------------------------------------------------
// Hand kernels for skinny shapes. The batch dimension of a training step is
// 16, which the packing GEMM handles poorly when the other two dimensions are
// large (dense layers stream a 100 MB weight matrix). These keep the small
// operand resident in cache and stream the big one exactly once, with a fixed
// per-element accumulation order.

/// Largest "skinny" dimension the hand kernels accept.
const SKINNY: usize = 32;
/// Minimum volume of the large operand before the hand kernels pay off.
const SKINNY_MIN_BULK: usize = 1 << 18;

#[inline(always)]
fn axpy_f32(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

#[inline(always)]
fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    // eight fixed partial lanes: deterministic and vectorizable
    let mut acc = [0.0f32; 8];
    let mut ai = a.chunks_exact(8);
    let mut bi = b.chunks_exact(8);
    for (ca, cb) in (&mut ai).zip(&mut bi) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut sum = 0.0;
    for (&x, &y) in ai.remainder().iter().zip(bi.remainder()) {
        sum += x * y;
    }
    acc.iter().sum::<f32>() + sum
}

/// Plain product with few rows: stream B once, keep C resident.
fn skinny_gemm_f32(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
    if beta == 0.0 {
        c.fill(0.0);
    } else if beta != 1.0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
    }
    for l in 0..k {
        let b_row = &b[l * n..(l + 1) * n];
        for i in 0..m {
            let alpha = a[i * k + l];
            if alpha != 0.0 {
                axpy_f32(alpha, b_row, &mut c[i * n..(i + 1) * n]);
            }
        }
    }
}

/// `c = a·bᵀ` with few rows of A: one dot product per output element,
/// streaming the stored-n×k B once while A stays cached.
fn skinny_nt_f32(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for j in 0..n {
        let b_row = &b[j * k..(j + 1) * k];
        for i in 0..m {
            c[i * n + j] = dot_f32(&a[i * k..(i + 1) * k], b_row);
        }
    }
}

/// `c = aᵀ·b` with a short reduction (a stored k×m): each output row is a
/// k-term combination of B's rows, written exactly once.
fn skinny_tn_f32(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for row in 0..m {
        let out = &mut c[row * n..(row + 1) * n];
        out.fill(0.0);
        for l in 0..k {
            let alpha = a[l * m + row];
            if alpha != 0.0 {
                axpy_f32(alpha, &b[l * n..(l + 1) * n], out);
            }
        }
    }
}

macro_rules! impl_gemm {
    ($ty:ty, $mm:path, $gemm:ident, $gemm_tn:ident, $gemm_nt:ident) => {
        /// `c = a·b + beta·c`; `a` is m×k, `b` is k×n, `c` is m×n, all row-major.
        pub fn $gemm(m: usize, k: usize, n: usize, a: &[$ty], b: &[$ty], beta: $ty, c: &mut [$ty]) {
            assert_eq!(a.len(), m * k, "lhs size");
            assert_eq!(b.len(), k * n, "rhs size");
            assert_eq!(c.len(), m * n, "out size");
            if m == 0 || n == 0 {
                return;
            }
            let (ap, bp, cp) = (ConstPtr(a.as_ptr()), ConstPtr(b.as_ptr()), MutPtr(c.as_mut_ptr()));
            let run = |(r0, rows, c0, cols): Band| {
                let (ap, bp, cp) = (ap, bp, cp);
                unsafe {
                    $mm(
                        rows, k, cols, 1.0,
                        ap.0.add(r0 * k), k as isize, 1,
                        bp.0.add(c0), n as isize, 1,
                        beta,
                        cp.0.add(r0 * n + c0), n as isize, 1,
                    )
                }
            };
            let bands = bands(m, n);
            if bands.len() == 1 {
                run(bands[0]);
            } else {
                bands.into_par_iter().for_each(run);
            }
        }

        /// `c = aᵀ·b`; `a` is stored k×m row-major, `b` is k×n, `c` is m×n.
        pub fn $gemm_tn(m: usize, k: usize, n: usize, a: &[$ty], b: &[$ty], c: &mut [$ty]) {
            assert_eq!(a.len(), k * m, "lhs size");
            assert_eq!(b.len(), k * n, "rhs size");
            assert_eq!(c.len(), m * n, "out size");
            if m == 0 || n == 0 {
                return;
            }
            // A lives transposed; when it is small, copying it into row-major
            // order is far cheaper than strided packing inside the kernel.
            if m * k <= TRANSPOSE_LIMIT {
                let at = transpose(k, m, a);
                return $gemm(m, k, n, &at, b, 0.0, c);
            }
            let (ap, bp, cp) = (ConstPtr(a.as_ptr()), ConstPtr(b.as_ptr()), MutPtr(c.as_mut_ptr()));
            let run = |(r0, rows, c0, cols): Band| {
                let (ap, bp, cp) = (ap, bp, cp);
                unsafe {
                    $mm(
                        rows, k, cols, 1.0,
                        ap.0.add(r0), 1, m as isize,
                        bp.0.add(c0), n as isize, 1,
                        0.0,
                        cp.0.add(r0 * n + c0), n as isize, 1,
                    )
                }
            };
            let bands = bands(m, n);
            if bands.len() == 1 {
                run(bands[0]);
            } else {
                bands.into_par_iter().for_each(run);
            }
        }

        /// `c = a·bᵀ`; `a` is m×k, `b` is stored n×k row-major, `c` is m×n.
        pub fn $gemm_nt(m: usize, k: usize, n: usize, a: &[$ty], b: &[$ty], c: &mut [$ty]) {
            assert_eq!(a.len(), m * k, "lhs size");
            assert_eq!(b.len(), n * k, "rhs size");
            assert_eq!(c.len(), m * n, "out size");
            if m == 0 || n == 0 {
                return;
            }
            if n * k <= TRANSPOSE_LIMIT {
                let bt = transpose(n, k, b);
                return $gemm(m, k, n, a, &bt, 0.0, c);
            }
            if m <= 64 {
                // Cᵀ = B·Aᵀ keeps the big operand in its native layout; the
                // small Aᵀ and the strided C writes are cheap.
                let (ap, bp, cp) = (ConstPtr(a.as_ptr()), ConstPtr(b.as_ptr()), MutPtr(c.as_mut_ptr()));
                let run = |(r0, rows, c0, cols): Band| {
                    // rows/cols of Cᵀ: r0 indexes n, c0 indexes m
                    let (ap, bp, cp) = (ap, bp, cp);
                    unsafe {
                        $mm(
                            rows, k, cols, 1.0,
                            bp.0.add(r0 * k), k as isize, 1,
                            ap.0.add(c0 * k), 1, k as isize,
                            0.0,
                            cp.0.add(c0 * n + r0), 1, n as isize,
                        )
                    }
                };
                let bands = bands(n, m);
                if bands.len() == 1 {
                    run(bands[0]);
                } else {
                    bands.into_par_iter().for_each(run);
                }
                return;
            }
            let (ap, bp, cp) = (ConstPtr(a.as_ptr()), ConstPtr(b.as_ptr()), MutPtr(c.as_mut_ptr()));
            let run = |(r0, rows, c0, cols): Band| {
                let (ap, bp, cp) = (ap, bp, cp);
                unsafe {
                    $mm(
                        rows, k, cols, 1.0,
                        ap.0.add(r0 * k), k as isize, 1,
                        bp.0.add(c0 * k), 1, k as isize,
                        0.0,
                        cp.0.add(r0 * n + c0), n as isize, 1,
                    )
                }
            };
            let bands = bands(m, n);
            if bands.len() == 1 {
                run(bands[0]);
            } else {
                bands.into_par_iter().for_each(run);
            }
        }
    };
}

impl_gemm!(f32, matrixmultiply::sgemm, gemm_f32_core, gemm_tn_f32_core, gemm_nt_f32_core);
impl_gemm!(f64, matrixmultiply::dgemm, gemm_f64, gemm_tn_f64, gemm_nt_f64);

/// `c = a·b + beta·c`; `a` is m×k, `b` is k×n, `c` is m×n, all row-major.
pub fn gemm_f32(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
    if m <= SKINNY && k * n >= SKINNY_MIN_BULK {
        assert_eq!(a.len(), m * k, "lhs size");
        assert_eq!(b.len(), k * n, "rhs size");
        assert_eq!(c.len(), m * n, "out size");
        return skinny_gemm_f32(m, k, n, a, b, beta, c);
    }
    gemm_f32_core(m, k, n, a, b, beta, c);
}

/// `c = aᵀ·b`; `a` is stored k×m row-major, `b` is k×n, `c` is m×n.
pub fn gemm_tn_f32(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    if k <= SKINNY && m * n >= SKINNY_MIN_BULK {
        assert_eq!(a.len(), k * m, "lhs size");
        assert_eq!(b.len(), k * n, "rhs size");
        assert_eq!(c.len(), m * n, "out size");
        return skinny_tn_f32(m, k, n, a, b, c);
    }
    gemm_tn_f32_core(m, k, n, a, b, c);
}

/// `c = a·bᵀ`; `a` is m×k, `b` is stored n×k row-major, `c` is m×n.
pub fn gemm_nt_f32(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    if m <= SKINNY && n * k >= SKINNY_MIN_BULK {
        assert_eq!(a.len(), m * k, "lhs size");
        assert_eq!(b.len(), n * k, "rhs size");
        assert_eq!(c.len(), m * n, "out size");
        return skinny_nt_f32(m, k, n, a, b, c);
    }
    gemm_nt_f32_core(m, k, n, a, b, c);
}
