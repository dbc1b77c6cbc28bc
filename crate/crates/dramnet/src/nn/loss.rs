//! Softmax, cross-entropy loss and the L2 weight penalty.

use super::tensor::{Scalar, Tensor};

/// Clamp applied to predicted probabilities before the log.
pub const LOG_GUARD: f64 = 1e-12;

/// Row-wise softmax with max-subtraction; outputs are strictly positive and
/// sum to 1 per sample.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let classes = logits.sample_len();
    let mut out = vec![T::ZERO; logits.len()];
    for (orow, zrow) in out.chunks_exact_mut(classes).zip(logits.data().chunks_exact(classes)) {
        let mut max = zrow[0];
        for &z in &zrow[1..] {
            max = max.maximum(z);
        }
        let mut sum = T::ZERO;
        for (o, &z) in orow.iter_mut().zip(zrow) {
            let e = (z - max).exp();
            *o = e;
            sum += e;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    Tensor::from_rows(logits.n(), classes, out)
}

/// Mean negative log-likelihood of the true classes:
/// `−(1/N)·Σ ln p[true]`, with probabilities clamped at [`LOG_GUARD`].
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> T {
    let classes = probs.sample_len();
    let n = probs.n();
    assert_eq!(labels.len(), n, "one label per sample");
    debug_assert!(probs
        .data()
        .chunks_exact(classes)
        .all(|row| (row.iter().fold(T::ZERO, |a, &b| a + b).to_f64() - 1.0).abs() < 1e-6));
    let guard = T::from_f64(LOG_GUARD);
    let mut sum = T::ZERO;
    for (row, &label) in probs.data().chunks_exact(classes).zip(labels) {
        assert!(label < classes, "label {label} out of range for {classes} classes");
        sum += row[label].maximum(guard).ln();
    }
    -sum / T::from_f64(n as f64)
}

/// L2 penalty `λ·Σω²` over the given weight arrays (conv/dense weights only —
/// never biases or normalization parameters).
pub fn l2_penalty<'a, T: Scalar>(weights: impl IntoIterator<Item = &'a [T]>, lambda: f64) -> T {
    if lambda == 0.0 {
        return T::ZERO;
    }
    let mut sum = T::ZERO;
    for arr in weights {
        sum += sum_squares(arr);
    }
    T::from_f64(lambda) * sum
}

/// Σx² with eight fixed partial accumulators — a deterministic reassociation
/// that lets the reduction vectorize.
fn sum_squares<T: Scalar>(arr: &[T]) -> T {
    let mut acc = [T::ZERO; 8];
    let mut chunks = arr.chunks_exact(8);
    for chunk in &mut chunks {
        for (a, &w) in acc.iter_mut().zip(chunk) {
            *a += w * w;
        }
    }
    let mut sum = T::ZERO;
    for &w in chunks.remainder() {
        sum += w * w;
    }
    for a in acc {
        sum += a;
    }
    sum
}

/// Total loss: cross-entropy data term plus L2 penalty.
pub fn loss<'a, T: Scalar>(
    probs: &Tensor<T>,
    labels: &[usize],
    weights: impl IntoIterator<Item = &'a [T]>,
    lambda: f64,
) -> T {
    cross_entropy(probs, labels) + l2_penalty(weights, lambda)
}

/// Gradient of the mean cross-entropy at the logits (softmax fused):
/// `(p − onehot)/N`. The L2 penalty's gradient (`2λω`) is applied directly to
/// weight gradients by the training step.
pub fn loss_grad_logits<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Tensor<T> {
    let classes = probs.sample_len();
    let n = probs.n();
    let inv_n = T::ONE / T::from_f64(n as f64);
    let mut grad = probs.data().to_vec();
    for (i, row) in grad.chunks_exact_mut(classes).enumerate() {
        row[labels[i]] -= T::ONE;
        for g in row.iter_mut() {
            *g *= inv_n;
        }
    }
    Tensor::from_rows(n, classes, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let logits = Tensor::from_rows(1, 3, vec![2.5f64, 2.5, 2.5]);
        let p = softmax(&logits);
        for &v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariant_bitwise() {
        // dyadic logits + dyadic shift keep the additions exact, so
        // max-subtraction restores the original differences bit-for-bit
        let logits = Tensor::from_rows(1, 4, vec![0.5f64, -1.25, 2.25, 0.0]);
        let shifted = logits.map(|v| v + 64.0);
        assert_eq!(softmax(&logits), softmax(&shifted));
    }

    #[test]
    fn softmax_shift_invariant_to_rounding() {
        let logits = Tensor::from_rows(1, 4, vec![0.3f64, -1.2, 2.2, 0.9]);
        let shifted = logits.map(|v| v + 137.13);
        for (a, b) in softmax(&logits).data().iter().zip(softmax(&shifted).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_hand_case() {
        let logits = Tensor::from_rows(1, 3, vec![1.0f64, 2.0, 3.0]);
        let p = softmax(&logits);
        let expected = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for (a, b) in p.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let logits = Tensor::from_rows(3, 5, (0..15).map(|i| (i as f64) * 0.7 - 4.0).collect());
        let p = softmax(&logits);
        for row in p.data().chunks_exact(5) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn perfect_prediction_zero_loss() {
        let probs = Tensor::from_rows(2, 3, vec![1.0f64, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let l: f64 = loss(&probs, &[0, 1], std::iter::empty::<&[f64]>(), 0.0);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn uniform_probabilities_loss_is_ln3() {
        let third = 1.0f64 / 3.0;
        let probs = Tensor::from_rows(4, 3, vec![third; 12]);
        let l: f64 = cross_entropy(&probs, &[0, 1, 2, 0]);
        assert!((l - 3.0f64.ln()).abs() < 1e-12, "{l}");
    }

    #[test]
    fn l2_penalty_hand_case() {
        let w: Vec<f64> = vec![3.0, 4.0];
        let p = l2_penalty([w.as_slice()], 0.1);
        assert!((p - 2.5).abs() < 1e-15); // 0.1 · (9+16)
    }

    #[test]
    fn grad_at_logits_is_probs_minus_onehot_over_n() {
        let probs = Tensor::from_rows(2, 2, vec![0.75f64, 0.25, 0.4, 0.6]);
        let g = loss_grad_logits(&probs, &[0, 1]);
        let expected = [(0.75 - 1.0) / 2.0, 0.25 / 2.0, 0.4 / 2.0, (0.6 - 1.0) / 2.0];
        for (a, b) in g.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
