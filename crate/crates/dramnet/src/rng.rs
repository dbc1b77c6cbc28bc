//! Counter-based deterministic random streams.
//!
//! Every random draw in this crate is a pure function of a key and a counter,
//! so per-cell and per-element draws are order-independent: any parallel
//! schedule produces bit-identical output. Keys form a tree — a stream key is
//! derived from a seed plus a chain of tags, and values are read at arbitrary
//! indices without generating the ones before.
//!
//! The mixer is the SplitMix64 finalizer. Not cryptographically secure; never
//! use for secrets.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a bijective avalanche permutation of u64.
#[inline(always)]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A keyed, seek-able random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(u64);

impl StreamKey {
    pub const fn new(seed: u64) -> Self {
        StreamKey(seed)
    }

    /// Derive a child stream. Distinct tags give statistically independent streams.
    #[inline]
    pub fn child(self, tag: u64) -> Self {
        StreamKey(mix64(self.0 ^ mix64(tag)))
    }

    /// Raw key value (recorded in manifests so streams can be re-derived).
    pub fn value(self) -> u64 {
        self.0
    }

    /// The `index`-th value of this stream.
    #[inline(always)]
    pub fn u64_at(self, index: u64) -> u64 {
        mix64(self.0 ^ mix64(index.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    #[inline(always)]
    pub fn uniform_at(self, index: u64) -> f64 {
        (self.u64_at(index) >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Standard normal draw via the inverse CDF.
    #[inline]
    pub fn normal_at(self, index: u64) -> f64 {
        // uniform_at can return exactly 0; nudge into the open interval.
        let u = self.uniform_at(index).max(1e-300);
        inverse_normal_cdf(u)
    }

    /// A sequential view of this stream, for shuffles and other inherently
    /// ordered consumers.
    pub fn sequence(self) -> SeqRng {
        SeqRng {
            key: self,
            counter: 0,
        }
    }
}

/// Sequential wrapper over a [`StreamKey`].
#[derive(Debug, Clone)]
pub struct SeqRng {
    key: StreamKey,
    counter: u64,
}

impl SeqRng {
    pub fn next_u64(&mut self) -> u64 {
        let v = self.key.u64_at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform value in [0, bound). `bound` must be non-zero.
    pub fn next_below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "bound must be non-zero");
        (self.next_u64() % bound as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.next_below(i + 1);
            slice.swap(i, j);
        }
    }
}

/// Inverse standard-normal CDF (Acklam's rational approximation, |rel err| < 1.15e-9).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_deterministic() {
        let k = StreamKey::new(42).child(7);
        let a: Vec<u64> = (0..64).map(|i| k.u64_at(i)).collect();
        let b: Vec<u64> = (0..64).map(|i| k.u64_at(i)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn draws_are_order_independent() {
        let k = StreamKey::new(9).child(1);
        let forward: Vec<u64> = (0..100).map(|i| k.u64_at(i)).collect();
        let backward: Vec<u64> = (0..100).rev().map(|i| k.u64_at(i)).collect();
        let reversed: Vec<u64> = backward.into_iter().rev().collect();
        assert_eq!(forward, reversed);
    }

    #[test]
    fn different_tags_decorrelate() {
        let base = StreamKey::new(5);
        assert_ne!(base.child(0).u64_at(0), base.child(1).u64_at(0));
    }

    #[test]
    fn uniform_range_and_mean() {
        let k = StreamKey::new(123);
        let n = 100_000;
        let mut sum = 0.0;
        for i in 0..n {
            let u = k.uniform_at(i);
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn normal_moments() {
        let k = StreamKey::new(77).child(3);
        let n = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let z = k.normal_at(i);
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = StreamKey::new(1).child(2).sequence();
        let mut v: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
