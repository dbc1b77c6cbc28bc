//! Packed binary matrices.
//!
//! Rows are packed 8 bits per byte, most-significant bit first, each row
//! padded to a whole byte. This is also the payload layout of the `.bin`
//! measurement files, so encode/decode is a header away.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim(format!("bit matrix must be non-empty, got {rows}x{cols}")));
        }
        let stride = cols.div_ceil(8);
        Ok(BitMatrix {
            rows,
            cols,
            data: vec![0u8; rows * stride],
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut m = Self::zeros(rows, cols)?;
        for r in 0..rows {
            for c in 0..cols {
                if f(r, c) {
                    m.set(r, c, true);
                }
            }
        }
        Ok(m)
    }

    /// Reconstruct from packed row-major bytes (the DRNF payload layout).
    pub fn from_packed(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim(format!("bit matrix must be non-empty, got {rows}x{cols}")));
        }
        let stride = cols.div_ceil(8);
        if data.len() != rows * stride {
            return Err(Error::format(format!(
                "packed bit payload is {} bytes, expected {} for {rows}x{cols}",
                data.len(),
                rows * stride
            )));
        }
        Ok(BitMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_stride(&self) -> usize {
        self.cols.div_ceil(8)
    }

    pub fn packed(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        debug_assert!(r < self.rows && c < self.cols);
        let byte = self.data[r * self.row_stride() + c / 8];
        (byte >> (7 - (c % 8))) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        debug_assert!(r < self.rows && c < self.cols);
        let stride = self.row_stride();
        let byte = &mut self.data[r * stride + c / 8];
        let mask = 1u8 << (7 - (c % 8));
        if v {
            *byte |= mask;
        } else {
            *byte &= !mask;
        }
    }

    pub fn count_ones(&self) -> u64 {
        // Padding bits are always zero, so a plain popcount is exact.
        self.data.iter().map(|b| b.count_ones() as u64).sum()
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flip every bit (padding stays zero).
    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(r, c, !self.get(r, c));
            }
        }
        out
    }

    /// Fractional Hamming distance: disagreeing bits / total bits.
    pub fn hamming_fraction(&self, other: &Self) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim(format!(
                "hamming distance needs equal shapes, got {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let diff: u64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a ^ b).count_ones() as u64)
            .sum();
        Ok(diff as f64 / self.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first_packing() {
        // Row [1,0,1,1,0,0,0,0, 1,1] over 10 cols -> bytes 0b1011_0000, 0b1100_0000.
        let m = BitMatrix::from_fn(1, 10, |_, c| matches!(c, 0 | 2 | 3 | 8 | 9)).unwrap();
        assert_eq!(m.packed(), &[0b1011_0000, 0b1100_0000]);
    }

    #[test]
    fn rows_pad_to_whole_bytes() {
        let m = BitMatrix::zeros(3, 10).unwrap();
        assert_eq!(m.row_stride(), 2);
        assert_eq!(m.packed().len(), 6);
    }

    #[test]
    fn get_set_roundtrip() {
        let mut m = BitMatrix::zeros(5, 13).unwrap();
        m.set(4, 12, true);
        m.set(0, 0, true);
        assert!(m.get(4, 12));
        assert!(m.get(0, 0));
        assert!(!m.get(2, 6));
        m.set(4, 12, false);
        assert!(!m.get(4, 12));
        assert_eq!(m.count_ones(), 1);
    }

    #[test]
    fn hamming_identical_and_complement() {
        let m = BitMatrix::from_fn(4, 9, |r, c| (r + c) % 3 == 0).unwrap();
        assert_eq!(m.hamming_fraction(&m).unwrap(), 0.0);
        assert_eq!(m.hamming_fraction(&m.complement()).unwrap(), 1.0);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(matches!(BitMatrix::zeros(0, 4), Err(Error::Dimension(_))));
        assert!(matches!(BitMatrix::zeros(4, 0), Err(Error::Dimension(_))));
    }
}
