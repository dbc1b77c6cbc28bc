//! Fingerprint images: bit matrices rendered as grayscale rasters.
//!
//! The mapping is maximal-contrast and lossless: bit 0 → pixel 0, bit 1 →
//! pixel 255, so thresholding at 128 recovers the original bits. Downscaling
//! uses non-overlapping block means (preserving per-region bias, which is the
//! discriminative signal), crops come in the conventional six-way family
//! (four corners, center, full), and rasters round-trip through binary PGM.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bits::BitMatrix;
use crate::error::{Error, Result};
use crate::sim::Measurement;

/// Which crop of the source image a raster came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CropTag {
    #[serde(rename = "tl")]
    TopLeft,
    #[serde(rename = "tr")]
    TopRight,
    #[serde(rename = "bl")]
    BottomLeft,
    #[serde(rename = "br")]
    BottomRight,
    #[serde(rename = "c")]
    Center,
    #[serde(rename = "full")]
    Full,
}

impl CropTag {
    pub const ALL: [CropTag; 6] = [
        CropTag::TopLeft,
        CropTag::TopRight,
        CropTag::BottomLeft,
        CropTag::BottomRight,
        CropTag::Center,
        CropTag::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CropTag::TopLeft => "tl",
            CropTag::TopRight => "tr",
            CropTag::BottomLeft => "bl",
            CropTag::BottomRight => "br",
            CropTag::Center => "c",
            CropTag::Full => "full",
        }
    }
}

/// Where an image's pixels came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub measurement_seed: u64,
    pub crop: CropTag,
}

/// A grayscale fingerprint raster with its device label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FingerprintImage {
    pub rows: usize,
    pub cols: usize,
    /// Row-major intensities.
    pub pixels: Vec<u8>,
    pub label: u32,
    pub source: Provenance,
}

impl FingerprintImage {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>, label: u32, source: Provenance) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim(format!("image must be non-empty, got {rows}x{cols}")));
        }
        if pixels.len() != rows * cols {
            return Err(Error::dim(format!(
                "pixel buffer is {} values, expected {}",
                pixels.len(),
                rows * cols
            )));
        }
        Ok(FingerprintImage { rows, cols, pixels, label, source })
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> u8 {
        self.pixels[r * self.cols + c]
    }

    /// Recover the bit matrix by thresholding at 128.
    pub fn threshold_bits(&self) -> BitMatrix {
        BitMatrix::from_fn(self.rows, self.cols, |r, c| self.at(r, c) >= 128)
            .expect("image is non-empty")
    }
}

/// Network-ready single-channel input with values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedInput {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub label: u32,
}

impl NormalizedInput {
    pub const CHANNELS: usize = 1;
}

/// Render a measurement as a grayscale image (bit 0 → 0, bit 1 → 255).
pub fn to_image(measurement: &Measurement) -> FingerprintImage {
    let bits = &measurement.bits;
    let mut pixels = vec![0u8; bits.rows() * bits.cols()];
    for r in 0..bits.rows() {
        for c in 0..bits.cols() {
            if bits.get(r, c) {
                pixels[r * bits.cols() + c] = 255;
            }
        }
    }
    FingerprintImage {
        rows: bits.rows(),
        cols: bits.cols(),
        pixels,
        label: measurement.device_id,
        source: Provenance {
            measurement_seed: measurement.measurement_seed,
            crop: CropTag::Full,
        },
    }
}

/// Block-mean downscale to `(target_rows, target_cols)`, which must divide the
/// source dimensions. Block means round half-up to 8-bit.
pub fn downscale(image: &FingerprintImage, target_rows: usize, target_cols: usize) -> Result<FingerprintImage> {
    if target_rows == 0 || target_cols == 0 {
        return Err(Error::dim("downscale target must be non-empty".to_string()));
    }
    if image.rows % target_rows != 0 || image.cols % target_cols != 0 {
        return Err(Error::dim(format!(
            "target {target_rows}x{target_cols} does not divide source {}x{}",
            image.rows, image.cols
        )));
    }
    let bh = image.rows / target_rows;
    let bw = image.cols / target_cols;
    let count = (bh * bw) as u64;
    let mut pixels = vec![0u8; target_rows * target_cols];
    for tr in 0..target_rows {
        for tc in 0..target_cols {
            let mut sum: u64 = 0;
            for r in tr * bh..(tr + 1) * bh {
                let row = &image.pixels[r * image.cols + tc * bw..r * image.cols + (tc + 1) * bw];
                sum += row.iter().map(|&p| p as u64).sum::<u64>();
            }
            // round half-up: floor(sum/count + 1/2)
            pixels[tr * target_cols + tc] = ((2 * sum + count) / (2 * count)) as u8;
        }
    }
    FingerprintImage::new(target_rows, target_cols, pixels, image.label, image.source)
}

/// Resize to arbitrary dimensions: identity when equal, block mean when the
/// target divides the source, nearest-neighbor otherwise.
fn resize(image: &FingerprintImage, target_rows: usize, target_cols: usize) -> Result<FingerprintImage> {
    if target_rows == image.rows && target_cols == image.cols {
        return Ok(image.clone());
    }
    if image.rows % target_rows == 0 && image.cols % target_cols == 0 {
        return downscale(image, target_rows, target_cols);
    }
    let mut pixels = vec![0u8; target_rows * target_cols];
    for r in 0..target_rows {
        let sr = r * image.rows / target_rows;
        for c in 0..target_cols {
            let sc = c * image.cols / target_cols;
            pixels[r * target_cols + c] = image.at(sr, sc);
        }
    }
    FingerprintImage::new(target_rows, target_cols, pixels, image.label, image.source)
}

/// Six-way crop augmentation: four corners + center at `⌊fraction·dim⌋`, plus
/// the uncropped original, all resized back to the source dimensions so one
/// network input size serves every variant.
pub fn six_crops(image: &FingerprintImage, fraction: f64) -> Result<Vec<FingerprintImage>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param(format!("crop fraction must be in (0, 1], got {fraction}")));
    }
    let ch = (fraction * image.rows as f64).floor() as usize;
    let cw = (fraction * image.cols as f64).floor() as usize;
    if ch == 0 || cw == 0 {
        return Err(Error::param(format!(
            "crop fraction {fraction} yields an empty crop of a {}x{} image",
            image.rows, image.cols
        )));
    }

    let anchors = [
        (CropTag::TopLeft, 0, 0),
        (CropTag::TopRight, 0, image.cols - cw),
        (CropTag::BottomLeft, image.rows - ch, 0),
        (CropTag::BottomRight, image.rows - ch, image.cols - cw),
        (CropTag::Center, (image.rows - ch) / 2, (image.cols - cw) / 2),
    ];

    let mut out = Vec::with_capacity(6);
    for (tag, r0, c0) in anchors {
        let mut pixels = Vec::with_capacity(ch * cw);
        for r in r0..r0 + ch {
            pixels.extend_from_slice(&image.pixels[r * image.cols + c0..r * image.cols + c0 + cw]);
        }
        let cropped = FingerprintImage::new(ch, cw, pixels, image.label, Provenance {
            measurement_seed: image.source.measurement_seed,
            crop: tag,
        })?;
        out.push(resize(&cropped, image.rows, image.cols)?);
    }
    let mut full = image.clone();
    full.source.crop = CropTag::Full;
    out.push(full);
    Ok(out)
}

/// Scale pixels to [0,1].
pub fn normalize(image: &FingerprintImage) -> NormalizedInput {
    NormalizedInput {
        height: image.rows,
        width: image.cols,
        values: image.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        label: image.label,
    }
}

/// Write a binary PGM (P5, maxval 255).
pub fn export_pgm(image: &FingerprintImage, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", image.cols, image.rows)?;
    f.write_all(&image.pixels)?;
    Ok(())
}

/// Read a binary PGM (P5, maxval 255). The label and provenance of an imported
/// image are unknown and set to defaults.
pub fn import_pgm(path: &Path) -> Result<FingerprintImage> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if !bytes.starts_with(b"P5") {
        return Err(Error::format(format!(
            "{}: not a binary PGM (expected magic P5)",
            path.display()
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3]; // width, height, maxval
    for field in &mut fields {
        // skip whitespace and '#' comment lines
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(format!("{}: malformed PGM header", path.display())));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|e| Error::format(format!("{}: bad header value: {e}", path.display())))?;
    }
    if fields[2] != 255 {
        return Err(Error::format(format!(
            "{}: unsupported maxval {} (expected 255)",
            path.display(),
            fields[2]
        )));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(format!("{}: malformed PGM header", path.display())));
    }
    pos += 1;
    let (width, height) = (fields[0], fields[1]);
    let payload = &bytes[pos..];
    if payload.len() != width * height {
        return Err(Error::format(format!(
            "{}: payload is {} bytes, expected {}",
            path.display(),
            payload.len(),
            width * height
        )));
    }
    FingerprintImage::new(height, width, payload.to_vec(), 0, Provenance {
        measurement_seed: 0,
        crop: CropTag::Full,
    })
}
