//! Dataset generation, the on-disk measurement format, and fingerprint
//! quality statistics.
//!
//! A dataset directory holds `manifest.json` plus one `.bin` file per
//! measurement. The `.bin` format is a 16-byte header — magic `DRNF`,
//! version u8, rows u32 LE, cols u32 LE, three reserved zero bytes — followed
//! by the packed bit payload (row-major, 8 bits/byte, MSB first, rows padded
//! to whole bytes).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bits::BitMatrix;
use crate::error::{Error, Result};
use crate::rng::StreamKey;

use super::{apply_condition, new_device, sample_with_bias, Condition, Measurement, SimParams};

pub const BIN_MAGIC: &[u8; 4] = b"DRNF";
pub const BIN_VERSION: u8 = 1;

const TAG_DEVICE: u64 = 0x4445_5649; // "DEVI"
const TAG_MEAS_SEED: u64 = 0x4D53_4544; // "MSED"

/// Everything needed to regenerate a dataset bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub rows: usize,
    pub cols: usize,
    pub n_devices: usize,
    pub per_condition: usize,
    pub conditions: Vec<Condition>,
    pub master_seed: u64,
    pub params: SimParams,
    pub device_seeds: Vec<u64>,
    pub records: Vec<MeasurementRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub device_id: u32,
    pub condition: Condition,
    pub measurement_seed: u64,
    pub file: String,
}

/// A generated dataset: manifest plus in-memory measurements in record order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub measurements: Vec<Measurement>,
}

/// Generate `n_devices × conditions × per_condition` measurements from one
/// master seed.
pub fn generate_dataset(
    n_devices: usize,
    conditions: &[Condition],
    per_condition: usize,
    rows: usize,
    cols: usize,
    master_seed: u64,
    params: &SimParams,
) -> Result<Dataset> {
    if n_devices == 0 || conditions.is_empty() || per_condition == 0 {
        return Err(Error::param(format!(
            "counts must be >= 1, got {n_devices} devices, {} conditions, {per_condition} per condition",
            conditions.len()
        )));
    }
    params.validate()?;

    let master = StreamKey::new(master_seed);
    let device_seeds: Vec<u64> = (0..n_devices)
        .map(|d| master.child(TAG_DEVICE).u64_at(d as u64))
        .collect();

    let mut records = Vec::new();
    let mut measurements = Vec::new();
    for (d, &dev_seed) in device_seeds.iter().enumerate() {
        let mut device = new_device(rows, cols, dev_seed, params)?;
        device.device_id = d as u32;
        for (ci, condition) in conditions.iter().enumerate() {
            let theta = apply_condition(&device, condition);
            for rep in 0..per_condition {
                let measurement_seed = master
                    .child(TAG_MEAS_SEED)
                    .child(d as u64)
                    .child(ci as u64)
                    .u64_at(rep as u64);
                let m = sample_with_bias(&device, condition, &theta, measurement_seed);
                records.push(MeasurementRecord {
                    device_id: d as u32,
                    condition: *condition,
                    measurement_seed,
                    file: format!("m_{d:02}_{}_{rep:03}.bin", condition.kind.name()),
                });
                measurements.push(m);
            }
        }
    }

    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: 1,
            rows,
            cols,
            n_devices,
            per_condition,
            conditions: conditions.to_vec(),
            master_seed,
            params: params.clone(),
            device_seeds,
            records,
        },
        measurements,
    })
}

impl Dataset {
    /// Regenerate a dataset from its manifest; byte-identical to the original.
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Dataset> {
        generate_dataset(
            manifest.n_devices,
            &manifest.conditions,
            manifest.per_condition,
            manifest.rows,
            manifest.cols,
            manifest.master_seed,
            &manifest.params,
        )
    }

    /// Write `manifest.json` and one `.bin` per measurement into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest_json = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::format(format!("manifest serialization failed: {e}")))?;
        fs::write(dir.join("manifest.json"), manifest_json.as_bytes())?;
        for (record, m) in self.manifest.records.iter().zip(&self.measurements) {
            write_measurement_bin(&dir.join(&record.file), &m.bits)?;
        }
        Ok(())
    }

    /// Load a dataset directory written by [`Dataset::save`].
    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest: DatasetManifest =
            serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)
                .map_err(|e| Error::format(format!("manifest parse failed: {e}")))?;
        let mut measurements = Vec::with_capacity(manifest.records.len());
        for record in &manifest.records {
            let bits = read_measurement_bin(&dir.join(&record.file))?;
            if bits.rows() != manifest.rows || bits.cols() != manifest.cols {
                return Err(Error::format(format!(
                    "{}: geometry {}x{} does not match manifest {}x{}",
                    record.file,
                    bits.rows(),
                    bits.cols(),
                    manifest.rows,
                    manifest.cols
                )));
            }
            measurements.push(Measurement {
                device_id: record.device_id,
                condition: record.condition,
                bits,
                measurement_seed: record.measurement_seed,
            });
        }
        Ok(Dataset { manifest, measurements })
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }
}

/// Write one measurement bit matrix in the `.bin` format.
pub fn write_measurement_bin(path: &Path, bits: &BitMatrix) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_bin(bits))?;
    Ok(())
}

pub(crate) fn encode_bin(bits: &BitMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + bits.packed().len());
    out.extend_from_slice(BIN_MAGIC);
    out.push(BIN_VERSION);
    out.extend_from_slice(&(bits.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(bits.cols() as u32).to_le_bytes());
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(bits.packed());
    out
}

/// Read one measurement bit matrix from the `.bin` format.
pub fn read_measurement_bin(path: &Path) -> Result<BitMatrix> {
    let mut f = fs::File::open(path)?;
    let mut header = [0u8; 16];
    f.read_exact(&mut header)
        .map_err(|_| Error::format(format!("{}: truncated header", path.display())))?;
    if &header[0..4] != BIN_MAGIC {
        return Err(Error::format(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            &header[0..4],
            BIN_MAGIC
        )));
    }
    if header[4] != BIN_VERSION {
        return Err(Error::format(format!(
            "{}: unsupported version {}",
            path.display(),
            header[4]
        )));
    }
    let rows = u32::from_le_bytes(header[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[9..13].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    let expected = rows.checked_mul(cols.div_ceil(8)).ok_or_else(|| {
        Error::format(format!("{}: geometry overflow {rows}x{cols}", path.display()))
    })?;
    if payload.len() != expected {
        return Err(Error::format(format!(
            "{}: payload is {} bytes, expected {expected} for {rows}x{cols}",
            path.display(),
            payload.len()
        )));
    }
    BitMatrix::from_packed(rows, cols, payload)
}

/// Summary statistics for one group of pairwise distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub pairs: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Intra-device vs inter-device fractional Hamming distance distributions.
/// A group with no pairs is `None` rather than an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HammingReport {
    pub intra: Option<GroupStats>,
    pub inter: Option<GroupStats>,
}

fn group_stats(distances: &[f64]) -> Option<GroupStats> {
    if distances.is_empty() {
        return None;
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &d in distances {
        min = min.min(d);
        max = max.max(d);
        sum += d;
    }
    Some(GroupStats {
        pairs: distances.len(),
        mean: sum / distances.len() as f64,
        min,
        max,
    })
}

/// Pairwise fractional Hamming distances over all measurement pairs, split
/// into same-device and different-device groups.
pub fn hamming_stats(measurements: &[Measurement]) -> Result<HammingReport> {
    if measurements.len() < 2 {
        return Err(Error::param(format!(
            "hamming stats need at least 2 measurements, got {}",
            measurements.len()
        )));
    }
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for i in 0..measurements.len() {
        for j in (i + 1)..measurements.len() {
            let d = measurements[i].bits.hamming_fraction(&measurements[j].bits)?;
            if measurements[i].device_id == measurements[j].device_id {
                intra.push(d);
            } else {
                inter.push(d);
            }
        }
    }
    Ok(HammingReport {
        intra: group_stats(&intra),
        inter: group_stats(&inter),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ConditionKind;

    #[test]
    fn dataset_counts_multiply() {
        let ds = generate_dataset(3, &Condition::all_default(), 10, 16, 16, 7, &SimParams::default()).unwrap();
        assert_eq!(ds.len(), 180);
        assert_eq!(ds.manifest.records.len(), 180);
    }

    #[test]
    fn unit_dataset() {
        let ds = generate_dataset(
            1,
            &[Condition::new(ConditionKind::Nominal)],
            1,
            8,
            8,
            1,
            &SimParams::default(),
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn zero_counts_rejected() {
        let p = SimParams::default();
        assert!(generate_dataset(0, &Condition::all_default(), 1, 8, 8, 1, &p).is_err());
        assert!(generate_dataset(1, &[], 1, 8, 8, 1, &p).is_err());
        assert!(generate_dataset(1, &Condition::all_default(), 0, 8, 8, 1, &p).is_err());
    }

    #[test]
    fn same_master_seed_regenerates_identically() {
        let p = SimParams::default();
        let a = generate_dataset(2, &Condition::all_default(), 2, 32, 32, 99, &p).unwrap();
        let b = generate_dataset(2, &Condition::all_default(), 2, 32, 32, 99, &p).unwrap();
        assert_eq!(a, b);
        let c = Dataset::from_manifest(&a.manifest).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn bin_header_layout() {
        let bits = BitMatrix::from_fn(2, 10, |r, c| (r + c) % 2 == 0).unwrap();
        let bytes = encode_bin(&bits);
        assert_eq!(&bytes[0..4], b"DRNF");
        assert_eq!(bytes[4], 1);
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 10);
        assert_eq!(&bytes[13..16], &[0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 2 * 2);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(
            2,
            &[Condition::new(ConditionKind::Nominal), Condition::new(ConditionKind::Aged)],
            2,
            24,
            17,
            5,
            &SimParams::default(),
        )
        .unwrap();
        ds.save(dir.path()).unwrap();
        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn unwritable_location_is_io_error() {
        let ds = generate_dataset(
            1,
            &[Condition::new(ConditionKind::Nominal)],
            1,
            8,
            8,
            1,
            &SimParams::default(),
        )
        .unwrap();
        let err = ds.save(Path::new("/proc/definitely/not/writable")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn hamming_identical_and_complement() {
        let ds = generate_dataset(
            1,
            &[Condition::new(ConditionKind::Nominal)],
            1,
            16,
            16,
            3,
            &SimParams::default(),
        )
        .unwrap();
        let m = &ds.measurements[0];
        let twin = m.clone();
        let report = hamming_stats(&[m.clone(), twin]).unwrap();
        assert_eq!(report.intra.unwrap().mean, 0.0);
        assert!(report.inter.is_none());

        let mut flipped = m.clone();
        flipped.device_id = 1;
        flipped.bits = m.bits.complement();
        let report = hamming_stats(&[m.clone(), flipped]).unwrap();
        assert_eq!(report.inter.unwrap().mean, 1.0);
        assert!(report.intra.is_none());
    }

    #[test]
    fn default_device_separation() {
        // Nominal-only three-device set: inter ≈ 0.5, intra ≈ 0.045.
        let ds = generate_dataset(
            3,
            &[Condition::new(ConditionKind::Nominal)],
            4,
            128,
            128,
            7,
            &SimParams::default(),
        )
        .unwrap();
        let report = hamming_stats(&ds.measurements).unwrap();
        let inter = report.inter.unwrap();
        let intra = report.intra.unwrap();
        assert!(inter.mean > 0.45 && inter.mean < 0.55, "inter {}", inter.mean);
        assert!(intra.mean <= 0.15, "intra {}", intra.mean);
    }
}
