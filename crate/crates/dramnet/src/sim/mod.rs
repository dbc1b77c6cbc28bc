//! Synthetic DRAM power-up fingerprint simulation.
//!
//! Each simulated chip carries a latent per-cell power-up bias field θᵢ ∈ [0,1]
//! drawn from a symmetric Beta(α, α): with small α most cells are strongly
//! biased toward 0 or 1 (stable) and a minority sits in the noisy middle.
//! Operating conditions shift the field in logit space, per-cell sensitivity
//! determines how strongly a given cell reacts, and each capture samples one
//! Bernoulli outcome per cell. All draws are keyed counter-based streams, so
//! datasets regenerate bit-identically from their seeds under any schedule.

mod dataset;

pub use dataset::{
    generate_dataset, hamming_stats, read_measurement_bin, write_measurement_bin, Dataset,
    DatasetManifest, GroupStats, HammingReport, MeasurementRecord, BIN_MAGIC, BIN_VERSION,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitMatrix;
use crate::error::{Error, Result};
use crate::rng::StreamKey;

// Stream tags (arbitrary distinct constants).
const TAG_BIAS: u64 = 0x4249_4153; // "BIAS"
const TAG_SENS: u64 = 0x5345_4E53; // "SENS"
const TAG_MEAS: u64 = 0x4D45_4153; // "MEAS"

/// The six supported operating conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionKind {
    Nominal,
    HighTemp,
    LowTemp,
    HighVolt,
    LowVolt,
    Aged,
}

impl ConditionKind {
    pub const ALL: [ConditionKind; 6] = [
        ConditionKind::Nominal,
        ConditionKind::HighTemp,
        ConditionKind::LowTemp,
        ConditionKind::HighVolt,
        ConditionKind::LowVolt,
        ConditionKind::Aged,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConditionKind::Nominal => "nominal",
            ConditionKind::HighTemp => "high-temp",
            ConditionKind::LowTemp => "low-temp",
            ConditionKind::HighVolt => "high-volt",
            ConditionKind::LowVolt => "low-volt",
            ConditionKind::Aged => "aged",
        }
    }
}

impl std::str::FromStr for ConditionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConditionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param(format!("unknown condition {s:?}")))
    }
}

impl std::fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// An operating condition with a stress magnitude (1.0 = the default stress level).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub kind: ConditionKind,
    pub magnitude: f64,
}

impl Condition {
    pub fn new(kind: ConditionKind) -> Self {
        Condition { kind, magnitude: 1.0 }
    }

    pub fn with_magnitude(kind: ConditionKind, magnitude: f64) -> Result<Self> {
        if !(magnitude >= 0.0) {
            return Err(Error::param(format!("condition magnitude must be >= 0, got {magnitude}")));
        }
        Ok(Condition { kind, magnitude })
    }

    pub fn all_default() -> Vec<Condition> {
        ConditionKind::ALL.into_iter().map(Condition::new).collect()
    }
}

/// Logit-space effect of one condition: a common shift plus a coupling factor
/// for the per-cell sensitivity term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionEffect {
    pub shift: f64,
    pub coupling: f64,
}

/// Simulation parameters. Defaults keep the nominal intra-device distance
/// small (≈0.05) and condition-induced flip rates under 0.15.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Beta concentration α for the latent bias field.
    pub bias_concentration: f64,
    pub high_temp: ConditionEffect,
    pub low_temp: ConditionEffect,
    pub high_volt: ConditionEffect,
    pub low_volt: ConditionEffect,
    pub aged: ConditionEffect,
    /// Global multiplier on the per-cell sensitivity term.
    pub sensitivity_scale: f64,
    /// Logit drift applied under aging, signed to reinforce each cell's bias.
    pub aging_drift: f64,
    /// Height of the alternating true-cell / anti-cell row blocks.
    pub anti_cell_block_rows: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            bias_concentration: 0.05,
            high_temp: ConditionEffect { shift: 0.5, coupling: 1.0 },
            low_temp: ConditionEffect { shift: -0.5, coupling: 1.0 },
            high_volt: ConditionEffect { shift: 0.3, coupling: 0.5 },
            low_volt: ConditionEffect { shift: -0.3, coupling: 0.5 },
            aged: ConditionEffect { shift: 0.0, coupling: 0.25 },
            sensitivity_scale: 1.0,
            aging_drift: 0.4,
            anti_cell_block_rows: 64,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bias_concentration > 0.0) {
            return Err(Error::param(format!(
                "bias_concentration must be > 0, got {}",
                self.bias_concentration
            )));
        }
        if !(self.sensitivity_scale > 0.0) {
            return Err(Error::param(format!(
                "sensitivity_scale must be > 0, got {}",
                self.sensitivity_scale
            )));
        }
        if self.anti_cell_block_rows == 0 {
            return Err(Error::param("anti_cell_block_rows must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn effect(&self, kind: ConditionKind) -> ConditionEffect {
        match kind {
            ConditionKind::Nominal => ConditionEffect { shift: 0.0, coupling: 0.0 },
            ConditionKind::HighTemp => self.high_temp,
            ConditionKind::LowTemp => self.low_temp,
            ConditionKind::HighVolt => self.high_volt,
            ConditionKind::LowVolt => self.low_volt,
            ConditionKind::Aged => self.aged,
        }
    }
}

/// One simulated DRAM chip: latent bias, sensitivity, and cell polarity.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceModel {
    pub device_id: u32,
    pub rows: usize,
    pub cols: usize,
    /// Per-cell power-up probability θᵢ ∈ [0,1], row-major.
    pub bias: Vec<f64>,
    /// Per-cell condition sensitivity γᵢ (standard normal), row-major.
    pub sensitivity: Vec<f64>,
    /// true = true cell (reads charged as logical 1), false = anti-cell.
    pub polarity: BitMatrix,
    pub seed: u64,
    pub params: SimParams,
}

/// One power-up capture.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub device_id: u32,
    pub condition: Condition,
    pub bits: BitMatrix,
    pub measurement_seed: u64,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const LOGIT_CLAMP: f64 = 1e-9;

fn logit_clamped(p: f64) -> f64 {
    let p = p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
    (p / (1.0 - p)).ln()
}

/// One draw from a symmetric Beta(α, α) via Jöhnk's method, evaluated in log
/// space so tiny α does not underflow. Rejection pulls pairs of uniforms from
/// the cell's own keyed stream, so draw counts never leak across cells.
fn beta_symmetric(cell_stream: StreamKey, alpha: f64) -> f64 {
    let mut ctr = 0u64;
    loop {
        let u = cell_stream.uniform_at(ctr).max(1e-300);
        let v = cell_stream.uniform_at(ctr + 1).max(1e-300);
        ctr += 2;
        let lx = u.ln() / alpha;
        let ly = v.ln() / alpha;
        let m = lx.max(ly);
        let log_sum = m + ((lx - m).exp() + (ly - m).exp()).ln();
        if log_sum <= 0.0 {
            return (lx - log_sum).exp();
        }
        if ctr >= 10_000 {
            // Practically unreachable for alpha <= 1; keeps the loop total.
            return 0.5;
        }
    }
}

/// Create a device model with freshly drawn per-cell physical variation.
pub fn new_device(rows: usize, cols: usize, seed: u64, params: &SimParams) -> Result<DeviceModel> {
    if rows == 0 || cols == 0 {
        return Err(Error::dim(format!("device grid must be non-empty, got {rows}x{cols}")));
    }
    params.validate()?;

    let key = StreamKey::new(seed);
    let bias_key = key.child(TAG_BIAS);
    let sens_key = key.child(TAG_SENS);
    let alpha = params.bias_concentration;
    let n = rows * cols;

    let mut bias = vec![0.0f64; n];
    let mut sensitivity = vec![0.0f64; n];
    bias.par_chunks_mut(8192)
        .zip(sensitivity.par_chunks_mut(8192))
        .enumerate()
        .for_each(|(chunk_idx, (b_chunk, s_chunk))| {
            let base = chunk_idx * 8192;
            for (off, (b, s)) in b_chunk.iter_mut().zip(s_chunk.iter_mut()).enumerate() {
                let cell = (base + off) as u64;
                *b = beta_symmetric(bias_key.child(cell), alpha);
                *s = sens_key.normal_at(cell);
            }
        });

    let block = params.anti_cell_block_rows;
    let polarity = BitMatrix::from_fn(rows, cols, |r, _| (r / block) % 2 == 0)?;

    Ok(DeviceModel {
        device_id: 0,
        rows,
        cols,
        bias,
        sensitivity,
        polarity,
        seed,
        params: params.clone(),
    })
}

/// Effective per-cell power-up probability under a condition.
///
/// θ′ᵢ = logistic(logit(θᵢ) + shift·magnitude + γᵢ·sensitivity_scale·magnitude·coupling),
/// with an extra signed drift under aging. The nominal condition (and any zero
/// total shift) returns θ unchanged, and exact 0/1 cells stay exact.
pub fn apply_condition(device: &DeviceModel, condition: &Condition) -> Vec<f64> {
    let effect = device.params.effect(condition.kind);
    let mag = condition.magnitude;
    let scale = device.params.sensitivity_scale;
    let aging = if condition.kind == ConditionKind::Aged {
        device.params.aging_drift * mag
    } else {
        0.0
    };

    device
        .bias
        .par_iter()
        .zip(device.sensitivity.par_iter())
        .map(|(&theta, &gamma)| {
            let mut delta = effect.shift * mag + gamma * scale * mag * effect.coupling;
            if aging != 0.0 {
                delta += aging * if theta >= 0.5 { 1.0 } else { -1.0 };
            }
            if delta == 0.0 || theta == 0.0 || theta == 1.0 {
                theta
            } else {
                logistic(logit_clamped(theta) + delta)
            }
        })
        .collect()
}

/// Sample one power-up capture: independent Bernoulli(θ′ᵢ) per cell, with the
/// emitted logical bit inverted for anti-cells.
pub fn sample_measurement(
    device: &DeviceModel,
    condition: &Condition,
    measurement_seed: u64,
) -> Measurement {
    let theta = apply_condition(device, condition);
    sample_with_bias(device, condition, &theta, measurement_seed)
}

/// Same as [`sample_measurement`] but reusing a precomputed effective bias
/// field (dataset generation samples many captures per condition).
pub(crate) fn sample_with_bias(
    device: &DeviceModel,
    condition: &Condition,
    theta: &[f64],
    measurement_seed: u64,
) -> Measurement {
    let stream = StreamKey::new(device.seed)
        .child(TAG_MEAS)
        .child(condition.kind as u64)
        .child(condition.magnitude.to_bits())
        .child(measurement_seed);

    let cols = device.cols;
    let mut bits = BitMatrix::zeros(device.rows, cols).expect("device grid is non-empty");
    for r in 0..device.rows {
        for c in 0..cols {
            let cell = r * cols + c;
            let raw = stream.uniform_at(cell as u64) < theta[cell];
            let emitted = if device.polarity.get(r, c) { raw } else { !raw };
            if emitted {
                bits.set(r, c, true);
            }
        }
    }

    Measurement {
        device_id: device.device_id,
        condition: *condition,
        bits,
        measurement_seed,
    }
}
