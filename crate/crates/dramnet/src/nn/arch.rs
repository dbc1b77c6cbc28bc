//! Architecture descriptions and symbolic shape inference.
//!
//! An [`ArchitectureSpec`] is the full ordered layer list, including the
//! normalization/activation/dropout layers interleaved between the headline
//! convolution, pooling and fully-connected rows. [`infer_shapes`] walks the
//! list symbolically — no parameters are allocated — which is how the
//! full-size 1024×1024 network (whose first dense layer alone would hold
//! ~6.4 billion weights) stays inspectable on a desk machine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        kernel: (usize, usize),
        stride: usize,
        out_channels: usize,
    },
    Pool {
        kernel: (usize, usize),
        stride: usize,
    },
    BatchNorm,
    Relu,
    Dropout {
        p: f64,
    },
    Full {
        out_units: usize,
    },
    Softmax,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Pool { .. } => "pool",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Full { .. } => "full",
            LayerKind::Softmax => "softmax",
        }
    }

    /// Rows of this kind carry the architecture-table numbering
    /// (conv/pool/full); the interleaved layers do not.
    pub fn is_table_row(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d { .. } | LayerKind::Pool { .. } | LayerKind::Full { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        LayerSpec { kind }
    }
}

/// An ordered layer list with its input geometry and class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    /// Input geometry (height, width); channels are always 1.
    pub input_height: usize,
    pub input_width: usize,
    pub n_classes: usize,
    pub layers: Vec<LayerSpec>,
    /// Known discrepancies between this spec and the published reference
    /// table it mirrors (surfaced by the `shapes` command).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ArchitectureSpec {
    /// Checks the structural invariants: ends in Full(n_classes) + Softmax and
    /// shape inference succeeds end to end.
    pub fn validate(&self) -> Result<ShapeTable> {
        let n = self.layers.len();
        if n < 2 {
            return Err(Error::shape(self.name.clone(), "architecture needs at least two layers"));
        }
        match (&self.layers[n - 2].kind, &self.layers[n - 1].kind) {
            (LayerKind::Full { out_units }, LayerKind::Softmax) if *out_units == self.n_classes => {}
            _ => {
                return Err(Error::shape(
                    self.name.clone(),
                    format!(
                        "architecture must end in full({}) followed by softmax",
                        self.n_classes
                    ),
                ))
            }
        }
        infer_shapes(self)
    }
}

/// Shape-inference result for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    /// Index into `ArchitectureSpec::layers`.
    pub index: usize,
    /// Table-row number for conv/pool/full layers, counted from 1.
    pub table_row: Option<usize>,
    pub kind: String,
    /// Input as (height, width, channels); dense inputs are (1, 1, features).
    pub input: (usize, usize, usize),
    pub output: (usize, usize, usize),
    /// Trainable parameter count.
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeTable {
    pub arch: String,
    pub rows: Vec<LayerShape>,
    pub total_params: usize,
    pub notes: Vec<String>,
}

impl ShapeTable {
    /// The conv/pool/full rows, in table order.
    pub fn table_rows(&self) -> impl Iterator<Item = &LayerShape> {
        self.rows.iter().filter(|r| r.table_row.is_some())
    }
}

fn same_pad_out(input: usize, stride: usize) -> usize {
    input.div_ceil(stride)
}

fn pool_out(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if input < kernel {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

/// Symbolic per-layer input/output dimensions and parameter counts.
pub fn infer_shapes(arch: &ArchitectureSpec) -> Result<ShapeTable> {
    if arch.input_height == 0 || arch.input_width == 0 {
        return Err(Error::shape(arch.name.clone(), "input dimensions must be positive"));
    }
    let mut dims = (arch.input_height, arch.input_width, 1usize);
    let mut flattened = false;
    let mut rows = Vec::with_capacity(arch.layers.len());
    let mut table_row = 0usize;
    let mut total_params = 0usize;

    for (index, layer) in arch.layers.iter().enumerate() {
        let label = || format!("layer {} ({})", index + 1, layer.kind.name());
        let input = dims;
        let (output, params) = match layer.kind {
            LayerKind::Conv2d { kernel, stride, out_channels } => {
                if flattened {
                    return Err(Error::shape(label(), "conv2d after flatten"));
                }
                if stride == 0 || out_channels == 0 || kernel.0 == 0 || kernel.1 == 0 {
                    return Err(Error::shape(label(), "kernel, stride and channels must be positive"));
                }
                let out = (same_pad_out(dims.0, stride), same_pad_out(dims.1, stride), out_channels);
                if out.0 == 0 || out.1 == 0 {
                    return Err(Error::shape(label(), format!("non-positive output {out:?}")));
                }
                (out, kernel.0 * kernel.1 * dims.2 * out_channels + out_channels)
            }
            LayerKind::Pool { kernel, stride } => {
                if flattened {
                    return Err(Error::shape(label(), "pool after flatten"));
                }
                if stride == 0 || kernel.0 == 0 || kernel.1 == 0 {
                    return Err(Error::shape(label(), "kernel and stride must be positive"));
                }
                let oh = pool_out(dims.0, kernel.0, stride);
                let ow = pool_out(dims.1, kernel.1, stride);
                match (oh, ow) {
                    (Some(oh), Some(ow)) if oh > 0 && ow > 0 => ((oh, ow, dims.2), 0),
                    _ => {
                        return Err(Error::shape(
                            label(),
                            format!("window {kernel:?} does not fit input {}x{}", dims.0, dims.1),
                        ))
                    }
                }
            }
            LayerKind::BatchNorm => (dims, 2 * dims.2),
            LayerKind::Relu | LayerKind::Softmax => (dims, 0),
            LayerKind::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::shape(label(), format!("dropout probability {p} outside [0,1)")));
                }
                (dims, 0)
            }
            LayerKind::Full { out_units } => {
                if out_units == 0 {
                    return Err(Error::shape(label(), "out_units must be positive"));
                }
                let in_features = dims.0 * dims.1 * dims.2;
                flattened = true;
                ((1, 1, out_units), in_features * out_units + out_units)
            }
        };

        let row_no = if layer.kind.is_table_row() {
            table_row += 1;
            Some(table_row)
        } else {
            None
        };
        rows.push(LayerShape {
            index,
            table_row: row_no,
            kind: layer.kind.name().to_string(),
            input,
            output,
            params,
        });
        total_params += params;
        dims = output;
    }

    Ok(ShapeTable {
        arch: arch.name.clone(),
        rows,
        total_params,
        notes: arch.notes.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::presets;

    #[test]
    fn full_size_table_rows() {
        let arch = presets::dramnet_full();
        let table = infer_shapes(&arch).unwrap();
        let rows: Vec<_> = table.table_rows().collect();
        assert_eq!(rows.len(), 10);
        // Headline rows of the reference design at 1024x1024.
        assert_eq!(rows[0].input, (1024, 1024, 1));
        assert_eq!(rows[1].input, (1024, 1024, 3));
        assert_eq!(rows[2].input, (1024, 1024, 64));
        assert_eq!(rows[3].input, (512, 512, 64));
        assert_eq!(rows[5].input, (256, 256, 128));
        assert_eq!(rows[7].input, (128, 128, 192));
        assert_eq!(rows[8].input, (1, 1, 2048));
        assert_eq!(rows[9].input, (1, 1, 2048));
        // Computed inputs for the rows the reference table misprints.
        assert_eq!(rows[4].input, (512, 512, 128));
        assert_eq!(rows[6].input, (256, 256, 192));
        assert_eq!(table.notes.len(), 2);
    }

    #[test]
    fn desk_flatten_length() {
        let arch = presets::dramnet_desk();
        let table = infer_shapes(&arch).unwrap();
        let full_row = table
            .table_rows()
            .find(|r| r.table_row == Some(8))
            .unwrap();
        assert_eq!(full_row.input, (8, 8, 192));
        assert_eq!(full_row.input.0 * full_row.input.1 * full_row.input.2, 12288);
    }

    #[test]
    fn shape_error_names_layer() {
        let arch = ArchitectureSpec {
            name: "broken".to_string(),
            input_height: 4,
            input_width: 4,
            n_classes: 2,
            layers: vec![
                LayerSpec::new(LayerKind::Pool { kernel: (2, 2), stride: 2 }),
                LayerSpec::new(LayerKind::Pool { kernel: (2, 2), stride: 2 }),
                LayerSpec::new(LayerKind::Pool { kernel: (2, 2), stride: 2 }),
                LayerSpec::new(LayerKind::Full { out_units: 2 }),
                LayerSpec::new(LayerKind::Softmax),
            ],
            notes: vec![],
        };
        let err = infer_shapes(&arch).unwrap_err();
        match err {
            Error::Shape { layer, .. } => assert!(layer.contains("layer 3"), "{layer}"),
            other => panic!("expected shape error, got {other}"),
        }
    }

    #[test]
    fn validate_requires_softmax_head() {
        let arch = ArchitectureSpec {
            name: "headless".to_string(),
            input_height: 8,
            input_width: 8,
            n_classes: 3,
            layers: vec![LayerSpec::new(LayerKind::Full { out_units: 3 })],
            notes: vec![],
        };
        assert!(arch.validate().is_err());
    }

    #[test]
    fn stride_one_same_padding_preserves_dims() {
        let arch = ArchitectureSpec {
            name: "t".to_string(),
            input_height: 33,
            input_width: 17,
            n_classes: 2,
            layers: vec![
                LayerSpec::new(LayerKind::Conv2d { kernel: (3, 3), stride: 1, out_channels: 4 }),
                LayerSpec::new(LayerKind::Full { out_units: 2 }),
                LayerSpec::new(LayerKind::Softmax),
            ],
            notes: vec![],
        };
        let t = infer_shapes(&arch).unwrap();
        assert_eq!(t.rows[0].output, (33, 17, 4));
    }
}
