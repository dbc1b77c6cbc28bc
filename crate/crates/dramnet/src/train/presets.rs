//! Built-in architecture presets.
//!
//! `dramnet` is the reference design: stacked 3×3 convolutions (3/64/128/192
//! kernels) with 2×2 max pooling, two 2048-unit dense blocks and a softmax
//! head. Each conv row expands to conv → batchnorm → relu, each dense row to
//! full → batchnorm → relu → dropout(0.5). `dramnet_full` is the published
//! 1024×1024 geometry (symbolic only — its first dense layer would need
//! ~6.4e9 weights); `dramnet_desk` is the same layer sequence at 64×64.
//! `alexnet_s` and `vggnet_s` are scaled homages for direction-only
//! comparisons, not reproductions.

use crate::error::{Error, Result};
use crate::nn::arch::{ArchitectureSpec, LayerKind, LayerSpec};

const DROPOUT_P: f64 = 0.5;

fn conv_block(layers: &mut Vec<LayerSpec>, kernel: usize, stride: usize, out_channels: usize) {
    layers.push(LayerSpec::new(LayerKind::Conv2d {
        kernel: (kernel, kernel),
        stride,
        out_channels,
    }));
    layers.push(LayerSpec::new(LayerKind::BatchNorm));
    layers.push(LayerSpec::new(LayerKind::Relu));
}

fn pool(layers: &mut Vec<LayerSpec>) {
    layers.push(LayerSpec::new(LayerKind::Pool { kernel: (2, 2), stride: 2 }));
}

fn dense_block(layers: &mut Vec<LayerSpec>, out_units: usize) {
    layers.push(LayerSpec::new(LayerKind::Full { out_units }));
    layers.push(LayerSpec::new(LayerKind::BatchNorm));
    layers.push(LayerSpec::new(LayerKind::Relu));
    layers.push(LayerSpec::new(LayerKind::Dropout { p: DROPOUT_P }));
}

fn head(layers: &mut Vec<LayerSpec>, n_classes: usize) {
    layers.push(LayerSpec::new(LayerKind::Full { out_units: n_classes }));
    layers.push(LayerSpec::new(LayerKind::Softmax));
}

/// The reference layer sequence at an arbitrary square input size.
pub fn dramnet_at(name: &str, input: usize, n_classes: usize) -> ArchitectureSpec {
    let mut layers = Vec::new();
    conv_block(&mut layers, 3, 1, 3);
    conv_block(&mut layers, 3, 1, 64);
    pool(&mut layers);
    conv_block(&mut layers, 3, 1, 128);
    pool(&mut layers);
    conv_block(&mut layers, 3, 1, 192);
    pool(&mut layers);
    dense_block(&mut layers, 2048);
    dense_block(&mut layers, 2048);
    head(&mut layers, n_classes);
    ArchitectureSpec {
        name: name.to_string(),
        input_height: input,
        input_width: input,
        n_classes,
        layers,
        notes: vec![],
    }
}

/// Full-size reference geometry (1024×1024, 3 classes), with the two known
/// misprints of the published architecture table documented as notes.
pub fn dramnet_full() -> ArchitectureSpec {
    let mut arch = dramnet_at("dramnet_full", 1024, 3);
    arch.notes = vec![
        "layer 5 (pool): reference table lists input 180 x 512 x 512; the computed input is \
         512 x 512 x 128 (treated as a misprint)"
            .to_string(),
        "layer 7 (pool): reference table lists input 128 x 128 x 192, which is this pool's \
         output; the computed input is 256 x 256 x 192"
            .to_string(),
    ];
    arch
}

/// Desk-scale variant: identical layer sequence at 64×64 input.
pub fn dramnet_desk() -> ArchitectureSpec {
    dramnet_at("dramnet_desk", 64, 3)
}

/// Scaled AlexNet-style comparator: five conv blocks with 11×11/5×5/3×3
/// kernels sized for small inputs. Direction-only comparisons.
pub fn alexnet_s(input: usize, n_classes: usize) -> ArchitectureSpec {
    let mut layers = Vec::new();
    conv_block(&mut layers, 11, 2, 32);
    pool(&mut layers);
    conv_block(&mut layers, 5, 1, 64);
    pool(&mut layers);
    conv_block(&mut layers, 3, 1, 96);
    conv_block(&mut layers, 3, 1, 96);
    conv_block(&mut layers, 3, 1, 64);
    pool(&mut layers);
    dense_block(&mut layers, 512);
    dense_block(&mut layers, 512);
    head(&mut layers, n_classes);
    ArchitectureSpec {
        name: "alexnet_s".to_string(),
        input_height: input,
        input_width: input,
        n_classes,
        layers,
        notes: vec![],
    }
}

/// Scaled VGG-style comparator: stacked 3×3 blocks at depths 32/64/128.
pub fn vggnet_s(input: usize, n_classes: usize) -> ArchitectureSpec {
    let mut layers = Vec::new();
    conv_block(&mut layers, 3, 1, 32);
    conv_block(&mut layers, 3, 1, 32);
    pool(&mut layers);
    conv_block(&mut layers, 3, 1, 64);
    conv_block(&mut layers, 3, 1, 64);
    pool(&mut layers);
    conv_block(&mut layers, 3, 1, 128);
    conv_block(&mut layers, 3, 1, 128);
    pool(&mut layers);
    dense_block(&mut layers, 512);
    dense_block(&mut layers, 512);
    head(&mut layers, n_classes);
    ArchitectureSpec {
        name: "vggnet_s".to_string(),
        input_height: input,
        input_width: input,
        n_classes,
        layers,
        notes: vec![],
    }
}

/// All built-in presets at their default geometry.
pub fn presets() -> Vec<ArchitectureSpec> {
    vec![dramnet_full(), dramnet_desk(), alexnet_s(64, 3), vggnet_s(64, 3)]
}

/// Resolve a CLI architecture name at the requested input size.
pub fn by_name(name: &str, input: usize, n_classes: usize) -> Result<ArchitectureSpec> {
    match name {
        "dramnet" => {
            let label = match input {
                1024 => "dramnet_full",
                64 => "dramnet_desk",
                _ => "dramnet",
            };
            let mut arch = dramnet_at(label, input, n_classes);
            if input == 1024 {
                arch.notes = dramnet_full().notes;
            }
            Ok(arch)
        }
        "alexnet-s" => Ok(alexnet_s(input, n_classes)),
        "vggnet-s" => Ok(vggnet_s(input, n_classes)),
        other => Err(Error::param(format!(
            "unknown architecture {other:?} (expected dramnet, alexnet-s or vggnet-s)"
        ))),
    }
}
