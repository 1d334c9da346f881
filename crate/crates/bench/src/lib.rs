//! Shared fixtures for the benchmarks.

use ducdlc::backbone::BackboneConfig;
use ducdlc::model::{Decoder, ModelConfig};
use ducdlc::{Distribution, Shape4, Tensor4};

/// Uniform `[-1, 1)` tensor.
pub fn random(shape: Shape4, seed: u64) -> Tensor4 {
    Tensor4::seeded_fill(shape, seed, Distribution::Uniform { lo: -1.0, hi: 1.0 }).expect("valid range")
}

/// The 4-class 64x64 model used for desk-scale training.
pub fn desk_model(decoder: Decoder) -> ModelConfig {
    ModelConfig {
        classes: 4,
        decoder,
        backbone: BackboneConfig {
            in_channels: 3,
            stem_channels: 8,
            widths: vec![8, 16, 32, 64],
            blocks: 1,
            strides: vec![2, 2, 2, 2],
            tap_im: 1,
            tap_il: 3,
        },
        guidance_channels: 8,
        lowres_dilation: 2,
        duc_out_channels: 16,
        dlc_reduce_channels: 16,
        dlc_branch_channels: 8,
        dlc_fuse_channels: 16,
        dlc_rates: vec![3, 6, 12, 18],
    }
}
