//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are skipped. Lists are comma
//! separated. Every key below is accepted exactly once; anything else is an
//! error.
//!
//! | key | field |
//! |-----|-------|
//! | `seed` | training and initialization seed |
//! | `base_lr`, `power`, `momentum`, `weight_decay` | optimizer and poly schedule |
//! | `epochs`, `batch_size` | loop length and batch size |
//! | `crop_size`, `scale_min`, `scale_max`, `flip` | augmentation (`flip` is `vertical`, `horizontal` or `none`) |
//! | `val_fraction` | share of the dataset held out for validation |
//! | `decoder` | `duc` or `bilinear` |
//! | `backbone.stem_channels`, `backbone.widths`, `backbone.blocks`, `backbone.strides`, `backbone.tap_im`, `backbone.tap_il` | encoder |
//! | `duc.guidance_channels`, `duc.guide_stride`, `duc.lowres_dilation`, `duc.out_channels` | upsampling module; `guide_stride` must equal the stride at `backbone.tap_im` |
//! | `dlc.reduce_channels`, `dlc.branch_channels`, `dlc.fuse_channels`, `dlc.rates` | context module |

use std::collections::BTreeSet;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;

use super::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub val_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            val_fraction: 0.2,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        let mut guide_stride = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::InvalidConfig(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            let m = &mut cfg.model;
            let t = &mut cfg.train;
            match key {
                "seed" => t.seed = parse(key, value)?,
                "base_lr" => t.base_lr = parse(key, value)?,
                "power" => t.power = parse(key, value)?,
                "momentum" => t.momentum = parse(key, value)?,
                "weight_decay" => t.weight_decay = parse(key, value)?,
                "epochs" => t.epochs = parse(key, value)?,
                "batch_size" => t.batch_size = parse(key, value)?,
                "crop_size" => t.augment.crop_size = parse(key, value)?,
                "scale_min" => t.augment.scale_min = parse(key, value)?,
                "scale_max" => t.augment.scale_max = parse(key, value)?,
                "flip" => t.augment.flip = value.parse()?,
                "val_fraction" => cfg.val_fraction = parse(key, value)?,
                "decoder" => m.decoder = value.parse()?,
                "backbone.stem_channels" => m.backbone.stem_channels = parse(key, value)?,
                "backbone.widths" => m.backbone.widths = parse_list(key, value)?,
                "backbone.blocks" => m.backbone.blocks = parse(key, value)?,
                "backbone.strides" => m.backbone.strides = parse_list(key, value)?,
                "backbone.tap_im" => m.backbone.tap_im = parse(key, value)?,
                "backbone.tap_il" => m.backbone.tap_il = parse(key, value)?,
                "duc.guidance_channels" => m.guidance_channels = parse(key, value)?,
                "duc.guide_stride" => guide_stride = Some(parse::<usize>(key, value)?),
                "duc.lowres_dilation" => m.lowres_dilation = parse(key, value)?,
                "duc.out_channels" => m.duc_out_channels = parse(key, value)?,
                "dlc.reduce_channels" => m.dlc_reduce_channels = parse(key, value)?,
                "dlc.branch_channels" => m.dlc_branch_channels = parse(key, value)?,
                "dlc.fuse_channels" => m.dlc_fuse_channels = parse(key, value)?,
                "dlc.rates" => m.dlc_rates = parse_list(key, value)?,
                _ => return Err(Error::InvalidConfig(format!("line {}: unknown key {key}", lineno + 1))),
            }
        }
        cfg.model.backbone.validate()?;
        if let Some(s) = guide_stride {
            let derived = cfg.model.backbone.stride_at(cfg.model.backbone.tap_im);
            if s != derived {
                return Err(Error::InvalidConfig(format!(
                    "duc.guide_stride {s} disagrees with the backbone stride {derived} at tap_im"
                )));
            }
        }
        if !(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("val_fraction must lie in [0, 1), got {}", cfg.val_fraction)));
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Every key with its current value, parseable by [`RunConfig::parse`].
    pub fn render(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let b = &m.backbone;
        [
            format!("seed = {}", t.seed),
            format!("base_lr = {}", t.base_lr),
            format!("power = {}", t.power),
            format!("momentum = {}", t.momentum),
            format!("weight_decay = {}", t.weight_decay),
            format!("epochs = {}", t.epochs),
            format!("batch_size = {}", t.batch_size),
            format!("crop_size = {}", t.augment.crop_size),
            format!("scale_min = {}", t.augment.scale_min),
            format!("scale_max = {}", t.augment.scale_max),
            format!("flip = {}", t.augment.flip),
            format!("val_fraction = {}", self.val_fraction),
            format!("decoder = {}", m.decoder),
            format!("backbone.stem_channels = {}", b.stem_channels),
            format!("backbone.widths = {}", list(&b.widths)),
            format!("backbone.blocks = {}", b.blocks),
            format!("backbone.strides = {}", list(&b.strides)),
            format!("backbone.tap_im = {}", b.tap_im),
            format!("backbone.tap_il = {}", b.tap_il),
            format!("duc.guidance_channels = {}", m.guidance_channels),
            format!("duc.guide_stride = {}", b.stride_at(b.tap_im)),
            format!("duc.lowres_dilation = {}", m.lowres_dilation),
            format!("duc.out_channels = {}", m.duc_out_channels),
            format!("dlc.reduce_channels = {}", m.dlc_reduce_channels),
            format!("dlc.branch_channels = {}", m.dlc_branch_channels),
            format!("dlc.fuse_channels = {}", m.dlc_fuse_channels),
            format!("dlc.rates = {}", list(&m.dlc_rates)),
        ]
        .join("\n")
            + "\n"
    }
}
