//! Training-time augmentation: flip, rescale, crop.

use serde::{Deserialize, Serialize};

use super::dataset::Sample;
use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::ops::bilinear_resize_forward;
use crate::rng::SplitMix64;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    /// Mirror rows top to bottom.
    Vertical,
    /// Mirror columns left to right.
    Horizontal,
    None,
}

impl std::str::FromStr for FlipAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vertical" => Ok(FlipAxis::Vertical),
            "horizontal" => Ok(FlipAxis::Horizontal),
            "none" => Ok(FlipAxis::None),
            _ => Err(Error::InvalidConfig(format!("unknown flip axis {s:?}"))),
        }
    }
}

impl std::fmt::Display for FlipAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FlipAxis::Vertical => "vertical",
            FlipAxis::Horizontal => "horizontal",
            FlipAxis::None => "none",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub crop_size: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip: FlipAxis,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 {
            return Err(Error::InvalidConfig("crop size must be positive".into()));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "scale range must be positive and ordered, got [{}, {}]",
                self.scale_min, self.scale_max
            )));
        }
        Ok(())
    }
}

pub fn flip(sample: &Sample, axis: FlipAxis) -> Sample {
    let s = sample.image.shape();
    let (h, w) = (s.h, s.w);
    let src = |y: usize, x: usize| match axis {
        FlipAxis::Vertical => (h - 1 - y, x),
        FlipAxis::Horizontal => (y, w - 1 - x),
        FlipAxis::None => (y, x),
    };
    let image = Tensor4::from_fn(s, |n, c, y, x| {
        let (sy, sx) = src(y, x);
        sample.image.get(n, c, sy, sx)
    });
    let labels = (0..h * w)
        .map(|i| {
            let (sy, sx) = src(i / w, i % w);
            sample.label.get(0, sy, sx)
        })
        .collect();
    let label = LabelMap::with_ignore(1, h, w, labels, sample.label.ignore_index()).expect("same size");
    Sample { image, label }
}

/// Nearest-neighbour label resize on the same half-pixel grid as the
/// bilinear image resize, so no new values can appear.
pub fn resize_labels(label: &LabelMap, th: usize, tw: usize) -> LabelMap {
    let (n, h, w) = label.dims();
    let pick = |i: usize, out: usize, len: usize| (((i as f64 + 0.5) * len as f64 / out as f64) as usize).min(len - 1);
    let mut data = Vec::with_capacity(n * th * tw);
    for b in 0..n {
        for y in 0..th {
            let sy = pick(y, th, h);
            for x in 0..tw {
                data.push(label.get(b, sy, pick(x, tw, w)));
            }
        }
    }
    LabelMap::with_ignore(n, th, tw, data, label.ignore_index()).expect("sized above")
}

pub fn rescale(sample: &Sample, factor: f64) -> Result<Sample> {
    let s = sample.image.shape();
    let th = ((s.h as f64 * factor).round() as usize).max(1);
    let tw = ((s.w as f64 * factor).round() as usize).max(1);
    if (th, tw) == (s.h, s.w) {
        return Ok(sample.clone());
    }
    Ok(Sample {
        image: bilinear_resize_forward(&sample.image, th, tw)?,
        label: resize_labels(&sample.label, th, tw),
    })
}

/// Cuts a `crop x crop` window. Axes shorter than the crop are placed at a
/// random offset on a zero image / ignore-label canvas.
pub fn random_crop(sample: &Sample, crop: usize, rng: &mut SplitMix64) -> Sample {
    let s = sample.image.shape();
    let ignore = sample.label.ignore_index();
    let mut offset = |len: usize| -> isize {
        if len >= crop {
            rng.below(len - crop + 1) as isize
        } else {
            -(rng.below(crop - len + 1) as isize)
        }
    };
    let oy = offset(s.h);
    let ox = offset(s.w);
    let inside = |y: usize, x: usize| {
        let (sy, sx) = (y as isize + oy, x as isize + ox);
        (sy >= 0 && sx >= 0 && (sy as usize) < s.h && (sx as usize) < s.w).then_some((sy as usize, sx as usize))
    };
    let image = Tensor4::from_fn(Shape4::new(1, s.c, crop, crop), |_, c, y, x| match inside(y, x) {
        Some((sy, sx)) => sample.image.get(0, c, sy, sx),
        None => 0.0,
    });
    let labels = (0..crop * crop)
        .map(|i| match inside(i / crop, i % crop) {
            Some((sy, sx)) => sample.label.get(0, sy, sx),
            None => ignore,
        })
        .collect();
    Sample {
        image,
        label: LabelMap::with_ignore(1, crop, crop, labels, ignore).expect("sized above"),
    }
}

/// Flip with probability 0.5, rescale by a uniform factor, random crop.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut SplitMix64) -> Result<Sample> {
    let flipped = if cfg.flip != FlipAxis::None && rng.bernoulli(0.5) {
        flip(sample, cfg.flip)
    } else {
        sample.clone()
    };
    let factor = if cfg.scale_min == cfg.scale_max {
        cfg.scale_min
    } else {
        rng.uniform(cfg.scale_min, cfg.scale_max)
    };
    let scaled = rescale(&flipped, factor)?;
    let s = scaled.image.shape();
    if s.h == cfg.crop_size && s.w == cfg.crop_size {
        return Ok(scaled);
    }
    Ok(random_crop(&scaled, cfg.crop_size, rng))
}
