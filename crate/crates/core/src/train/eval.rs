//! Single- and multi-scale inference and dataset evaluation.

use super::dataset::{collate, Sample};
use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::metrics::{ConfusionMatrix, Metrics};
use crate::model::{forward_full, ModelConfig, ModelParams};
use crate::ops::{bilinear_resize_forward, softmax, Mode};
use crate::tensor::Tensor4;

pub const MULTI_SCALES: [f64; 3] = [0.75, 1.0, 1.25];

/// Side length fed to the network for `len * scale`, rounded to a multiple
/// of the total stride.
pub fn scaled_side(len: usize, scale: f64, stride: usize) -> usize {
    let units = (len as f64 * scale / stride as f64).round() as usize;
    units.max(1) * stride
}

/// Class probabilities at the native resolution of `images`.
pub fn predict_probs(images: &Tensor4, cfg: &ModelConfig, params: &mut ModelParams, scale: f64) -> Result<Tensor4> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    let s = images.shape();
    let stride = cfg.total_stride();
    let (th, tw) = (scaled_side(s.h, scale, stride), scaled_side(s.w, scale, stride));
    let input = if (th, tw) == (s.h, s.w) {
        images.clone()
    } else {
        bilinear_resize_forward(images, th, tw)?
    };
    let (logits, _) = forward_full(&input, cfg, params, Mode::Eval)?;
    let probs = softmax(&logits);
    if (th, tw) == (s.h, s.w) {
        Ok(probs)
    } else {
        bilinear_resize_forward(&probs, s.h, s.w)
    }
}

/// Averages probabilities over `scales` and takes the per-pixel argmax
/// (lowest class index on ties).
pub fn predict(images: &Tensor4, cfg: &ModelConfig, params: &mut ModelParams, scales: &[f64]) -> Result<LabelMap> {
    if scales.is_empty() {
        return Err(Error::Empty("no inference scales".into()));
    }
    let mut acc: Option<Tensor4> = None;
    for &scale in scales {
        let p = predict_probs(images, cfg, params, scale)?;
        acc = Some(match acc {
            None => p,
            Some(mut a) => {
                a.add_assign(&p);
                a
            }
        });
    }
    let probs = acc.expect("at least one scale").scale(1.0 / scales.len() as f64);
    Ok(argmax(&probs))
}

pub fn argmax(scores: &Tensor4) -> LabelMap {
    let s = scores.shape();
    let p = s.plane();
    let mut data = Vec::with_capacity(s.n * p);
    for n in 0..s.n {
        let item = scores.item(n);
        for i in 0..p {
            let mut best = 0;
            for k in 1..s.c {
                if item[k * p + i] > item[best * p + i] {
                    best = k;
                }
            }
            data.push(best as u32);
        }
    }
    LabelMap::new(s.n, s.h, s.w, data).expect("sized above")
}

/// Confusion matrix of the model over `samples`, evaluated `batch` at a time.
pub fn confusion_over(
    samples: &[Sample],
    cfg: &ModelConfig,
    params: &ModelParams,
    scales: &[f64],
    batch: usize,
) -> Result<ConfusionMatrix> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let mut params = params.clone();
    let mut cm = ConfusionMatrix::new(cfg.classes);
    let mut start = 0;
    while start < samples.len() {
        let size = samples[start].image.shape().spatial();
        let mut end = start + 1;
        while end < samples.len() && end - start < batch.max(1) && samples[end].image.shape().spatial() == size {
            end += 1;
        }
        let refs: Vec<&Sample> = samples[start..end].iter().collect();
        let (x, y) = collate(&refs)?;
        let pred = predict(&x, cfg, &mut params, scales)?;
        cm.accumulate(&pred, &y)?;
        start = end;
    }
    Ok(cm)
}

pub fn evaluate(samples: &[Sample], cfg: &ModelConfig, params: &ModelParams, scales: &[f64], batch: usize) -> Result<Metrics> {
    confusion_over(samples, cfg, params, scales, batch)?.report()
}
