//! Mean per-pixel softmax cross-entropy with an ignore index.

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::Tensor4;

#[derive(Clone, Debug)]
pub struct LossValue {
    pub loss: f64,
    /// Gradient of `loss` with respect to the logits.
    pub grad: Tensor4,
    /// Number of non-ignored pixels the mean runs over.
    pub count: usize,
}

/// Channelwise softmax, stabilized by subtracting the per-pixel maximum.
pub fn softmax(logits: &Tensor4) -> Tensor4 {
    let s = logits.shape();
    let p = s.plane();
    let mut out = Tensor4::zeros(s);
    let mut buf = vec![0.0; s.c];
    for n in 0..s.n {
        let src = logits.item(n);
        let dst = out.item_mut(n);
        for i in 0..p {
            let mut max = f64::NEG_INFINITY;
            for (k, slot) in buf.iter_mut().enumerate() {
                *slot = src[k * p + i];
                max = max.max(*slot);
            }
            let mut z = 0.0;
            for slot in buf.iter_mut() {
                *slot = (*slot - max).exp();
                z += *slot;
            }
            for (k, v) in buf.iter().enumerate() {
                dst[k * p + i] = v / z;
            }
        }
    }
    out
}

pub fn softmax_cross_entropy(logits: &Tensor4, labels: &LabelMap) -> Result<LossValue> {
    let s = logits.shape();
    let (ln, lh, lw) = labels.dims();
    for (dim, e, f) in [("batch", s.n, ln), ("height", s.h, lh), ("width", s.w, lw)] {
        if e != f {
            return Err(Error::shape("softmax_cross_entropy", dim, e, f));
        }
    }
    labels.validate(s.c)?;
    let ignore = labels.ignore_index();
    let count = labels.data().iter().filter(|&&v| v != ignore).count();
    if count == 0 {
        return Err(Error::Empty("every pixel carries the ignore index".into()));
    }
    let p = s.plane();
    let inv = 1.0 / count as f64;
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for n in 0..s.n {
        let src = logits.item(n);
        let lab = labels.item(n);
        let g = grad.item_mut(n);
        for i in 0..p {
            let t = lab[i];
            if t == ignore {
                for k in 0..s.c {
                    g[k * p + i] = 0.0;
                }
                continue;
            }
            let max = (0..s.c).map(|k| src[k * p + i]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..s.c).map(|k| (src[k * p + i] - max).exp()).sum::<f64>().ln();
            loss += lse - src[t as usize * p + i];
            for k in 0..s.c {
                let one_hot = if k == t as usize { 1.0 } else { 0.0 };
                g[k * p + i] = (g[k * p + i] - one_hot) * inv;
            }
        }
    }
    Ok(LossValue {
        loss: loss * inv,
        grad,
        count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::tensor::Shape4;
    use crate::testutil::{check_coords, random};

    fn labels(n: usize, h: usize, w: usize, k: u32, seed: u64, ignore_every: usize) -> LabelMap {
        let mut rng = SplitMix64::new(seed);
        let data = (0..n * h * w)
            .map(|i| if ignore_every > 0 && i % ignore_every == 0 { 255 } else { rng.below(k as usize) as u32 })
            .collect();
        LabelMap::new(n, h, w, data).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in 2..7 {
            let logits = Tensor4::full(Shape4::new(2, k, 3, 3), 0.3);
            let l = softmax_cross_entropy(&logits, &labels(2, 3, 3, k as u32, 1, 0)).unwrap();
            assert!((l.loss - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_true_class() {
        let lab = labels(1, 4, 4, 3, 2, 0);
        let logits = Tensor4::from_fn(Shape4::new(1, 3, 4, 4), |_, c, y, x| if c as u32 == lab.get(0, y, x) { 50.0 } else { 0.0 });
        assert!(softmax_cross_entropy(&logits, &lab).unwrap().loss < 1e-9);
    }

    #[test]
    fn errors() {
        let logits = Tensor4::zeros(Shape4::new(1, 3, 2, 2));
        let bad = LabelMap::new(1, 2, 2, vec![0, 1, 3, 0]).unwrap();
        assert!(matches!(softmax_cross_entropy(&logits, &bad), Err(Error::ClassOutOfRange { value: 3, classes: 3 })));
        let all_ignored = LabelMap::filled(1, 2, 2, 255);
        assert!(matches!(softmax_cross_entropy(&logits, &all_ignored), Err(Error::Empty(_))));
    }

    #[test]
    fn gradient_rows_sum_to_zero_and_ignored_pixels_are_zero() {
        let logits = random(Shape4::new(2, 4, 3, 5), 3).scale(4.0);
        let lab = labels(2, 3, 5, 4, 4, 3);
        let l = softmax_cross_entropy(&logits, &lab).unwrap();
        for n in 0..2 {
            for y in 0..3 {
                for x in 0..5 {
                    let s: f64 = (0..4).map(|c| l.grad.get(n, c, y, x)).sum();
                    assert!(s.abs() < 1e-15);
                    if lab.get(n, y, x) == 255 {
                        assert!((0..4).all(|c| l.grad.get(n, c, y, x) == 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(8);
        for trial in 0..20 {
            let shape = Shape4::new(1 + rng.below(2), 2 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4));
            let logits = random(shape, trial).scale(3.0);
            let lab = labels(shape.n, shape.h, shape.w, shape.c as u32, trial, 0);
            let l = softmax_cross_entropy(&logits, &lab).unwrap();
            let e = check_coords(
                |v| softmax_cross_entropy(&Tensor4::from_vec(shape, v.to_vec()).unwrap(), &lab).unwrap().loss,
                logits.data(),
                l.grad.data(),
                usize::MAX,
                &mut rng,
            );
            assert!(e < 1e-4, "{e}");
        }
    }
}
