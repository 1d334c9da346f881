//! Confusion-matrix segmentation metrics.
//!
//! Classes with no ground-truth pixels are left out of the per-class means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelMap;

/// `counts[i * k + j]` = pixels of true class `i` predicted as `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::shape("confusion", "entries", classes * classes, counts.len()));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.classes..(i + 1) * self.classes].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, j)).sum()
    }

    /// Adds one pixel per non-ignored truth value. `pred` must not contain
    /// the ignore index.
    pub fn accumulate(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        let (pn, ph, pw) = pred.dims();
        let (tn, th, tw) = truth.dims();
        for (dim, e, f) in [("batch", tn, pn), ("height", th, ph), ("width", tw, pw)] {
            if e != f {
                return Err(Error::shape("confusion", dim, e, f));
            }
        }
        let k = self.classes;
        let ignore = truth.ignore_index();
        for (&p, &t) in pred.data().iter().zip(truth.data()) {
            if t == ignore {
                continue;
            }
            if t as usize >= k {
                return Err(Error::ClassOutOfRange { value: t as usize, classes: k });
            }
            if p as usize >= k {
                return Err(Error::ClassOutOfRange { value: p as usize, classes: k });
            }
        }
        for (&p, &t) in pred.data().iter().zip(truth.data()) {
            if t != ignore {
                self.counts[t as usize * k + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape("confusion merge", "classes", self.classes, other.classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn require_data(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::Empty("confusion matrix has no pixels".into()));
        }
        Ok(())
    }

    pub fn pixel_accuracy(&self) -> Result<f64> {
        self.require_data()?;
        Ok(self.trace() as f64 / self.total() as f64)
    }

    pub fn mean_pixel_accuracy(&self) -> Result<f64> {
        self.require_data()?;
        let per: Vec<f64> = (0..self.classes)
            .filter_map(|i| {
                let row = self.row_sum(i);
                (row > 0).then(|| self.get(i, i) as f64 / row as f64)
            })
            .collect();
        Ok(per.iter().sum::<f64>() / per.len() as f64)
    }

    /// IoU per class; `None` when the class never occurs in the ground truth.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|i| {
                let row = self.row_sum(i);
                if row == 0 {
                    return None;
                }
                let tp = self.get(i, i);
                let union = row + self.col_sum(i) - tp;
                Some(tp as f64 / union as f64)
            })
            .collect()
    }

    pub fn mean_iou(&self) -> Result<f64> {
        self.require_data()?;
        let present: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }

    pub fn report(&self) -> Result<Metrics> {
        let pixel_accuracy = self.pixel_accuracy()?;
        let mean_iou = self.mean_iou()?;
        Ok(Metrics {
            pixel_accuracy,
            mean_pixel_accuracy: self.mean_pixel_accuracy()?,
            mean_iou,
            final_score: final_score(mean_iou, pixel_accuracy),
            per_class_iou: self.per_class_iou(),
        })
    }
}

/// Serialized metrics object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub pixel_accuracy: f64,
    pub mean_pixel_accuracy: f64,
    pub mean_iou: f64,
    pub final_score: f64,
    pub per_class_iou: Vec<Option<f64>>,
}

/// Average of mean IoU and pixel accuracy.
pub fn final_score(miou: f64, pa: f64) -> f64 {
    (miou + pa) / 2.0
}

/// Rounds half away from zero at `decimals` places, as printed tables do.
///
/// `x` is first printed with 12 fractional digits, which absorbs binary
/// representation error: `(46.41 + 82.86) / 2` evaluates to
/// `64.63499999999999` but prints as `64.635000000000` and rounds to 64.64.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let text = format!("{:.12}", x.abs());
    let (int_part, frac_part) = text.split_once('.').unwrap_or((&text, ""));
    let d = decimals as usize;
    let frac_part = frac_part.trim_end_matches('0');
    if frac_part.len() <= d {
        return text.parse::<f64>().unwrap().copysign(x);
    }
    let mut digits: Vec<u8> = int_part.bytes().chain(frac_part.bytes().take(d)).map(|b| b - b'0').collect();
    if frac_part.as_bytes()[d] >= b'5' {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - d;
    let s: String = digits.iter().map(|&v| char::from(b'0' + v)).collect();
    let rounded: f64 = format!("{}.{}", &s[..split], &s[split..]).parse().unwrap();
    rounded.copysign(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use ducdlc_oracles::confusion;

    fn cm(classes: usize, counts: &[u64]) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(classes, counts.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn two_class_hand_values() {
        let m = cm(2, &[3, 1, 2, 4]);
        assert!(close(m.pixel_accuracy().unwrap(), 0.7));
        assert!(close(m.mean_pixel_accuracy().unwrap(), (3.0 / 4.0 + 4.0 / 6.0) / 2.0));
        assert!(close(m.mean_iou().unwrap(), (3.0 / 6.0 + 4.0 / 7.0) / 2.0));
    }

    #[test]
    fn degenerate_matrices() {
        let perfect = cm(3, &[5, 0, 0, 0, 2, 0, 0, 0, 9]);
        assert_eq!(perfect.pixel_accuracy().unwrap(), 1.0);
        assert_eq!(perfect.mean_pixel_accuracy().unwrap(), 1.0);
        assert_eq!(perfect.mean_iou().unwrap(), 1.0);
        let wrong = cm(2, &[0, 4, 6, 0]);
        assert_eq!(wrong.pixel_accuracy().unwrap(), 0.0);
        assert_eq!(wrong.mean_iou().unwrap(), 0.0);
        assert!(ConfusionMatrix::new(3).pixel_accuracy().is_err());
        assert!(ConfusionMatrix::new(3).mean_iou().is_err());
    }

    #[test]
    fn absent_class_is_excluded() {
        let m = cm(3, &[3, 1, 0, 2, 4, 0, 0, 0, 0]);
        assert!(close(m.mean_pixel_accuracy().unwrap(), (3.0 / 4.0 + 4.0 / 6.0) / 2.0));
        assert_eq!(m.per_class_iou()[2], None);
    }

    #[test]
    fn final_score_rounding() {
        assert_eq!(round_half_up(final_score(46.41, 82.86), 2), 64.64);
        assert_eq!(round_half_up(final_score(43.82, 81.23), 2), 62.53);
        assert_eq!(final_score(1.0, 1.0), 1.0);
        assert_eq!(round_half_up(2.675, 2), 2.68);
        assert_eq!(round_half_up(-1.005, 2), -1.01);
        assert_eq!(round_half_up(9.995, 2), 10.0);
        assert_eq!(round_half_up(0.5, 0), 1.0);
        assert_eq!(round_half_up(1.2, 3), 1.2);
    }

    fn random_maps(rng: &mut SplitMix64, k: usize, n: usize) -> (LabelMap, LabelMap) {
        let (h, w) = (1 + rng.below(9), 1 + rng.below(9));
        let pred: Vec<u32> = (0..n * h * w).map(|_| rng.below(k) as u32).collect();
        let truth: Vec<u32> = (0..n * h * w)
            .map(|_| if rng.bernoulli(0.1) { 255 } else { rng.below(k) as u32 })
            .collect();
        (LabelMap::new(n, h, w, pred).unwrap(), LabelMap::new(n, h, w, truth).unwrap())
    }

    #[test]
    fn matches_counting_oracle() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..50 {
            let k = 2 + rng.below(5);
            let (pred, truth) = random_maps(&mut rng, k, 2);
            let mut m = ConfusionMatrix::new(k);
            m.accumulate(&pred, &truth).unwrap();
            let p: Vec<usize> = pred.data().iter().map(|&v| v as usize).collect();
            let t: Vec<usize> = truth.data().iter().map(|&v| v as usize).collect();
            assert_eq!(m.counts(), confusion(&p, &t, k, 255).as_slice());
        }
    }

    #[test]
    fn masked_and_perfect_accumulation() {
        let truth = LabelMap::filled(1, 3, 3, 255);
        let pred = LabelMap::filled(1, 3, 3, 1);
        let mut m = ConfusionMatrix::new(2);
        m.accumulate(&pred, &truth).unwrap();
        assert_eq!(m.total(), 0);
        let same = LabelMap::filled(1, 3, 3, 1);
        m.accumulate(&same, &same).unwrap();
        assert_eq!(m.trace(), 9);
        assert_eq!(m.total(), 9);
    }

    #[test]
    fn accumulate_errors() {
        let mut m = ConfusionMatrix::new(2);
        let a = LabelMap::filled(1, 2, 2, 0);
        assert!(m.accumulate(&a, &LabelMap::filled(1, 2, 3, 0)).is_err());
        assert!(m.accumulate(&a, &LabelMap::filled(1, 2, 2, 5)).is_err());
        assert!(m.accumulate(&LabelMap::filled(1, 2, 2, 2), &a).is_err());
        assert_eq!(m.total(), 0);
    }

    #[test]
    fn order_independence_and_merge() {
        let mut rng = SplitMix64::new(8);
        let batches: Vec<_> = (0..6).map(|_| random_maps(&mut rng, 4, 1)).collect();
        let mut forward = ConfusionMatrix::new(4);
        for (p, t) in &batches {
            forward.accumulate(p, t).unwrap();
        }
        let mut backward = ConfusionMatrix::new(4);
        for (p, t) in batches.iter().rev() {
            backward.accumulate(p, t).unwrap();
        }
        assert_eq!(forward, backward);
        let mut left = ConfusionMatrix::new(4);
        let mut right = ConfusionMatrix::new(4);
        for (i, (p, t)) in batches.iter().enumerate() {
            if i % 2 == 0 { &mut left } else { &mut right }.accumulate(p, t).unwrap();
        }
        left.merge(&right).unwrap();
        assert_eq!(left, forward);
        let r = forward.report().unwrap();
        for v in [r.pixel_accuracy, r.mean_pixel_accuracy, r.mean_iou, r.final_score] {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn json_shape() {
        let r = cm(3, &[3, 1, 0, 2, 4, 0, 0, 0, 0]).report().unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let obj = v.as_object().unwrap();
        for key in ["pixel_accuracy", "mean_pixel_accuracy", "mean_iou", "final_score", "per_class_iou"] {
            assert!(obj.contains_key(key), "{key}");
        }
        assert_eq!(v["per_class_iou"].as_array().unwrap().len(), 3);
        assert!(v["per_class_iou"][2].is_null());
    }
}
