//! Dense NCHW tensors.
//!
//! Data is stored row-major as `[n][c][h][w]` in `f64`. Every structural
//! operation returns a fresh tensor and leaves its inputs untouched.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.checked_numel().expect("tensor shape overflows usize")
    }

    pub fn checked_numel(&self) -> Option<usize> {
        self.n
            .checked_mul(self.c)?
            .checked_mul(self.h)?
            .checked_mul(self.w)
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn with_channels(self, c: usize) -> Self {
        Self { c, ..self }
    }

    pub fn with_spatial(self, h: usize, w: usize) -> Self {
        Self { h, w, ..self }
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Distribution for [`Tensor4::seeded_fill`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
}

#[derive(Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor4")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor4 {
    pub fn zeros(shape: Shape4) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape4, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        let expected = shape
            .checked_numel()
            .ok_or_else(|| Error::InvalidArgument(format!("shape {shape} overflows")))?;
        if data.len() != expected {
            return Err(Error::shape("from_vec", "length", expected, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("from_vec input at index {pos}")));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every index.
    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// Unchecked constructor for kernels that produce finite data by construction.
    pub(crate) fn from_raw(shape: Shape4, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        Self { shape, data }
    }

    /// Deterministic random fill; see [`crate::rng`] for the generator contract.
    pub fn seeded_fill(shape: Shape4, seed: u64, dist: Distribution) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let len = shape.numel();
        let data = match dist {
            Distribution::Uniform { lo, hi } => {
                if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "uniform bounds must satisfy lo <= hi, got [{lo}, {hi}]"
                    )));
                }
                (0..len).map(|_| rng.uniform(lo, hi)).collect()
            }
            Distribution::Normal { mean, std } => {
                if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "normal parameters must be finite with std >= 0, got ({mean}, {std})"
                    )));
                }
                (0..len).map(|_| rng.normal(mean, std)).collect()
            }
        };
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = &self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// The `h*w` plane of item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub(crate) fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of batch item `n`, contiguous.
    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub(crate) fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.shape.c * self.shape.plane();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor4, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor4> {
        self.check_same_shape(other, op)?;
        Ok(Tensor4 {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor4 {
        self.map(|v| v * s)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor4) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor4, op: &str) -> Result<()> {
        self.expect_shape(other.shape, op)
    }

    /// Errors with the first differing dimension when `self` is not `expected`.
    pub fn expect_shape(&self, expected: Shape4, op: &str) -> Result<()> {
        let (a, b) = (expected, self.shape);
        for (dim, x, y) in [("batch", a.n, b.n), ("channels", a.c, b.c), ("height", a.h, b.h), ("width", a.w, b.w)] {
            if x != y {
                return Err(Error::shape(op, dim, x, y));
            }
        }
        Ok(())
    }

    /// Channel concatenation: channels of `self` precede channels of `other`.
    pub fn concat_channels(&self, other: &Tensor4) -> Result<Tensor4> {
        let (a, b) = (self.shape, other.shape);
        for (dim, x, y) in [("batch", a.n, b.n), ("height", a.h, b.h), ("width", a.w, b.w)] {
            if x != y {
                return Err(Error::shape("concat_channels", dim, x, y));
            }
        }
        let shape = a.with_channels(a.c + b.c);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..a.n {
            data.extend_from_slice(self.item(n));
            data.extend_from_slice(other.item(n));
        }
        Ok(Tensor4 { shape, data })
    }

    /// Concatenates several tensors along the channel axis, in order.
    pub fn concat_many(parts: &[&Tensor4]) -> Result<Tensor4> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("concat of zero tensors".into()))?;
        let s = first.shape;
        let mut c = 0;
        for t in parts {
            let ts = t.shape;
            for (dim, x, y) in [("batch", s.n, ts.n), ("height", s.h, ts.h), ("width", s.w, ts.w)] {
                if x != y {
                    return Err(Error::shape("concat_channels", dim, x, y));
                }
            }
            c += ts.c;
        }
        let shape = s.with_channels(c);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..s.n {
            for t in parts {
                data.extend_from_slice(t.item(n));
            }
        }
        Ok(Tensor4 { shape, data })
    }

    /// Splits along channels into consecutive blocks of the given sizes.
    pub fn split_sizes(&self, sizes: &[usize]) -> Result<Vec<Tensor4>> {
        let total: usize = sizes.iter().sum();
        if total != self.shape.c {
            return Err(Error::shape("split_channels", "channels", self.shape.c, total));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let part = self.slice_channels(start..start + len);
                start += len;
                part
            })
            .collect()
    }

    /// Copies channels `range` into a new tensor.
    pub fn slice_channels(&self, range: Range<usize>) -> Result<Tensor4> {
        let s = self.shape;
        if range.start > range.end || range.end > s.c {
            return Err(Error::InvalidArgument(format!(
                "channel range {range:?} out of bounds for {} channels",
                s.c
            )));
        }
        let shape = s.with_channels(range.len());
        let p = s.plane();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..s.n {
            let item = self.item(n);
            data.extend_from_slice(&item[range.start * p..range.end * p]);
        }
        Ok(Tensor4 { shape, data })
    }

    /// Splits into the first `at` channels and the rest.
    pub fn split_channels(&self, at: usize) -> Result<(Tensor4, Tensor4)> {
        Ok((self.slice_channels(0..at)?, self.slice_channels(at..self.shape.c)?))
    }

    /// Zero border of width `pad` on both spatial axes.
    pub fn pad2d(&self, pad: usize) -> Tensor4 {
        let s = self.shape;
        let (h, w) = (s.h + 2 * pad, s.w + 2 * pad);
        let mut out = Tensor4::zeros(s.with_spatial(h, w));
        for n in 0..s.n {
            for c in 0..s.c {
                let src = self.plane(n, c);
                let dst = out.plane_mut(n, c);
                for y in 0..s.h {
                    let d = (y + pad) * w + pad;
                    dst[d..d + s.w].copy_from_slice(&src[y * s.w..(y + 1) * s.w]);
                }
            }
        }
        out
    }

    /// Removes `amount` pixels from every spatial border.
    pub fn crop2d(&self, amount: usize) -> Result<Tensor4> {
        let s = self.shape;
        if 2 * amount > s.h || 2 * amount > s.w {
            return Err(Error::InvalidArgument(format!(
                "cannot crop {amount} from each side of {}x{}",
                s.h, s.w
            )));
        }
        self.window(amount, amount, s.h - 2 * amount, s.w - 2 * amount)
    }

    /// Spatial window `[y0, y0+h) x [x0, x0+w)`.
    pub fn window(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor4> {
        let s = self.shape;
        if y0 + h > s.h || x0 + w > s.w {
            return Err(Error::InvalidArgument(format!(
                "window {h}x{w} at ({y0}, {x0}) exceeds {}x{}",
                s.h, s.w
            )));
        }
        let shape = s.with_spatial(h, w);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..s.n {
            for c in 0..s.c {
                let src = self.plane(n, c);
                for y in y0..y0 + h {
                    data.extend_from_slice(&src[y * s.w + x0..y * s.w + x0 + w]);
                }
            }
        }
        Ok(Tensor4 { shape, data })
    }

    /// Batch items `range` as a new tensor.
    pub fn slice_batch(&self, range: Range<usize>) -> Result<Tensor4> {
        let s = self.shape;
        if range.start > range.end || range.end > s.n {
            return Err(Error::InvalidArgument(format!(
                "batch range {range:?} out of bounds for {} items",
                s.n
            )));
        }
        let len = s.c * s.plane();
        Ok(Tensor4 {
            shape: Shape4 { n: range.len(), ..s },
            data: self.data[range.start * len..range.end * len].to_vec(),
        })
    }

    /// Stacks single-item tensors along the batch axis.
    pub fn stack(items: &[Tensor4]) -> Result<Tensor4> {
        let first = items
            .first()
            .ok_or_else(|| Error::Empty("stack of zero tensors".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            let ts = t.shape;
            for (dim, x, y) in [("channels", s.c, ts.c), ("height", s.h, ts.h), ("width", s.w, ts.w)] {
                if x != y {
                    return Err(Error::shape("stack", dim, x, y));
                }
            }
            n += ts.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor4 {
            shape: Shape4 { n, ..s },
            data,
        })
    }
}
