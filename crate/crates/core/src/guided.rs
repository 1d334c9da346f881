//! Classical guided filter and guided joint upsampling.
//!
//! Inside every `(2r+1) x (2r+1)` window `w_k` the output is modelled as an
//! affine function of the guide, `O = a_k I + b_k`. The coefficients are the
//! ridge-regularized least-squares fit of the target `p`:
//!
//! ```text
//! a_k = cov_k(I, p) / (var_k(I) + eps)
//! b_k = mean_k(p) - a_k * mean_k(I)
//! ```
//!
//! Each pixel then uses the average of the coefficients of all windows that
//! cover it, `O_i = mean_a(i) * I_i + mean_b(i)`. Windows are clipped at the
//! image border and normalized by their true area.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::bilinear_resize_forward;
use crate::rng::SplitMix64;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidedFilterConfig {
    pub radius: usize,
    pub epsilon: f64,
}

impl Default for GuidedFilterConfig {
    /// `r = 4`, `eps = 1e-4` for images scaled to `[0, 1]`.
    fn default() -> Self {
        Self {
            radius: 4,
            epsilon: 1e-4,
        }
    }
}

impl GuidedFilterConfig {
    pub fn new(radius: usize, epsilon: f64) -> Result<Self> {
        let cfg = Self { radius, epsilon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.radius == 0 {
            return Err(Error::InvalidConfig("guided filter radius must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "guided filter epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Window-averaged coefficients, one pair per pixel.
#[derive(Clone, Debug)]
pub struct CoefficientMaps {
    pub a_bar: Tensor4,
    pub b_bar: Tensor4,
}

/// Summed-area table with a zero first row and column.
struct Integral {
    w1: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(plane: &[f64], h: usize, w: usize) -> Self {
        let w1 = w + 1;
        let mut sums = vec![0.0; (h + 1) * w1];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += plane[y * w + x];
                sums[(y + 1) * w1 + x + 1] = sums[y * w1 + x + 1] + row;
            }
        }
        Self { w1, sums }
    }

    /// Sum over `[y0, y1) x [x0, x1)`.
    fn rect(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> f64 {
        let s = &self.sums;
        s[y1 * self.w1 + x1] - s[y0 * self.w1 + x1] - s[y1 * self.w1 + x0] + s[y0 * self.w1 + x0]
    }
}

fn box_mean_plane(plane: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let table = Integral::new(plane, h, w);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let area = ((y1 - y0) * (x1 - x0)) as f64;
            out[y * w + x] = table.rect(y0, y1, x0, x1) / area;
        }
    }
    out
}

/// Mean over the clipped `(2r+1)^2` window around every pixel, per plane, in
/// `O(h*w)` through an integral image.
pub fn box_mean(x: &Tensor4, r: usize) -> Result<Tensor4> {
    if r == 0 {
        return Err(Error::InvalidArgument("box radius must be at least 1".into()));
    }
    let s = x.shape();
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let m = box_mean_plane(x.plane(n, c), s.h, s.w, r);
            out.plane_mut(n, c).copy_from_slice(&m);
        }
    }
    Ok(out)
}

fn mul_planes(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Per-plane coefficients `(mean_a, mean_b)` for guide `i` and target `p`.
fn coefficients(i: &[f64], p: &[f64], h: usize, w: usize, cfg: &GuidedFilterConfig) -> (Vec<f64>, Vec<f64>) {
    let r = cfg.radius;
    let mean_i = box_mean_plane(i, h, w, r);
    let mean_p = box_mean_plane(p, h, w, r);
    let corr_ip = box_mean_plane(&mul_planes(i, p), h, w, r);
    let corr_ii = box_mean_plane(&mul_planes(i, i), h, w, r);
    let mut a = vec![0.0; h * w];
    let mut b = vec![0.0; h * w];
    for k in 0..h * w {
        let var = (corr_ii[k] - mean_i[k] * mean_i[k]).max(0.0);
        let cov = corr_ip[k] - mean_i[k] * mean_p[k];
        a[k] = cov / (var + cfg.epsilon);
        b[k] = mean_p[k] - a[k] * mean_i[k];
    }
    (box_mean_plane(&a, h, w, r), box_mean_plane(&b, h, w, r))
}

/// Guide channel used for target channel `c`: shared when the guide has one channel.
fn guide_channel(guide: Shape4, c: usize) -> usize {
    if guide.c == 1 {
        0
    } else {
        c
    }
}

fn check_guide(guide: Shape4, target: Shape4, op: &str, spatial: bool) -> Result<()> {
    if guide.n != target.n {
        return Err(Error::shape(op, "batch", guide.n, target.n));
    }
    if guide.c != 1 && guide.c != target.c {
        return Err(Error::shape(op, "channels", target.c, guide.c));
    }
    if spatial {
        if guide.h != target.h {
            return Err(Error::shape(op, "height", guide.h, target.h));
        }
        if guide.w != target.w {
            return Err(Error::shape(op, "width", guide.w, target.w));
        }
    }
    Ok(())
}

/// Averaged coefficient maps at the guide's resolution.
pub fn guided_coefficients(guide: &Tensor4, target: &Tensor4, cfg: &GuidedFilterConfig) -> Result<CoefficientMaps> {
    cfg.validate()?;
    let (gs, ts) = (guide.shape(), target.shape());
    check_guide(gs, ts, "guided_filter", true)?;
    let mut a_bar = Tensor4::zeros(ts);
    let mut b_bar = Tensor4::zeros(ts);
    for n in 0..ts.n {
        for c in 0..ts.c {
            let (a, b) = coefficients(guide.plane(n, guide_channel(gs, c)), target.plane(n, c), ts.h, ts.w, cfg);
            a_bar.plane_mut(n, c).copy_from_slice(&a);
            b_bar.plane_mut(n, c).copy_from_slice(&b);
        }
    }
    Ok(CoefficientMaps { a_bar, b_bar })
}

fn apply(coeffs: &CoefficientMaps, guide: &Tensor4) -> Tensor4 {
    let s = coeffs.a_bar.shape();
    let gs = guide.shape();
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let g = guide.plane(n, guide_channel(gs, c));
            let a = coeffs.a_bar.plane(n, c);
            let b = coeffs.b_bar.plane(n, c);
            for (k, dst) in out.plane_mut(n, c).iter_mut().enumerate() {
                *dst = a[k] * g[k] + b[k];
            }
        }
    }
    out
}

/// Edge-preserving filtering of `target` steered by `guide`.
///
/// The guide has one channel (shared by every target channel) or as many
/// channels as the target (paired channelwise).
pub fn guided_filter(guide: &Tensor4, target: &Tensor4, cfg: &GuidedFilterConfig) -> Result<Tensor4> {
    let coeffs = guided_coefficients(guide, target, cfg)?;
    Ok(apply(&coeffs, guide))
}

/// Upsamples `target_lo` to the resolution of `guide_hi`.
///
/// The guide is bilinearly reduced to the target's size, the averaged
/// coefficients are fitted there, bilinearly enlarged to the guide's size and
/// applied to the full-resolution guide.
pub fn joint_upsample(target_lo: &Tensor4, guide_hi: &Tensor4, cfg: &GuidedFilterConfig) -> Result<Tensor4> {
    cfg.validate()?;
    let (ts, gs) = (target_lo.shape(), guide_hi.shape());
    check_guide(gs, ts, "joint_upsample", false)?;
    if gs.h % ts.h != 0 || gs.w % ts.w != 0 || gs.h < ts.h || gs.w < ts.w {
        return Err(Error::InvalidArgument(format!(
            "guide size {}x{} is not an integer multiple of target size {}x{}",
            gs.h, gs.w, ts.h, ts.w
        )));
    }
    let guide_lo = bilinear_resize_forward(guide_hi, ts.h, ts.w)?;
    let lo = guided_coefficients(&guide_lo, target_lo, cfg)?;
    let hi = CoefficientMaps {
        a_bar: bilinear_resize_forward(&lo.a_bar, gs.h, gs.w)?,
        b_bar: bilinear_resize_forward(&lo.b_bar, gs.h, gs.w)?,
    };
    Ok(apply(&hi, guide_hi))
}

/// Peak signal-to-noise ratio in dB for signals with the given peak value.
pub fn psnr(reference: &Tensor4, estimate: &Tensor4, peak: f64) -> Result<f64> {
    let diff = reference.sub(estimate)?;
    let mse = diff.data().iter().map(|v| v * v).sum::<f64>() / diff.data().len().max(1) as f64;
    Ok(10.0 * (peak * peak / mse).log10())
}

/// A synthetic joint-upsampling test case.
#[derive(Clone, Debug)]
pub struct StepEdgePair {
    /// Full-resolution single-channel guide.
    pub guide: Tensor4,
    /// Bilinear reduction of `reference` by the pair's factor.
    pub target_lo: Tensor4,
    /// Full-resolution ground truth.
    pub reference: Tensor4,
}

/// A straight edge at a random angle and offset, seen by a noisy gray guide
/// and by a three-channel target with independent colors on either side.
pub fn step_edge_pair(size: usize, factor: usize, rng: &mut SplitMix64) -> Result<StepEdgePair> {
    if factor == 0 || size == 0 || !size.is_multiple_of(factor) {
        return Err(Error::InvalidArgument(format!("size {size} must be a positive multiple of factor {factor}")));
    }
    let theta = rng.uniform(0.0, std::f64::consts::PI);
    let (nx, ny) = (theta.cos(), theta.sin());
    let half = size as f64 / 2.0;
    let offset = rng.uniform(-0.25, 0.25) * size as f64;
    let (g_in, g_out) = {
        let a = rng.uniform(0.0, 0.4);
        let b = rng.uniform(0.6, 1.0);
        if rng.bernoulli(0.5) { (a, b) } else { (b, a) }
    };
    let colors: [(f64, f64); 3] = std::array::from_fn(|_| (rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)));
    let inside = |y: usize, x: usize| (x as f64 + 0.5 - half) * nx + (y as f64 + 0.5 - half) * ny > offset;
    let mut guide = Tensor4::from_fn(Shape4::new(1, 1, size, size), |_, _, y, x| if inside(y, x) { g_in } else { g_out });
    for v in guide.data_mut() {
        *v += rng.normal(0.0, 0.01);
    }
    let reference = Tensor4::from_fn(Shape4::new(1, 3, size, size), |_, c, y, x| {
        if inside(y, x) {
            colors[c].0
        } else {
            colors[c].1
        }
    });
    let target_lo = bilinear_resize_forward(&reference, size / factor, size / factor)?;
    Ok(StepEdgePair {
        guide,
        target_lo,
        reference,
    })
}
