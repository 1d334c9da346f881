//! Bilinear resampling with half-pixel centers.
//!
//! Output index `i` samples source coordinate `(i + 0.5) * in / out - 0.5`,
//! clamped to `[0, in - 1]`, and blends the two neighbouring source pixels.
//! The backward pass scatters gradients with the same weights.

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(len_in: usize, len_out: usize) -> Vec<Tap> {
    let scale = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len_in - 1) as f64);
            let lo = s.floor() as usize;
            Tap {
                lo,
                hi: (lo + 1).min(len_in - 1),
                frac: s - lo as f64,
            }
        })
        .collect()
}

fn check_target(h: usize, w: usize, th: usize, tw: usize) -> Result<()> {
    if th == 0 || tw == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "bilinear resize needs nonempty source and target, got {h}x{w} -> {th}x{tw}"
        )));
    }
    Ok(())
}

pub fn bilinear_resize_forward(x: &Tensor4, th: usize, tw: usize) -> Result<Tensor4> {
    let s = x.shape();
    check_target(s.h, s.w, th, tw)?;
    if (s.h, s.w) == (th, tw) {
        return Ok(x.clone());
    }
    let ty = taps(s.h, th);
    let tx = taps(s.w, tw);
    let mut out = Tensor4::zeros(s.with_spatial(th, tw));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (y, ry) in ty.iter().enumerate() {
                let r0 = &src[ry.lo * s.w..(ry.lo + 1) * s.w];
                let r1 = &src[ry.hi * s.w..(ry.hi + 1) * s.w];
                for (x_, rx) in tx.iter().enumerate() {
                    let top = r0[rx.lo] * (1.0 - rx.frac) + r0[rx.hi] * rx.frac;
                    let bottom = r1[rx.lo] * (1.0 - rx.frac) + r1[rx.hi] * rx.frac;
                    dst[y * tw + x_] = top * (1.0 - ry.frac) + bottom * ry.frac;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`bilinear_resize_forward`] for an input of shape `x_shape`.
pub fn bilinear_resize_backward(x_shape: Shape4, grad_out: &Tensor4) -> Result<Tensor4> {
    let g = grad_out.shape();
    check_target(x_shape.h, x_shape.w, g.h, g.w)?;
    grad_out.expect_shape(x_shape.with_spatial(g.h, g.w), "bilinear_resize_backward")?;
    if (x_shape.h, x_shape.w) == (g.h, g.w) {
        return Ok(grad_out.clone());
    }
    let ty = taps(x_shape.h, g.h);
    let tx = taps(x_shape.w, g.w);
    let w = x_shape.w;
    let mut out = Tensor4::zeros(x_shape);
    for n in 0..x_shape.n {
        for c in 0..x_shape.c {
            let src = grad_out.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (y, ry) in ty.iter().enumerate() {
                for (x_, rx) in tx.iter().enumerate() {
                    let v = src[y * g.w + x_];
                    let top = v * (1.0 - ry.frac);
                    let bottom = v * ry.frac;
                    dst[ry.lo * w + rx.lo] += top * (1.0 - rx.frac);
                    dst[ry.lo * w + rx.hi] += top * rx.frac;
                    dst[ry.hi * w + rx.lo] += bottom * (1.0 - rx.frac);
                    dst[ry.hi * w + rx.hi] += bottom * rx.frac;
                }
            }
        }
    }
    Ok(out)
}
