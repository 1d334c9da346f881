//! Dilated, strided 2-D cross-correlation (no kernel flip).
//!
//! Each batch item is unrolled into a column matrix with rows ordered
//! `(in_channel, ky, kx)` and multiplied by the `out x (in*k*k)` weight matrix
//! through [`gemm`](super::gemm). Every output element is therefore
//! `(sum over (c, ky, kx) ascending of w * x, starting from 0.0) + bias`,
//! the same order as a naive nested loop.

use serde::{Deserialize, Serialize};

use super::gemm::{gemm, transpose};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    /// Stride 1, dilation 1, no padding.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            dilation: 1,
            padding: 0,
            in_channels,
            out_channels,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1)
    }

    pub fn with_stride(self, stride: usize) -> Self {
        Self { stride, ..self }
    }

    pub fn with_dilation(self, dilation: usize) -> Self {
        Self { dilation, ..self }
    }

    pub fn with_padding(self, padding: usize) -> Self {
        Self { padding, ..self }
    }

    /// Padding that keeps the spatial size at stride 1 (odd kernels).
    pub fn same_padding(self) -> Self {
        Self {
            padding: self.dilation * (self.kernel - 1) / 2,
            ..self
        }
    }

    /// Span of the dilated kernel, `d*(k-1)+1`.
    pub fn extent(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel, stride and dilation must be positive: {self:?}"
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig(format!("channel counts must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let e = self.extent();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if e > ph || e > pw {
            return Err(Error::InvalidArgument(format!(
                "kernel extent {e} exceeds padded input {ph}x{pw}"
            )));
        }
        Ok(((ph - e) / self.stride + 1, (pw - e) / self.stride + 1))
    }

    pub fn weight_shape(&self) -> Shape4 {
        Shape4::new(self.out_channels, self.in_channels, self.kernel, self.kernel)
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + self.out_channels
    }

    fn is_pointwise_identity_layout(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor4,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(spec: &ConvSpec) -> Self {
        Self {
            weight: Tensor4::zeros(spec.weight_shape()),
            bias: vec![0.0; spec.out_channels],
        }
    }

    /// Kaiming-normal weights (`std = sqrt(2 / fan_in)`), zero bias.
    pub fn kaiming(spec: &ConvSpec, rng: &mut SplitMix64) -> Self {
        let shape = spec.weight_shape();
        let fan_in = (spec.in_channels * spec.kernel * spec.kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        let data = (0..shape.numel()).map(|_| rng.normal(0.0, std)).collect();
        Self {
            weight: Tensor4::from_raw(shape, data),
            bias: vec![0.0; spec.out_channels],
        }
    }

    pub fn check(&self, spec: &ConvSpec, op: &str) -> Result<()> {
        let ws = spec.weight_shape();
        let s = self.weight.shape();
        for (dim, e, f) in [
            ("out_channels", ws.n, s.n),
            ("in_channels", ws.c, s.c),
            ("kernel", ws.h, s.h),
            ("kernel", ws.w, s.w),
            ("bias", spec.out_channels, self.bias.len()),
        ] {
            if e != f {
                return Err(Error::shape(op, dim, e, f));
            }
        }
        Ok(())
    }
}

/// Gradients of `sum(grad_out * conv(x))`.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor4,
    pub params: ConvParams,
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

fn geometry(x: Shape4, spec: &ConvSpec, params: &ConvParams, op: &str) -> Result<Geometry> {
    spec.validate()?;
    params.check(spec, op)?;
    if x.c != spec.in_channels {
        return Err(Error::shape(op, "channels", spec.in_channels, x.c));
    }
    let (ho, wo) = spec.output_size(x.h, x.w)?;
    Ok(Geometry {
        c: x.c,
        h: x.h,
        w: x.w,
        ho,
        wo,
    })
}

/// Valid `[lo, hi)` output positions for which `o*stride + offset` lands in `0..len`.
fn valid_range(offset: isize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let hi = if (len as isize) <= offset {
        0
    } else {
        ((len as isize - offset) + s - 1) / s
    };
    let lo = (lo as usize).min(out_len);
    let hi = (hi as usize).min(out_len).max(lo);
    (lo, hi)
}

fn im2col(x: &[f64], g: &Geometry, spec: &ConvSpec, col: &mut [f64]) {
    let (k, s, d, pad) = (spec.kernel, spec.stride, spec.dilation, spec.padding as isize);
    let p = g.ho * g.wo;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            let yoff = (ky * d) as isize - pad;
            let (ylo, yhi) = valid_range(yoff, s, g.h, g.ho);
            for kx in 0..k {
                let xoff = (kx * d) as isize - pad;
                let (xlo, xhi) = valid_range(xoff, s, g.w, g.wo);
                let r = (ci * k + ky) * k + kx;
                let row = &mut col[r * p..(r + 1) * p];
                row[..ylo * g.wo].fill(0.0);
                row[yhi * g.wo..].fill(0.0);
                for oy in ylo..yhi {
                    let iy = (oy * s) as isize + yoff;
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    dst[..xlo].fill(0.0);
                    dst[xhi..].fill(0.0);
                    if xlo < xhi {
                        let ix0 = ((xlo * s) as isize + xoff) as usize;
                        if s == 1 {
                            dst[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for (j, slot) in dst[xlo..xhi].iter_mut().enumerate() {
                                *slot = src[ix0 + j * s];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &Geometry, spec: &ConvSpec, dx: &mut [f64]) {
    let (k, s, d, pad) = (spec.kernel, spec.stride, spec.dilation, spec.padding as isize);
    let p = g.ho * g.wo;
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            let yoff = (ky * d) as isize - pad;
            let (ylo, yhi) = valid_range(yoff, s, g.h, g.ho);
            for kx in 0..k {
                let xoff = (kx * d) as isize - pad;
                let (xlo, xhi) = valid_range(xoff, s, g.w, g.wo);
                if xlo >= xhi {
                    continue;
                }
                let r = (ci * k + ky) * k + kx;
                let row = &col[r * p..(r + 1) * p];
                for oy in ylo..yhi {
                    let iy = ((oy * s) as isize + yoff) as usize;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let src = &row[oy * g.wo + xlo..oy * g.wo + xhi];
                    let ix0 = ((xlo * s) as isize + xoff) as usize;
                    if s == 1 {
                        for (slot, &v) in dst[ix0..ix0 + src.len()].iter_mut().zip(src) {
                            *slot += v;
                        }
                    } else {
                        for (j, &v) in src.iter().enumerate() {
                            dst[ix0 + j * s] += v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(x: &Tensor4, spec: &ConvSpec, params: &ConvParams) -> Result<Tensor4> {
    let xs = x.shape();
    let g = geometry(xs, spec, params, "conv2d_forward")?;
    let (o, p) = (spec.out_channels, g.ho * g.wo);
    let r = g.c * spec.kernel * spec.kernel;
    let mut out = vec![0.0; xs.n * o * p];
    let mut col = if spec.is_pointwise_identity_layout() {
        Vec::new()
    } else {
        vec![0.0; r * p]
    };
    let w = params.weight.data();
    for n in 0..xs.n {
        let item = x.item(n);
        let cols: &[f64] = if spec.is_pointwise_identity_layout() {
            item
        } else {
            im2col(item, &g, spec, &mut col);
            &col
        };
        let dst = &mut out[n * o * p..(n + 1) * o * p];
        gemm(o, p, r, w, cols, dst);
        for (oc, row) in dst.chunks_exact_mut(p).enumerate() {
            let b = params.bias[oc];
            for v in row {
                *v += b;
            }
        }
    }
    Ok(Tensor4::from_raw(Shape4::new(xs.n, o, g.ho, g.wo), out))
}

pub fn conv2d_backward(
    x: &Tensor4,
    spec: &ConvSpec,
    params: &ConvParams,
    grad_out: &Tensor4,
) -> Result<ConvGrads> {
    let xs = x.shape();
    let g = geometry(xs, spec, params, "conv2d_backward")?;
    let (o, p) = (spec.out_channels, g.ho * g.wo);
    let r = g.c * spec.kernel * spec.kernel;
    let expected = Shape4::new(xs.n, o, g.ho, g.wo);
    grad_out.expect_shape(expected, "conv2d_backward")?;

    let pointwise = spec.is_pointwise_identity_layout();
    let w_t = transpose(o, r, params.weight.data());
    let mut grad_x = Tensor4::zeros(xs);
    let mut grad_w = vec![0.0; o * r];
    let mut grad_b = vec![0.0; o];
    let mut col = vec![0.0; if pointwise { 0 } else { r * p }];
    let mut gcol = vec![0.0; r * p];
    let mut gw_item = vec![0.0; o * r];

    for n in 0..xs.n {
        let gout = grad_out.item(n);
        for (oc, row) in gout.chunks_exact(p).enumerate() {
            grad_b[oc] += row.iter().sum::<f64>();
        }
        let item = x.item(n);
        let cols: &[f64] = if pointwise {
            item
        } else {
            im2col(item, &g, spec, &mut col);
            &col
        };
        let cols_t = transpose(r, p, cols);
        gemm(o, r, p, gout, &cols_t, &mut gw_item);
        for (acc, v) in grad_w.iter_mut().zip(&gw_item) {
            *acc += v;
        }
        if pointwise {
            gemm(r, p, o, &w_t, gout, grad_x.item_mut(n));
        } else {
            gemm(r, p, o, &w_t, gout, &mut gcol);
            col2im(&gcol, &g, spec, grad_x.item_mut(n));
        }
    }
    Ok(ConvGrads {
        input: grad_x,
        params: ConvParams {
            weight: Tensor4::from_raw(spec.weight_shape(), grad_w),
            bias: grad_b,
        },
    })
}
