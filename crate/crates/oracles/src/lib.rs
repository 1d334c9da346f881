//! Slow, literal reference implementations.
//!
//! Nothing here depends on `ducdlc-core`: every routine works on flat NCHW
//! slices with explicit dimensions so the checks stay independent of the code
//! they check.

pub mod finite_diff;

/// Naive dilated cross-correlation over NCHW data.
///
/// Accumulation order per output element: start from `0.0`, add
/// `weight * input` for input channel `c` ascending, then kernel row `ky`,
/// then kernel column `kx`, and add the bias last. Taps that fall in the
/// zero padding are skipped (adding `w * 0.0` to a sum that started at
/// `+0.0` never changes it).
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    bias: &[f64],
    out_channels: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let extent = dilation * (k - 1) + 1;
    let ho = (h + 2 * pad - extent) / stride + 1;
    let wo = (w + 2 * pad - extent) / stride + 1;
    let mut out = vec![0.0; n * out_channels * ho * wo];
    for b in 0..n {
        for o in 0..out_channels {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky * dilation) as isize - pad as isize;
                                let ix = (ox * stride + kx * dilation) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ci) * h + iy as usize) * w + ix as usize];
                                let wv = weight[((o * c + ci) * k + ky) * k + kx];
                                acc += wv * xv;
                            }
                        }
                    }
                    out[((b * out_channels + o) * ho + oy) * wo + ox] = acc + bias[o];
                }
            }
        }
    }
    (out, ho, wo)
}

fn window(center: usize, r: usize, len: usize) -> std::ops::Range<usize> {
    center.saturating_sub(r)..(center + r + 1).min(len)
}

/// Mean over the `(2r+1)^2` window clipped to the image, by direct summation.
pub fn box_mean(plane: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            let mut count = 0usize;
            for yy in window(y, r, h) {
                for xx in window(x, r, w) {
                    sum += plane[yy * w + xx];
                    count += 1;
                }
            }
            out[y * w + x] = sum / count as f64;
        }
    }
    out
}

/// Guided filter written window by window: for every window `w_k` fit the
/// ridge-regularized linear model `p ~ a_k I + b_k`, then average the
/// coefficients of all windows covering each pixel and apply them to the guide.
pub fn guided_filter(guide: &[f64], target: &[f64], h: usize, w: usize, r: usize, eps: f64) -> Vec<f64> {
    let mut a = vec![0.0; h * w];
    let mut b = vec![0.0; h * w];
    for ky in 0..h {
        for kx in 0..w {
            let mut pixels = Vec::new();
            for yy in window(ky, r, h) {
                for xx in window(kx, r, w) {
                    pixels.push((guide[yy * w + xx], target[yy * w + xx]));
                }
            }
            let m = pixels.len() as f64;
            let mean_i = pixels.iter().map(|p| p.0).sum::<f64>() / m;
            let mean_p = pixels.iter().map(|p| p.1).sum::<f64>() / m;
            let cov = pixels.iter().map(|p| (p.0 - mean_i) * (p.1 - mean_p)).sum::<f64>() / m;
            let var = pixels.iter().map(|p| (p.0 - mean_i).powi(2)).sum::<f64>() / m;
            let ak = cov / (var + eps);
            a[ky * w + kx] = ak;
            b[ky * w + kx] = mean_p - ak * mean_i;
        }
    }
    let a_bar = box_mean(&a, h, w, r);
    let b_bar = box_mean(&b, h, w, r);
    (0..h * w).map(|i| a_bar[i] * guide[i] + b_bar[i]).collect()
}

/// Bilinear resampling of one plane, evaluating the half-pixel coordinate
/// formula `src = (i + 0.5) * in / out - 0.5`, clamped to `[0, in - 1]`, at
/// every output pixel.
pub fn bilinear(plane: &[f64], h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    let coord = |i: usize, len_in: usize, len_out: usize| -> (usize, usize, f64) {
        let s = ((i as f64 + 0.5) * len_in as f64 / len_out as f64 - 0.5).clamp(0.0, (len_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = vec![0.0; th * tw];
    for y in 0..th {
        let (y0, y1, fy) = coord(y, h, th);
        for x in 0..tw {
            let (x0, x1, fx) = coord(x, w, tw);
            let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
            let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
            out[y * tw + x] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

/// Confusion counts `m[truth][pred]`, row-major `k x k`, by walking every pixel.
pub fn confusion(pred: &[usize], truth: &[usize], k: usize, ignore: usize) -> Vec<u64> {
    let mut m = vec![0u64; k * k];
    for (&p, &t) in pred.iter().zip(truth) {
        if t == ignore {
            continue;
        }
        m[t * k + p] += 1;
    }
    m
}

/// Receptive-field extent of a serial chain of `(kernel, dilation)` layers,
/// found by pushing a unit impulse through actual 1-D dilated convolutions
/// with all-ones kernels and measuring the support of the result. Because the
/// kernels are separable the 1-D extent equals the 2-D side length.
pub fn impulse_extent(layers: &[(usize, usize)]) -> usize {
    let total: usize = layers.iter().map(|&(k, d)| d * (k - 1)).sum();
    let len = 2 * total + 3;
    let mut signal = vec![0.0f64; len];
    signal[len / 2] = 1.0;
    for &(k, d) in layers {
        let half = (d * (k - 1)) as isize / 2;
        let mut next = vec![0.0; len];
        for (i, slot) in next.iter_mut().enumerate() {
            for t in 0..k {
                let j = i as isize + (t * d) as isize - half;
                if j >= 0 && (j as usize) < len {
                    *slot += signal[j as usize];
                }
            }
        }
        signal = next;
    }
    let first = signal.iter().position(|&v| v != 0.0).unwrap();
    let last = signal.iter().rposition(|&v| v != 0.0).unwrap();
    last - first + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_extent_of_plain_stack() {
        assert_eq!(impulse_extent(&[(3, 1)]), 3);
        assert_eq!(impulse_extent(&[(3, 1), (3, 1)]), 5);
        assert_eq!(impulse_extent(&[(1, 5)]), 1);
    }

    #[test]
    fn box_mean_constant() {
        let out = box_mean(&[2.0; 12], 3, 4, 1);
        assert!(out.iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn conv_identity() {
        let x: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let (out, ho, wo) = conv2d(&x, (1, 1, 3, 3), &[1.0], &[0.0], 1, 1, 1, 1, 0);
        assert_eq!((ho, wo), (3, 3));
        assert_eq!(out, x);
    }
}
