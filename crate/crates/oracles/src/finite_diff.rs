//! Central finite differences.

/// Default step for double-precision checks.
pub const STEP: f64 = 1e-5;

/// Denominator floor for [`rel_error`]. Below this magnitude both values are
/// treated as zero-scale and the error is effectively absolute.
pub const REL_FLOOR: f64 = 1e-6;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h`, restoring `x[i]` afterwards.
pub fn central(f: &mut impl FnMut(&[f64]) -> f64, x: &mut [f64], i: usize, step: f64) -> f64 {
    let orig = x[i];
    x[i] = orig + step;
    let plus = f(x);
    x[i] = orig - step;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * step)
}

/// Directional derivative of `f` at `x` along `dir` by central differences.
pub fn directional(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], dir: &[f64], step: f64) -> f64 {
    let plus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + step * d).collect();
    let minus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a - step * d).collect();
    (f(&plus) - f(&minus)) / (2.0 * step)
}

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}
