//! Helpers shared by unit tests.

use ducdlc_oracles::finite_diff::{central, rel_error, STEP};

use crate::params::{assign_flat, flatten, named, Parameters};
use crate::rng::SplitMix64;
use crate::tensor::{Distribution, Shape4, Tensor4};

pub fn random(shape: Shape4, seed: u64) -> Tensor4 {
    Tensor4::seeded_fill(shape, seed, Distribution::Uniform { lo: -1.0, hi: 1.0 }).unwrap()
}

/// Checks `analytic` against central differences of `f` at `count` random
/// coordinates of `x` (all of them when `count >= x.len()`), returning the
/// worst relative error.
pub fn check_coords(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    count: usize,
    rng: &mut SplitMix64,
) -> f64 {
    let mut x = x.to_vec();
    let idx: Vec<usize> = if count >= x.len() {
        (0..x.len()).collect()
    } else {
        (0..count).map(|_| rng.below(x.len())).collect()
    };
    idx.into_iter()
        .map(|i| rel_error(analytic[i], central(&mut f, &mut x, i, STEP)))
        .fold(0.0, f64::max)
}

/// Finite-difference check over a parameter container.
///
/// Tensors listed in `annihilated` feed straight into a batch norm, so their
/// true gradient is zero and central differences only see round-off. Those
/// are checked in absolute terms; everything else is sampled at `count`
/// coordinates and the worst relative error returned.
pub fn check_params<P: Parameters + Clone>(
    params: &P,
    grads: &P,
    loss: impl Fn(&P) -> f64,
    annihilated: &[&str],
    count: usize,
    rng: &mut SplitMix64,
) -> f64 {
    let names = named(params);
    let analytic = flatten(grads);
    let mut x = flatten(params);
    let mut f = |v: &[f64]| {
        let mut q = params.clone();
        assign_flat(&mut q, v);
        loss(&q)
    };
    let mut checked = Vec::new();
    let mut offset = 0;
    for (name, vals) in &names {
        let range = offset..offset + vals.len();
        offset += vals.len();
        if annihilated.contains(&name.as_str()) {
            for i in range {
                assert!(analytic[i].abs() < 1e-12, "{name}: analytic {}", analytic[i]);
                let num = central(&mut f, &mut x, i, STEP);
                assert!(num.abs() < 1e-7, "{name}: numeric {num}");
            }
        } else {
            checked.extend(range);
        }
    }
    let picks: Vec<usize> = if count >= checked.len() {
        checked
    } else {
        (0..count).map(|_| checked[rng.below(checked.len())]).collect()
    };
    picks
        .into_iter()
        .map(|i| rel_error(analytic[i], central(&mut f, &mut x, i, STEP)))
        .fold(0.0, f64::max)
}
