//! Dense matrix product with a fixed reduction order.
//!
//! `c[i][j] = sum_p a[i][p] * b[p][j]` is accumulated starting from `0.0` with
//! `p` strictly ascending, one multiply and one add per step (no fused
//! multiply-add, no reassociation). Vectorization happens across `j` only, so
//! results are bit-identical to a scalar loop with the same order.

const MR: usize = 4;
const NR: usize = 4;

/// `c = a * b` with `a: m x k`, `b: k x n`, `c: m x n`, all row-major.
pub(crate) fn gemm(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let full_cols = n / NR * NR;
    let full_rows = m / MR * MR;
    // Panels are packed so the inner loop reads both operands contiguously.
    let mut b_packed = vec![0.0; full_cols * k];
    for (jp, j) in (0..full_cols).step_by(NR).enumerate() {
        let panel = &mut b_packed[jp * NR * k..(jp + 1) * NR * k];
        for p in 0..k {
            panel[p * NR..(p + 1) * NR].copy_from_slice(&b[p * n + j..p * n + j + NR]);
        }
    }
    let mut a_panel = vec![0.0; MR * k];
    for i in (0..full_rows).step_by(MR) {
        for p in 0..k {
            for r in 0..MR {
                a_panel[p * MR + r] = a[(i + r) * k + p];
            }
        }
        for (jp, j) in (0..full_cols).step_by(NR).enumerate() {
            let acc = tile(k, &a_panel, &b_packed[jp * NR * k..(jp + 1) * NR * k]);
            for (r, acc_row) in acc.iter().enumerate() {
                c[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(acc_row);
            }
        }
        if full_cols < n {
            for r in i..i + MR {
                row_span(n, k, &a[r * k..(r + 1) * k], b, full_cols..n, &mut c[r * n..(r + 1) * n]);
            }
        }
    }
    for r in full_rows..m {
        row_span(n, k, &a[r * k..(r + 1) * k], b, 0..n, &mut c[r * n..(r + 1) * n]);
    }
}

#[inline(always)]
fn tile(k: usize, a_panel: &[f64], b_panel: &[f64]) -> [[f64; NR]; MR] {
    let mut acc = [[0.0f64; NR]; MR];
    let a_panel = &a_panel[..k * MR];
    let b_panel = &b_panel[..k * NR];
    for p in 0..k {
        let av: [f64; MR] = a_panel[p * MR..p * MR + MR].try_into().unwrap();
        let bv: [f64; NR] = b_panel[p * NR..p * NR + NR].try_into().unwrap();
        for r in 0..MR {
            for j in 0..NR {
                acc[r][j] += av[r] * bv[j];
            }
        }
    }
    acc
}

fn row_span(n: usize, k: usize, a_row: &[f64], b: &[f64], cols: std::ops::Range<usize>, c_row: &mut [f64]) {
    let out = &mut c_row[cols.clone()];
    out.fill(0.0);
    for p in 0..k {
        let av = a_row[p];
        let brow = &b[p * n + cols.start..p * n + cols.end];
        for (slot, &bv) in out.iter_mut().zip(brow) {
            *slot += av * bv;
        }
    }
}

/// Row-major transpose of an `rows x cols` matrix.
pub(crate) fn transpose(rows: usize, cols: usize, src: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    const B: usize = 16;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    out[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    out
}
