//! Register-blocked dense product kernel.
//!
//! Every output entry is accumulated over the inner index in increasing
//! order, exactly like the textbook triple loop, so results do not depend
//! on the blocking.

const MR: usize = 4;
const NR: usize = 8;

/// `c = a · b` for row-major `a` (`n x k`) and `b` (`k x m`).
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    let mut c = vec![0.0; n * m];
    let full_cols = m - m % NR;
    let mut i = 0;
    while i + MR <= n {
        let mut j = 0;
        while j < full_cols {
            let mut acc = [[0.0f64; NR]; MR];
            for p in 0..k {
                let brow: &[f64; NR] = b[p * m + j..p * m + j + NR].try_into().expect("NR slice");
                for (r, acc_r) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for t in 0..NR {
                        acc_r[t] += av * brow[t];
                    }
                }
            }
            for (r, acc_r) in acc.iter().enumerate() {
                c[(i + r) * m + j..(i + r) * m + j + NR].copy_from_slice(acc_r);
            }
            j += NR;
        }
        if full_cols < m {
            for r in i..i + MR {
                edge_row(a, b, &mut c, r, k, m, full_cols);
            }
        }
        i += MR;
    }
    for r in i..n {
        edge_row(a, b, &mut c, r, k, m, 0);
    }
    c
}

/// Row `r` of the product for columns `from..m`, same accumulation order.
fn edge_row(a: &[f64], b: &[f64], c: &mut [f64], r: usize, k: usize, m: usize, from: usize) {
    let out = &mut c[r * m + from..(r + 1) * m];
    for p in 0..k {
        let av = a[r * k + p];
        for (o, bv) in out.iter_mut().zip(&b[p * m + from..(p + 1) * m]) {
            *o += av * bv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut c = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * m + j];
                }
                c[i * m + j] = s;
            }
        }
        c
    }

    #[test]
    fn matches_triple_loop_bit_for_bit() {
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for &(n, k, m) in &[(1, 1, 1), (4, 3, 8), (5, 7, 9), (13, 17, 19), (128, 33, 130), (3, 0, 2)] {
            let a: Vec<f64> = (0..n * k).map(|_| next()).collect();
            let b: Vec<f64> = (0..k * m).map(|_| next()).collect();
            let fast = gemm_nn(&a, &b, n, k, m);
            let slow = naive(&a, &b, n, k, m);
            assert!(fast.iter().zip(&slow).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
