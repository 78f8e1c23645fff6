use super::{dot, LinalgError, Matrix};

/// Thin Householder QR of an `m x n` matrix with `m >= n`.
///
/// Returns `q` (`m x n`, orthonormal columns) and `r` (`n x n`, upper
/// triangular). The diagonal of `r` is made non-negative by flipping signs,
/// which makes the factorization unique for full-rank input. Zero columns are
/// skipped, so rank-deficient input still yields an orthonormal `q`.
pub fn householder_qr(a: &Matrix) -> Result<(Matrix, Matrix), LinalgError> {
    let (m, n) = a.shape();
    if m < n {
        return Err(LinalgError::TooFewRows {
            op: "householder_qr",
            rows: m,
            cols: n,
        });
    }

    // Work column-major: cols[j] holds column j of the partially reduced matrix.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col_to_vec(j)).collect();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);

    for j in 0..n {
        let x = &cols[j][j..];
        let norm = dot(x, x).sqrt();
        if norm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vv = dot(&v, &v);
        if vv == 0.0 {
            reflectors.push(None);
            continue;
        }
        for col in cols.iter_mut().skip(j) {
            apply_reflector(&mut col[j..], &v, vv);
        }
        // Exact values below the diagonal of column j.
        cols[j][j] = alpha;
        for val in cols[j][j + 1..].iter_mut() {
            *val = 0.0;
        }
        reflectors.push(Some(v));
    }

    let mut r = Matrix::zeros(n, n);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..=j {
            r.set(i, j, col[i]);
        }
    }

    // Q = H_0 ... H_{n-1} [I_n; 0], accumulated column by column.
    let mut q_cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();
    for j in (0..n).rev() {
        if let Some(v) = &reflectors[j] {
            let vv = dot(v, v);
            for qc in q_cols.iter_mut() {
                apply_reflector(&mut qc[j..], v, vv);
            }
        }
    }

    for (j, qc) in q_cols.iter_mut().enumerate() {
        if r.get(j, j) < 0.0 {
            for c in j..n {
                let v = r.get(j, c);
                r.set(j, c, -v);
            }
            for val in qc.iter_mut() {
                *val = -*val;
            }
        }
    }

    let q = Matrix::from_fn(m, n, |i, j| q_cols[j][i]);
    Ok((q, r))
}

#[inline]
fn apply_reflector(x: &mut [f64], v: &[f64], vv: f64) {
    let s = 2.0 * dot(v, x) / vv;
    if s != 0.0 {
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi -= s * vi;
        }
    }
}
