use super::{axpy, dot, LinalgError, Matrix};

const ROTATION_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 60;

/// Thin singular value decomposition `a = u · diag(sigma) · vᵀ`.
///
/// For an `m x n` input with `l = min(m, n)`: `u` is `m x l`, `v` is `n x l`,
/// both with orthonormal columns, and `sigma` is descending and non-negative.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                let v = us.get(i, j) * s;
                us.set(i, j, v);
            }
        }
        us.matmul_transpose(&self.v).expect("svd factor shapes agree")
    }

    /// Number of singular values strictly above `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        self.sigma.iter().filter(|&&s| s > tol).count()
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Column pairs are rotated until every pair satisfies
/// `|<a_p, a_q>| <= 1e-12 ‖a_p‖ ‖a_q‖`, capped at 60 sweeps. Columns whose
/// norm has fallen to the rounding level of the whole matrix are left alone:
/// their direction is noise and rotating them never settles.
pub fn jacobi_svd(a: &Matrix) -> Result<SvdResult, LinalgError> {
    if !a.is_finite() {
        let pos = a.as_slice().iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(LinalgError::NonFinite {
            row: pos / a.cols().max(1),
            col: pos % a.cols().max(1),
        });
    }
    if a.rows() < a.cols() {
        let t = jacobi_svd_tall(&a.transpose())?;
        return Ok(SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }
    jacobi_svd_tall(a)
}

fn jacobi_svd_tall(a: &Matrix) -> Result<SvdResult, LinalgError> {
    let (m, n) = a.shape();
    // Rows of `w` are the columns of the working matrix; rows of `vt` the
    // columns of V. Both are updated by the same plane rotations.
    let mut w = a.transpose();
    let mut vt = Matrix::identity(n);

    // Squared norm below which a column is pure rounding residue.
    let negligible = {
        let noise = (m.max(n) as f64) * f64::EPSILON * a.frobenius_norm();
        noise * noise
    };
    let mut converged = n < 2;
    let mut worst = 0.0_f64;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        worst = 0.0;
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let alpha = dot(w.row(p), w.row(p));
                let beta = dot(w.row(q), w.row(q));
                let gamma = dot(w.row(p), w.row(q));
                let scale = (alpha * beta).sqrt();
                if gamma == 0.0 || alpha.min(beta) <= negligible {
                    continue;
                }
                let rel = gamma.abs() / scale;
                if rel <= ROTATION_TOL {
                    continue;
                }
                worst = worst.max(rel);
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut w, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(LinalgError::NotConverged {
            op: "jacobi_svd",
            sweeps: MAX_SWEEPS,
            residual: worst,
        });
    }

    let mut sigma: Vec<f64> = (0..n).map(|j| dot(w.row(j), w.row(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let mut u_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for &j in &order {
        let s = sigma[j];
        if s > 1e-290 {
            u_cols.push(Some(w.row(j).iter().map(|x| x / s).collect()));
        } else {
            u_cols.push(None);
        }
        v_cols.push(vt.row(j).to_vec());
    }
    sigma = order.iter().map(|&j| sigma[j]).collect();
    let u_cols = complete_orthonormal(u_cols, m);

    let u = Matrix::from_fn(m, n, |i, j| u_cols[j][i]);
    let v = Matrix::from_fn(n, n, |i, j| v_cols[j][i]);
    Ok(SvdResult { u, sigma, v })
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills `None` slots with unit vectors orthogonal to every other column,
/// drawn from the standard basis by Gram-Schmidt (two passes).
fn complete_orthonormal(cols: Vec<Option<Vec<f64>>>, m: usize) -> Vec<Vec<f64>> {
    let mut known: Vec<Vec<f64>> = cols.iter().flatten().cloned().collect();
    let mut next_candidate = 0;
    let mut out = Vec::with_capacity(cols.len());
    for col in cols {
        match col {
            Some(c) => out.push(c),
            None => {
                let filled = loop {
                    assert!(next_candidate < m, "cannot complete more than m columns");
                    let mut e = vec![0.0; m];
                    e[next_candidate] = 1.0;
                    next_candidate += 1;
                    for _ in 0..2 {
                        for k in &known {
                            let proj = dot(&e, k);
                            axpy(&mut e, -proj, k);
                        }
                    }
                    let norm = dot(&e, &e).sqrt();
                    if norm > 0.5 {
                        e.iter_mut().for_each(|x| *x /= norm);
                        break e;
                    }
                };
                known.push(filled.clone());
                out.push(filled);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{orthonormality_error, symmetric_eigen};
    use crate::rng::{standard_normal_matrix, SeededRng};

    #[test]
    fn diagonal_input() {
        let a = Matrix::from_diag(&[3.0, 2.0]);
        let svd = jacobi_svd(&a).unwrap();
        assert_eq!(svd.sigma, vec![3.0, 2.0]);
        assert_eq!(svd.u, Matrix::identity(2));
        assert_eq!(svd.v, Matrix::identity(2));
    }

    #[test]
    fn zero_matrix_has_zero_spectrum() {
        let svd = jacobi_svd(&Matrix::zeros(4, 3)).unwrap();
        assert!(svd.sigma.iter().all(|&s| s == 0.0));
        assert!(orthonormality_error(&svd.u) <= 1e-12);
        assert!(orthonormality_error(&svd.v) <= 1e-12);
    }

    #[test]
    fn singular_values_match_gram_eigenvalues() {
        let mut rng = SeededRng::new(3);
        let a = standard_normal_matrix(6, 4, &mut rng);
        let svd = jacobi_svd(&a).unwrap();
        let eig = symmetric_eigen(&a.gram()).unwrap();
        for (s, l) in svd.sigma.iter().zip(&eig.values) {
            assert!((s - l.max(0.0).sqrt()).abs() <= 1e-8, "{s} vs {l}");
        }
    }

    #[test]
    fn wide_input_uses_transpose() {
        let mut rng = SeededRng::new(8);
        let a = standard_normal_matrix(3, 7, &mut rng);
        let svd = jacobi_svd(&a).unwrap();
        assert_eq!(svd.u.shape(), (3, 3));
        assert_eq!(svd.v.shape(), (7, 3));
        let err = svd.reconstruct().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
        assert!(err <= 1e-10);
        assert!(orthonormality_error(&svd.v) <= 1e-10);
    }

    #[test]
    fn rank_deficient_completes_u() {
        let a = Matrix::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![2.0, 4.0, 6.0],
            vec![1.0, 2.0, 3.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        let svd = jacobi_svd(&a).unwrap();
        assert_eq!(svd.rank(1e-8), 1);
        assert!(orthonormality_error(&svd.u) <= 1e-10);
        assert!(svd.reconstruct().sub(&a).unwrap().frobenius_norm() <= 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        let mut a = Matrix::zeros(2, 2);
        a.as_mut_slice()[1] = f64::NAN;
        assert!(matches!(jacobi_svd(&a), Err(LinalgError::NonFinite { .. })));
    }
}
