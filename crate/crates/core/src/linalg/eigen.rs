use super::{LinalgError, Matrix};

const SYMMETRY_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix: `values` descending, `vectors`
/// holding the matching orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymmetricEigen {
    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let scaled = Matrix::from_fn(n, n, |i, j| self.vectors.get(i, j) * f(self.values[j]));
        scaled
            .matmul_transpose(&self.vectors)
            .expect("eigenvector shapes agree")
    }
}

fn check_symmetric(s: &Matrix) -> Result<(), LinalgError> {
    match s.asymmetry() {
        None => Err(LinalgError::DimensionMismatch {
            op: "symmetric_eigen",
            left: s.shape(),
            right: (s.cols(), s.rows()),
        }),
        Some(asym) if asym > SYMMETRY_TOL * s.max_abs().max(1.0) => {
            Err(LinalgError::NotSymmetric { asymmetry: asym })
        }
        Some(_) => Ok(()),
    }
}

/// Cyclic Jacobi eigenvalue iteration for symmetric input.
pub fn symmetric_eigen(s: &Matrix) -> Result<SymmetricEigen, LinalgError> {
    check_symmetric(s)?;
    let n = s.rows();
    let mut a = s.clone();
    let mut v = Matrix::identity(n);
    let total = a.frobenius_norm();

    let mut converged = false;
    let mut off = 0.0;
    for _ in 0..MAX_SWEEPS {
        off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q) * a.get(p, q);
            }
        }
        off = off.sqrt();
        if off <= 1e-15 * total || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - sn * akq);
                    a.set(k, q, sn * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - sn * aqk);
                    a.set(q, k, sn * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - sn * vkq);
                    v.set(k, q, sn * vkp + c * vkq);
                }
            }
        }
    }
    if !converged {
        return Err(LinalgError::NotConverged {
            op: "symmetric_eigen",
            sweeps: MAX_SWEEPS,
            residual: off,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| v.get(i, order[j]));
    Ok(SymmetricEigen { values, vectors })
}

/// `s^{-1/2}` for symmetric PSD `s`, with every eigenvalue clamped to at
/// least `floor` before inversion.
pub fn inv_sqrt_psd(s: &Matrix, floor: f64) -> Result<Matrix, LinalgError> {
    let eig = symmetric_eigen(s)?;
    Ok(eig.map_spectrum(|l| 1.0 / l.max(floor).sqrt()))
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix; eigenvalues at or
/// below `rel_tol · λ_max` are treated as zero.
pub fn pinv_psd(s: &Matrix, rel_tol: f64) -> Result<Matrix, LinalgError> {
    let eig = symmetric_eigen(s)?;
    let cutoff = rel_tol * eig.values.first().copied().unwrap_or(0.0).max(0.0);
    Ok(eig.map_spectrum(|l| if l > cutoff && l > 0.0 { 1.0 / l } else { 0.0 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormality_error;
    use crate::rng::{standard_normal_matrix, SeededRng};

    #[test]
    fn inv_sqrt_of_scaled_identity() {
        let s = Matrix::identity(2).scale(4.0);
        let r = inv_sqrt_psd(&s, 1e-6).unwrap();
        assert!(r.max_abs_diff(&Matrix::identity(2).scale(0.5)).unwrap() < 1e-15);
        let i3 = inv_sqrt_psd(&Matrix::identity(3), 1e-6).unwrap();
        assert!(i3.max_abs_diff(&Matrix::identity(3)).unwrap() < 1e-15);
    }

    #[test]
    fn floor_kicks_in() {
        let s = Matrix::from_diag(&[9.0, 1e-9]);
        let r = inv_sqrt_psd(&s, 1e-6).unwrap();
        assert!((r.get(0, 0) - 1.0 / 3.0).abs() < 1e-14);
        assert!((r.get(1, 1) - 1e3).abs() < 1e-9);
        assert_eq!(r.get(0, 1), 0.0);
    }

    #[test]
    fn asymmetric_rejected() {
        let s = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            inv_sqrt_psd(&s, 1e-6),
            Err(LinalgError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn eigen_reconstructs_random_gram() {
        let mut rng = SeededRng::new(21);
        let x = standard_normal_matrix(9, 6, &mut rng);
        let g = x.gram();
        let eig = symmetric_eigen(&g).unwrap();
        assert!(orthonormality_error(&eig.vectors) < 1e-12);
        let rec = eig.map_spectrum(|l| l);
        assert!(rec.max_abs_diff(&g).unwrap() < 1e-11);
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn pinv_inverts_full_rank() {
        let mut rng = SeededRng::new(2);
        let x = standard_normal_matrix(10, 3, &mut rng);
        let g = x.gram();
        let p = pinv_psd(&g, 1e-12).unwrap();
        assert!(g.matmul(&p).unwrap().max_abs_diff(&Matrix::identity(3)).unwrap() < 1e-10);
    }
}
