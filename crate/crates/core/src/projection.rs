//! Fixed projection matrices and the bottleneck map `h = Bᵀz`.
//!
//! Three orthonormal constructions (QR, SVD, polar) plus a raw Gaussian
//! control that is deliberately not orthonormalized.

use std::fmt;
use std::io::{self, BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    householder_qr, jacobi_svd, orthonormality_error, symmetric_eigen, LinalgError, Matrix,
};
use crate::rng::{standard_normal_matrix, SeededRng};

/// Tolerance on `‖BᵀB − I‖_F` for a basis to count as orthonormal.
pub const ORTHONORMAL_TOL: f64 = 1e-8;
/// Eigenvalue floor used by the polar construction.
pub const POLAR_FLOOR: f64 = 1e-6;

const BASIS_MAGIC: &[u8; 8] = b"OBBASIS1";
const BASIS_SEED_STREAM: u64 = 0xB0B0;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("bottleneck dimension k={k} exceeds feature dimension d={d}")]
    KExceedsD { d: usize, k: usize },
    #[error("dimensions must be at least 1 (d={d}, k={k})")]
    ZeroDimension { d: usize, k: usize },
    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("basis is not orthonormal: ‖BᵀB − I‖_F = {error:e}")]
    NotOrthonormal { error: f64 },
    #[error("gaussian sample was too ill-conditioned twice")]
    RankDeficient,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("basis file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMethod {
    Qr,
    Svd,
    Polar,
    /// Raw Gaussian draw, never orthonormalized. Also the label for any
    /// other fixed non-orthonormal matrix.
    GaussianControl,
}

impl ProjectionMethod {
    pub const ORTHONORMAL: [ProjectionMethod; 3] = [Self::Qr, Self::Svd, Self::Polar];

    pub fn is_orthonormal(self) -> bool {
        self != Self::GaussianControl
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Qr => "qr",
            Self::Svd => "svd",
            Self::Polar => "polar",
            Self::GaussianControl => "gaussian_control",
        }
    }

    fn code(self) -> u8 {
        match self {
            Self::Qr => 0,
            Self::Svd => 1,
            Self::Polar => 2,
            Self::GaussianControl => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Self::Qr,
            1 => Self::Svd,
            2 => Self::Polar,
            3 => Self::GaussianControl,
            _ => return None,
        })
    }
}

impl fmt::Display for ProjectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProjectionMethod {
    type Err = ProjectionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qr" => Ok(Self::Qr),
            "svd" => Ok(Self::Svd),
            "polar" => Ok(Self::Polar),
            "gaussian_control" | "gaussian" => Ok(Self::GaussianControl),
            other => Err(ProjectionError::Format(format!("unknown method {other:?}"))),
        }
    }
}

/// A fixed `d x k` projection matrix together with how it was made.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    b: Matrix,
    method: ProjectionMethod,
    seed: u64,
}

/// `d x k` matrix of i.i.d. standard normals.
pub fn sample_gaussian(d: usize, k: usize, rng: &mut SeededRng) -> Result<Matrix, ProjectionError> {
    check_dims(d, k)?;
    Ok(standard_normal_matrix(d, k, rng))
}

fn check_dims(d: usize, k: usize) -> Result<(), ProjectionError> {
    if d == 0 || k == 0 {
        return Err(ProjectionError::ZeroDimension { d, k });
    }
    if k > d {
        return Err(ProjectionError::KExceedsD { d, k });
    }
    Ok(())
}

/// Builds a basis; `(d, k, method, seed)` fully determines the result.
pub fn make_basis(
    d: usize,
    k: usize,
    method: ProjectionMethod,
    seed: u64,
) -> Result<ProjectionBasis, ProjectionError> {
    check_dims(d, k)?;
    let mut rng = SeededRng::derived(seed, BASIS_SEED_STREAM);
    let b = match method {
        ProjectionMethod::Qr => householder_qr(&sample_gaussian(d, k, &mut rng)?)?.0,
        ProjectionMethod::Svd => {
            let mut attempt = 0;
            loop {
                let x = sample_gaussian(d, k, &mut rng)?;
                let svd = jacobi_svd(&x)?;
                let top = svd.sigma[0];
                if top > 0.0 && svd.sigma[k - 1] > 1e-10 * top {
                    break svd.u;
                }
                attempt += 1;
                if attempt > 1 {
                    return Err(ProjectionError::RankDeficient);
                }
            }
        }
        ProjectionMethod::Polar => {
            // A Gram eigenvalue under the floor would be clamped and leave B
            // visibly non-orthonormal, so such draws are resampled once.
            let mut attempt = 0;
            loop {
                let x = sample_gaussian(d, k, &mut rng)?;
                let eig = symmetric_eigen(&x.gram())?;
                if eig.values.last().is_some_and(|&l| l > POLAR_FLOOR) {
                    break x.matmul(&eig.map_spectrum(|l| 1.0 / l.max(POLAR_FLOOR).sqrt()))?;
                }
                attempt += 1;
                if attempt > 1 {
                    return Err(ProjectionError::RankDeficient);
                }
            }
        }
        ProjectionMethod::GaussianControl => sample_gaussian(d, k, &mut rng)?,
    };
    if method.is_orthonormal() {
        let error = orthonormality_error(&b);
        if error > ORTHONORMAL_TOL {
            return Err(ProjectionError::NotOrthonormal { error });
        }
    }
    Ok(ProjectionBasis { b, method, seed })
}

impl ProjectionBasis {
    /// Wraps an explicit matrix. Orthonormal methods are checked against
    /// [`ORTHONORMAL_TOL`].
    pub fn from_matrix(
        b: Matrix,
        method: ProjectionMethod,
        seed: u64,
    ) -> Result<Self, ProjectionError> {
        check_dims(b.rows(), b.cols())?;
        if !b.is_finite() {
            return Err(ProjectionError::Format("non-finite basis entry".into()));
        }
        if method.is_orthonormal() {
            let error = orthonormality_error(&b);
            if error > ORTHONORMAL_TOL {
                return Err(ProjectionError::NotOrthonormal { error });
            }
        }
        Ok(Self { b, method, seed })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.b
    }

    pub fn method(&self) -> ProjectionMethod {
        self.method
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn d(&self) -> usize {
        self.b.rows()
    }

    pub fn k(&self) -> usize {
        self.b.cols()
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.b)
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormality_error() <= ORTHONORMAL_TOL
    }

    /// Only the trainable-projection ablation may touch the matrix.
    pub(crate) fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.b
    }

    /// `h = Bᵀz`.
    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>, ProjectionError> {
        if z.len() != self.d() {
            return Err(ProjectionError::DimensionMismatch {
                expected: self.d(),
                got: z.len(),
            });
        }
        Ok(self.b.transpose_mul_vec(z)?)
    }

    /// Row-wise projection of an `N x d` batch: `Z B`.
    pub fn project_batch(&self, z: &Matrix) -> Result<Matrix, ProjectionError> {
        if z.cols() != self.d() {
            return Err(ProjectionError::DimensionMismatch {
                expected: self.d(),
                got: z.cols(),
            });
        }
        Ok(z.matmul(&self.b)?)
    }

    /// Binary layout: magic `OBBASIS1`, then little-endian `u64 d`, `u64 k`,
    /// `u8 method`, `u64 seed`, and `d*k` row-major `f64` values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), ProjectionError> {
        w.write_all(BASIS_MAGIC)?;
        w.write_all(&(self.d() as u64).to_le_bytes())?;
        w.write_all(&(self.k() as u64).to_le_bytes())?;
        w.write_all(&[self.method.code()])?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in self.b.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, ProjectionError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BASIS_MAGIC {
            return Err(ProjectionError::Format("bad magic".into()));
        }
        let d = read_u64(&mut r)? as usize;
        let k = read_u64(&mut r)? as usize;
        let mut code = [0u8; 1];
        r.read_exact(&mut code)?;
        let method = ProjectionMethod::from_code(code[0])
            .ok_or_else(|| ProjectionError::Format(format!("unknown method code {}", code[0])))?;
        let seed = read_u64(&mut r)?;
        check_dims(d, k)?;
        let mut data = Vec::with_capacity(d * k);
        for _ in 0..d * k {
            data.push(read_f64(&mut r)?);
        }
        Self::from_matrix(Matrix::new(d, k, data)?, method, seed)
    }

    /// CSV layout: a header line `# d=..,k=..,method=..,seed=..` followed by
    /// `d` rows of `k` comma-separated values at 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), ProjectionError> {
        writeln!(
            w,
            "# d={},k={},method={},seed={}",
            self.d(),
            self.k(),
            self.method,
            self.seed
        )?;
        for i in 0..self.d() {
            let row: Vec<String> = self.b.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, ProjectionError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| ProjectionError::Format("empty file".into()))??;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| ProjectionError::Format("missing header".into()))?;
        let (mut d, mut k, mut method, mut seed) = (None, None, None, None);
        for field in header.trim().split(',') {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| ProjectionError::Format(format!("bad header field {field:?}")))?;
            let bad = |_| ProjectionError::Format(format!("bad value for {key}"));
            match key.trim() {
                "d" => d = Some(value.trim().parse::<usize>().map_err(bad)?),
                "k" => k = Some(value.trim().parse::<usize>().map_err(bad)?),
                "seed" => seed = Some(value.trim().parse::<u64>().map_err(bad)?),
                "method" => method = Some(value.trim().parse::<ProjectionMethod>()?),
                _ => {}
            }
        }
        let missing = |name: &str| ProjectionError::Format(format!("header lacks {name}"));
        let (d, k) = (d.ok_or_else(|| missing("d"))?, k.ok_or_else(|| missing("k"))?);
        let method = method.ok_or_else(|| missing("method"))?;
        let seed = seed.ok_or_else(|| missing("seed"))?;
        let mut data = Vec::with_capacity(d * k);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for tok in line.split(',') {
                data.push(
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|e| ProjectionError::Format(e.to_string()))?,
                );
            }
        }
        Self::from_matrix(Matrix::new(d, k, data)?, method, seed)
    }
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
