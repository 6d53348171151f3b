//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SimError};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest `|m_ij - m_ji|`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Largest absolute entry.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn ensure_square(m: &Matrix, d: usize) -> Result<()> {
    if m.nrows() != d {
        return Err(SimError::Dimension {
            expected: d,
            got: m.nrows(),
        });
    }
    if m.ncols() != d {
        return Err(SimError::Dimension {
            expected: d,
            got: m.ncols(),
        });
    }
    Ok(())
}

/// Rejects matrices whose asymmetry exceeds `tol * max(1, max|m|)`.
pub fn ensure_symmetric(m: &Matrix, tol: f64) -> Result<()> {
    let asym = asymmetry(m);
    if asym > tol * max_abs(m).max(1.0) {
        return Err(SimError::Asymmetric(asym));
    }
    Ok(())
}

/// Minimum eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Maximum absolute eigenvalue of the symmetric part of `m`.
pub fn spectral_radius_sym(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Haar-distributed orthogonal matrix: QR of a seeded Gaussian matrix with
/// the signs of `diag(R)` folded into `Q`.
pub fn haar_orthogonal(d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Matrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Symmetric PSD square root, with negative eigenvalues clamped to zero.
pub fn psd_sqrt(m: &Matrix) -> Matrix {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}
