//! Small dense helpers for symmetric matrices. Inverses and square roots go
//! through the spectral decomposition so that the positive-definiteness test
//! is the same everywhere.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest one count as zero.
pub(crate) const RELATIVE_EIGEN_FLOOR: f64 = 1e-12;

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}


pub(crate) fn eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(m))
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigen(m).eigenvalues.min()
}

/// Spectral decomposition that fails unless every eigenvalue is above the floor.
pub(crate) fn spd_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::NotPositiveDefinite);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    let eig = eigen(m);
    let largest = eig.eigenvalues.max();
    let smallest = eig.eigenvalues.min();
    if !(largest > 0.0) || smallest <= RELATIVE_EIGEN_FLOOR * largest {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(eig)
}

fn spectral_map(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let q = &eig.eigenvectors;
    let mapped = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| f(l)));
    symmetrize(&(q * DMatrix::from_diagonal(&mapped) * q.transpose()))
}

pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(spectral_map(&spd_eigen(m)?, |l| 1.0 / l))
}

pub(crate) fn spd_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(spectral_map(&spd_eigen(m)?, |l| 1.0 / l.sqrt()))
}

/// Lower Cholesky factor, used to turn standard normals into correlated draws.
pub(crate) fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(symmetrize(m))
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite)
}
