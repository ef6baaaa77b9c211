//! The feasible region for the SGD iterates and Euclidean projection onto it.
//!
//! The region is
//!
//! ```text
//! { (nu, T) : |nu|_2 <= r1,  |I - T|_F <= r2,  T >= (1/r3) I }
//! ```
//!
//! The objective `|nu - nu'|^2 + |T - T'|_F^2` separates, so `nu` is clamped
//! to a ball and `T` is projected on its own. Both constraints on `T` are
//! spectral, so the minimizer shares eigenvectors with `T'` and the problem
//! reduces to the eigenvalues. For a multiplier `lambda >= 0` on the
//! Frobenius ball each eigenvalue solves in closed form:
//!
//! ```text
//! tau_i(lambda) = max((h_i + lambda) / (1 + lambda), 1/r3)
//! ```
//!
//! and `lambda` is found by bisection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::params::{FlatParams, NaturalParams};

/// Default bracket width at which the multiplier search stops.
pub const DEFAULT_BISECT_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDomain", into = "RawDomain")]
pub struct DomainSpec {
    r1: f64,
    r2: f64,
    r3: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    r1: f64,
    r2: f64,
    r3: f64,
}

impl TryFrom<RawDomain> for DomainSpec {
    type Error = Error;

    fn try_from(r: RawDomain) -> Result<Self> {
        DomainSpec::new(r.r1, r.r2, r.r3)
    }
}

impl From<DomainSpec> for RawDomain {
    fn from(d: DomainSpec) -> Self {
        RawDomain { r1: d.r1, r2: d.r2, r3: d.r3 }
    }
}

impl DomainSpec {
    pub fn new(r1: f64, r2: f64, r3: f64) -> Result<Self> {
        for (name, r) in [("r1", r1), ("r2", r2), ("r3", r3)] {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::InfeasibleDomain(format!("{name} must be positive and finite, got {r}")));
            }
        }
        if 1.0 / r3 > 1.0 + r2 {
            return Err(Error::InfeasibleDomain(format!(
                "eigenvalue floor 1/r3 = {} exceeds 1 + r2 = {}",
                1.0 / r3,
                1.0 + r2
            )));
        }
        Ok(DomainSpec { r1, r2, r3 })
    }

    /// All three radii equal to `r`.
    pub fn uniform(r: f64) -> Result<Self> {
        Self::new(r, r, r)
    }

    /// Radius `log(1/alpha) / alpha^2`, clipped to `[4, 1e4]`, where `alpha`
    /// is a lower bound on the Gaussian mass of the truncation set.
    pub fn auto(alpha_floor: f64) -> Result<Self> {
        if !(alpha_floor > 0.0 && alpha_floor < 1.0) {
            return Err(Error::Validation(format!("alpha_floor must lie in (0, 1), got {alpha_floor}")));
        }
        Self::uniform(auto_radius(alpha_floor))
    }

    pub fn r1(&self) -> f64 {
        self.r1
    }

    pub fn r2(&self) -> f64 {
        self.r2
    }

    pub fn r3(&self) -> f64 {
        self.r3
    }

    /// Smallest admissible eigenvalue of `T`.
    pub fn eigen_floor(&self) -> f64 {
        1.0 / self.r3
    }
}

pub fn auto_radius(alpha_floor: f64) -> f64 {
    ((1.0 / alpha_floor).ln() / (alpha_floor * alpha_floor)).clamp(4.0, 1e4)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub projected: NaturalParams,
    pub was_interior: bool,
    /// Final multiplier on the Frobenius constraint; zero when it is slack.
    pub multiplier: f64,
}

/// Projection of the `T` block alone.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixProjection {
    pub t: DMatrix<f64>,
    pub was_interior: bool,
    pub multiplier: f64,
}

fn frobenius_from_identity(t: &DMatrix<f64>) -> f64 {
    (DMatrix::identity(t.nrows(), t.ncols()) - t).norm()
}

pub fn in_domain(w: &NaturalParams, d: &DomainSpec, tol: f64) -> bool {
    parts_in_domain(w.nu(), w.t(), d, tol)
}

pub(crate) fn parts_in_domain(nu: &DVector<f64>, t: &DMatrix<f64>, d: &DomainSpec, tol: f64) -> bool {
    nu.norm() <= d.r1 + tol
        && frobenius_from_identity(t) <= d.r2 + tol
        && linalg::min_eigenvalue(t) >= d.eigen_floor() - tol
}

/// Clamp to the ball of radius `r1`.
pub fn project_nu(nu: &DVector<f64>, r1: f64) -> DVector<f64> {
    let norm = nu.norm();
    if norm <= r1 {
        nu.clone()
    } else {
        nu * (r1 / norm)
    }
}

/// Nearest matrix in Frobenius norm satisfying `|I - T|_F <= r2` and
/// `T >= (1/r3) I`. The input is symmetrized first.
pub fn project_t(t: &DMatrix<f64>, d: &DomainSpec, bisect_tol: f64) -> Result<MatrixProjection> {
    let n = t.nrows();
    if t.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: t.ncols() });
    }
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("matrix to project has non-finite entries".into()));
    }
    let t = linalg::symmetrize(t);
    let floor = d.eigen_floor();
    let radius_sq = d.r2 * d.r2;

    let limit = floor.max(1.0) - 1.0;
    if n as f64 * limit * limit > radius_sq {
        return Err(Error::InfeasibleDomain(format!(
            "eigenvalue floor {floor} is incompatible with r2 = {} in dimension {n}",
            d.r2
        )));
    }

    let eig = linalg::eigen(&t);
    let h = &eig.eigenvalues;
    if h.min() >= floor && frobenius_from_identity(&t) <= d.r2 {
        return Ok(MatrixProjection { t, was_interior: true, multiplier: 0.0 });
    }

    let taus = |lambda: f64| -> DVector<f64> { h.map(|hi| ((hi + lambda) / (1.0 + lambda)).max(floor)) };
    let excess = |tau: &DVector<f64>| -> f64 { tau.iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>() - radius_sq };

    let mut multiplier = 0.0;
    let mut tau = taus(0.0);
    if excess(&tau) > 0.0 {
        let mut lo = 0.0_f64;
        let mut hi = 1.0_f64;
        while excess(&taus(hi)) > 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        loop {
            let tau_hi = taus(hi);
            let slack = -excess(&tau_hi);
            if hi - lo < bisect_tol * (1.0 + hi) || slack < RESIDUAL_TOL {
                tau = tau_hi;
                break;
            }
            let mid = 0.5 * (lo + hi);
            if excess(&taus(mid)) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        multiplier = hi;
    }

    let q = &eig.eigenvectors;
    let projected = linalg::symmetrize(&(q * DMatrix::from_diagonal(&tau) * q.transpose()));
    Ok(MatrixProjection { t: projected, was_interior: false, multiplier })
}

/// Projects raw `(nu, T)` blocks, which need not be positive definite.
pub fn project_parts(nu: &DVector<f64>, t: &DMatrix<f64>, d: &DomainSpec) -> Result<ProjectionResult> {
    Error::check_dim(t.nrows(), nu.len())?;
    let nu_p = project_nu(nu, d.r1);
    let nu_interior = nu_p == *nu;
    let mp = project_t(t, d, DEFAULT_BISECT_TOL)?;
    Ok(ProjectionResult {
        projected: NaturalParams::new(nu_p, mp.t)?,
        was_interior: nu_interior && mp.was_interior,
        multiplier: mp.multiplier,
    })
}

pub fn project(w: &NaturalParams, d: &DomainSpec) -> Result<ProjectionResult> {
    project_parts(w.nu(), w.t(), d)
}

pub fn project_flat(w: &FlatParams, d: &DomainSpec) -> Result<ProjectionResult> {
    project_parts(&w.nu_block(), &w.t_block(), d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn domain_validation() {
        assert!(DomainSpec::new(1.0, 1.0, 1.0).is_ok());
        assert!(DomainSpec::new(0.0, 1.0, 1.0).is_err());
        assert!(DomainSpec::new(1.0, 1.0, f64::NAN).is_err());
        // floor 1/r3 = 4 > 1 + r2 = 2
        assert!(matches!(DomainSpec::new(1.0, 1.0, 0.25), Err(Error::InfeasibleDomain(_))));
        assert_eq!(auto_radius(0.5), 4.0);
        assert_eq!(auto_radius(0.01), 1e4);
        assert_relative_eq!(auto_radius(0.1), 10f64.ln() * 100.0);
        assert!(DomainSpec::auto(0.0).is_err());
    }

    #[test]
    fn in_domain_examples() {
        let d = DomainSpec::uniform(1.0).unwrap();
        assert!(in_domain(&NaturalParams::standard(3), &d, 0.0));
        let d = DomainSpec::new(2.0, 10.0, 2.0).unwrap();
        assert!(!in_domain(&NaturalParams::new(dvector![3.0], dmatrix![1.0]).unwrap(), &d, 1e-9));
        assert!(!in_domain(&NaturalParams::new(dvector![0.0], dmatrix![0.4]).unwrap(), &d, 1e-9));
    }

    #[test]
    fn nu_clamp() {
        assert_eq!(project_nu(&dvector![0.5, 0.5], 1.0), dvector![0.5, 0.5]);
        assert_eq!(project_nu(&dvector![4.0], 2.0), dvector![2.0]);
        assert_eq!(project_nu(&dvector![3.0, 4.0], 5.0), dvector![3.0, 4.0]);
    }

    #[test]
    fn scalar_interval_projection() {
        let d = DomainSpec::new(1.0, 2.0, 2.0).unwrap();
        let up = project_t(&dmatrix![5.0], &d, DEFAULT_BISECT_TOL).unwrap();
        assert_relative_eq!(up.t[(0, 0)], 3.0, epsilon = 1e-8);
        assert!(up.multiplier > 0.0);
        let down = project_t(&dmatrix![0.1], &d, DEFAULT_BISECT_TOL).unwrap();
        assert_relative_eq!(down.t[(0, 0)], 0.5, epsilon = 1e-12);
        let inside = project_t(&dmatrix![1.7], &d, DEFAULT_BISECT_TOL).unwrap();
        assert_eq!(inside.t, dmatrix![1.7]);
        assert!(inside.was_interior);
        assert_eq!(inside.multiplier, 0.0);
    }

    #[test]
    fn combined_projection() {
        let d = DomainSpec::new(2.0, 2.0, 2.0).unwrap();
        let w = NaturalParams::new(dvector![4.0], dmatrix![5.0]).unwrap();
        let r = project(&w, &d).unwrap();
        assert!(!r.was_interior);
        assert_relative_eq!(r.projected.nu()[0], 2.0);
        assert_relative_eq!(r.projected.t()[(0, 0)], 3.0, epsilon = 1e-8);
        let again = project(&r.projected, &d).unwrap();
        assert!(again.was_interior);
        assert!((again.projected.t() - r.projected.t()).norm() < 1e-8);

        let inner = NaturalParams::standard(2);
        let r = project(&inner, &d).unwrap();
        assert!(r.was_interior);
        assert_eq!(r.projected, inner);
    }

    #[test]
    fn indefinite_input_is_lifted() {
        let d = DomainSpec::new(10.0, 10.0, 4.0).unwrap();
        let r = project_parts(&dvector![0.0, 0.0], &dmatrix![-3.0, 1.0; 1.0, 2.0], &d).unwrap();
        assert!(in_domain(&r.projected, &d, 1e-8));
        assert!(linalg::min_eigenvalue(r.projected.t()) >= 0.25 - 1e-12);
    }

    #[test]
    fn infeasible_in_high_dimension() {
        // 1/r3 = 1.9 <= 1 + r2, but four eigenvalues of at least 1.9 cannot
        // sit within Frobenius distance 1 of the identity.
        let d = DomainSpec::new(1.0, 1.0, 1.0 / 1.9).unwrap();
        assert!(matches!(
            project_t(&DMatrix::identity(4, 4), &d, DEFAULT_BISECT_TOL),
            Err(Error::InfeasibleDomain(_))
        ));
    }
}
