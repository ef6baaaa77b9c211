//! Parameter representations.
//!
//! A Gaussian is carried either as `(mean, cov)` or in natural form
//! `(nu, T) = (cov^-1 mean, cov^-1)`. The optimizer works on the flat vector
//! `w = (T row-major, nu)` of length `d^2 + d`.

use nalgebra::{DMatrix, DVector};
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg;

/// Mean vector and symmetric positive-definite covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGaussian", into = "RawGaussian")]
pub struct GaussianParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawGaussian {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl TryFrom<RawGaussian> for GaussianParams {
    type Error = Error;

    fn try_from(raw: RawGaussian) -> Result<Self> {
        let d = raw.mean.len();
        if raw.cov.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: raw.cov.len() });
        }
        for row in &raw.cov {
            Error::check_dim(d, row.len())?;
        }
        let cov = DMatrix::from_fn(d, d, |i, j| raw.cov[i][j]);
        GaussianParams::new(DVector::from_vec(raw.mean), cov)
    }
}

impl From<GaussianParams> for RawGaussian {
    fn from(p: GaussianParams) -> Self {
        RawGaussian {
            mean: p.mean.iter().copied().collect(),
            cov: matrix_rows(&p.cov),
        }
    }
}

impl GaussianParams {
    /// Builds the parameters, symmetrizing `cov` and rejecting anything that is
    /// not positive definite.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(Error::DimensionMismatch { expected: cov.nrows(), found: cov.ncols() });
        }
        Error::check_dim(cov.nrows(), mean.len())?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("mean has non-finite entries".into()));
        }
        let cov = linalg::symmetrize(&cov);
        linalg::spd_eigen(&cov)?;
        Ok(GaussianParams { mean, cov })
    }

    pub fn standard(dim: usize) -> Self {
        GaussianParams { mean: DVector::zeros(dim), cov: DMatrix::identity(dim, dim) }
    }

    /// Convenience for the univariate case.
    pub fn univariate(mean: f64, variance: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, variance))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn from_natural(p: &NaturalParams) -> Result<Self> {
        let cov = linalg::spd_inverse(&p.t)?;
        let mean = &cov * &p.nu;
        GaussianParams::new(mean, cov)
    }

    /// Density of the untruncated normal at `x`.
    pub fn pdf(&self, x: &DVector<f64>) -> Result<f64> {
        Error::check_dim(self.dim(), x.len())?;
        let eig = linalg::spd_eigen(&self.cov)?;
        let log_det: f64 = eig.eigenvalues.iter().map(|l| l.ln()).sum();
        let prec = linalg::spd_inverse(&self.cov)?;
        let diff = x - &self.mean;
        let quad = diff.dot(&(&prec * &diff));
        let d = self.dim() as f64;
        Ok((-0.5 * (quad + log_det + d * (2.0 * std::f64::consts::PI).ln())).exp())
    }
}

/// Natural parameters `(nu, T)`. `T` is kept symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams {
    nu: DVector<f64>,
    t: DMatrix<f64>,
}

impl NaturalParams {
    pub fn new(nu: DVector<f64>, t: DMatrix<f64>) -> Result<Self> {
        if t.nrows() != t.ncols() {
            return Err(Error::DimensionMismatch { expected: t.nrows(), found: t.ncols() });
        }
        Error::check_dim(t.nrows(), nu.len())?;
        let t = linalg::symmetrize(&t);
        linalg::spd_eigen(&t)?;
        Ok(NaturalParams { nu, t })
    }

    /// The natural parameters of the standard normal: `nu = 0`, `T = I`.
    pub fn standard(dim: usize) -> Self {
        NaturalParams { nu: DVector::zeros(dim), t: DMatrix::identity(dim, dim) }
    }

    pub fn from_gaussian(p: &GaussianParams) -> Result<Self> {
        let t = linalg::spd_inverse(&p.cov)?;
        let nu = &t * &p.mean;
        NaturalParams::new(nu, t)
    }

    pub fn to_gaussian(&self) -> Result<GaussianParams> {
        GaussianParams::from_natural(self)
    }

    pub fn dim(&self) -> usize {
        self.nu.len()
    }

    pub fn nu(&self) -> &DVector<f64> {
        &self.nu
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn flatten(&self) -> FlatParams {
        FlatParams::from_parts(&self.t, &self.nu)
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl Serialize for NaturalParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("NaturalParams", 2)?;
        st.serialize_field("nu", self.nu.as_slice())?;
        st.serialize_field("t", &matrix_rows(&self.t))?;
        st.end()
    }
}

/// Flat optimization vector `w = (T row-major, nu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    dim: usize,
    w: DVector<f64>,
}

impl FlatParams {
    pub fn from_parts(t: &DMatrix<f64>, nu: &DVector<f64>) -> Self {
        let d = nu.len();
        debug_assert_eq!(t.nrows(), d);
        let mut w = DVector::zeros(d * d + d);
        for i in 0..d {
            for j in 0..d {
                w[i * d + j] = t[(i, j)];
            }
            w[d * d + i] = nu[i];
        }
        FlatParams { dim: d, w }
    }

    /// Wraps a raw vector of length `d^2 + d`.
    pub fn from_vector(dim: usize, w: DVector<f64>) -> Result<Self> {
        Error::check_dim(dim * dim + dim, w.len())?;
        Ok(FlatParams { dim, w })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.w
    }

    /// The `T` block reshaped to `d x d`, without symmetrization.
    pub fn t_block(&self) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |i, j| self.w[i * d + j])
    }

    pub fn nu_block(&self) -> DVector<f64> {
        let d = self.dim;
        self.w.rows(d * d, d).into_owned()
    }

    /// Inverse of [`NaturalParams::flatten`]; fails if the `T` block is not SPD.
    pub fn unflatten(&self) -> Result<NaturalParams> {
        NaturalParams::new(self.nu_block(), self.t_block())
    }

    pub fn distance(&self, other: &FlatParams) -> f64 {
        (&self.w - &other.w).norm()
    }
}

/// The affine map `x -> scale * x + shift` with invertible `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    scale: DMatrix<f64>,
    shift: DVector<f64>,
    scale_inv: DMatrix<f64>,
}

impl AffineMap {
    pub fn new(scale: DMatrix<f64>, shift: DVector<f64>) -> Result<Self> {
        if scale.nrows() != scale.ncols() {
            return Err(Error::DimensionMismatch { expected: scale.nrows(), found: scale.ncols() });
        }
        Error::check_dim(scale.nrows(), shift.len())?;
        let scale_inv = scale.clone().try_inverse().ok_or(Error::SingularTransform)?;
        if scale_inv.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularTransform);
        }
        Ok(AffineMap { scale, shift, scale_inv })
    }

    pub fn identity(dim: usize) -> Self {
        AffineMap {
            scale: DMatrix::identity(dim, dim),
            shift: DVector::zeros(dim),
            scale_inv: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.scale * x + &self.shift
    }

    pub fn inverse_apply(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.scale_inv * (y - &self.shift)
    }

    pub fn inverse(&self) -> AffineMap {
        AffineMap {
            scale: self.scale_inv.clone(),
            shift: -(&self.scale_inv * &self.shift),
            scale_inv: self.scale.clone(),
        }
    }

    /// `self.compose(inner)` is the map `x -> self(inner(x))`.
    pub fn compose(&self, inner: &AffineMap) -> Result<AffineMap> {
        Error::check_dim(self.dim(), inner.dim())?;
        AffineMap::new(&self.scale * &inner.scale, &self.scale * &inner.shift + &self.shift)
    }

    /// Distribution of `A x + b` when `x ~ N(mean, cov)`.
    pub fn push_params(&self, p: &GaussianParams) -> Result<GaussianParams> {
        Error::check_dim(self.dim(), p.dim())?;
        let cov = &self.scale * &p.cov * self.scale.transpose();
        GaussianParams::new(self.apply(&p.mean), cov)
    }

    pub fn pull_params(&self, p: &GaussianParams) -> Result<GaussianParams> {
        self.inverse().push_params(p)
    }
}

impl Serialize for AffineMap {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("AffineMap", 2)?;
        st.serialize_field("scale", &matrix_rows(&self.scale))?;
        st.serialize_field("shift", self.shift.as_slice())?;
        st.end()
    }
}

/// `|| cov^-1/2 (mean - est.mean) ||_2`, measured in the truth's geometry.
pub fn mahalanobis_error(truth: &GaussianParams, est: &GaussianParams) -> Result<f64> {
    Error::check_dim(truth.dim(), est.dim())?;
    let root = linalg::spd_inv_sqrt(&truth.cov)?;
    Ok((root * (&truth.mean - &est.mean)).norm())
}

/// `|| I - cov^-1/2 est.cov cov^-1/2 ||_F`.
pub fn frobenius_error(truth: &GaussianParams, est: &GaussianParams) -> Result<f64> {
    Error::check_dim(truth.dim(), est.dim())?;
    let d = truth.dim();
    let root = linalg::spd_inv_sqrt(&truth.cov)?;
    let rel = &root * &est.cov * &root;
    Ok((DMatrix::identity(d, d) - rel).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn flatten_layout() {
        let p = NaturalParams::new(dvector![3.0], dmatrix![2.0]).unwrap();
        assert_eq!(p.flatten().as_vector().as_slice(), &[2.0, 3.0]);
        let id = NaturalParams::standard(2);
        assert_eq!(id.flatten().as_vector().as_slice(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let p = NaturalParams::new(dvector![1.0, -2.0], dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap();
        assert_eq!(p.flatten().unflatten().unwrap(), p);
    }

    #[test]
    fn natural_conversions() {
        let p = GaussianParams::standard(3);
        let n = NaturalParams::from_gaussian(&p).unwrap();
        assert_eq!(n, NaturalParams::standard(3));

        let p = GaussianParams::univariate(2.0, 4.0).unwrap();
        let n = NaturalParams::from_gaussian(&p).unwrap();
        assert_relative_eq!(n.nu()[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(n.t()[(0, 0)], 0.25, epsilon = 1e-15);

        let n = NaturalParams::new(dvector![0.5], dmatrix![0.25]).unwrap();
        let g = n.to_gaussian().unwrap();
        assert_relative_eq!(g.mean()[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(g.cov()[(0, 0)], 4.0, epsilon = 1e-12);
        assert_eq!(NaturalParams::standard(2).to_gaussian().unwrap(), GaussianParams::standard(2));
    }

    #[test]
    fn construction_errors() {
        assert_eq!(
            GaussianParams::new(dvector![0.0, 0.0], dmatrix![1.0, 2.0; 2.0, 1.0]),
            Err(Error::NotPositiveDefinite)
        );
        assert!(matches!(
            GaussianParams::new(dvector![0.0], dmatrix![1.0, 0.0; 0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert_eq!(
            NaturalParams::new(dvector![0.0], dmatrix![0.0]),
            Err(Error::NotPositiveDefinite)
        );
        let asym = GaussianParams::new(dvector![0.0, 0.0], dmatrix![2.0, 0.3; 0.1, 2.0]).unwrap();
        assert_eq!(asym.cov()[(0, 1)], asym.cov()[(1, 0)]);
    }

    #[test]
    fn metric_examples() {
        let id = GaussianParams::standard(2);
        let shifted = GaussianParams::new(dvector![3.0, 4.0], DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(mahalanobis_error(&id, &shifted).unwrap(), 5.0, epsilon = 1e-12);
        assert_eq!(mahalanobis_error(&id, &id).unwrap(), 0.0);

        let t = GaussianParams::new(dvector![2.0, 0.0], dmatrix![4.0, 0.0; 0.0, 1.0]).unwrap();
        let e = GaussianParams::new(dvector![0.0, 0.0], dmatrix![4.0, 0.0; 0.0, 1.0]).unwrap();
        assert_relative_eq!(mahalanobis_error(&t, &e).unwrap(), 1.0, epsilon = 1e-12);

        assert_relative_eq!(frobenius_error(&t, &t).unwrap(), 0.0, epsilon = 1e-12);
        let d21 = GaussianParams::new(DVector::zeros(2), dmatrix![2.0, 0.0; 0.0, 1.0]).unwrap();
        assert_relative_eq!(frobenius_error(&id, &d21).unwrap(), 1.0, epsilon = 1e-12);
        let four = GaussianParams::new(DVector::zeros(2), DMatrix::identity(2, 2) * 4.0).unwrap();
        assert_relative_eq!(frobenius_error(&id, &four).unwrap(), 3.0 * 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn affine_push_and_pull() {
        let p = GaussianParams::univariate(0.0, 1.0).unwrap();
        assert_eq!(AffineMap::identity(1).push_params(&p).unwrap(), p);

        let m = AffineMap::new(dmatrix![2.0], dvector![1.0]).unwrap();
        let q = m.push_params(&p).unwrap();
        assert_relative_eq!(q.mean()[0], 1.0);
        assert_relative_eq!(q.cov()[(0, 0)], 4.0);
        let back = m.pull_params(&q).unwrap();
        assert_relative_eq!(back.mean()[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(back.cov()[(0, 0)], 1.0, epsilon = 1e-12);

        let x = dvector![0.7];
        assert_relative_eq!(m.apply(&m.inverse_apply(&x))[0], 0.7, epsilon = 1e-12);
        assert_eq!(
            AffineMap::new(dmatrix![1.0, 1.0; 1.0, 1.0], dvector![0.0, 0.0]),
            Err(Error::SingularTransform)
        );
    }

    #[test]
    fn compose_matches_sequential_application() {
        let a = AffineMap::new(dmatrix![2.0, 1.0; 0.0, 1.0], dvector![1.0, -1.0]).unwrap();
        let b = AffineMap::new(dmatrix![0.5, 0.0; 0.3, 3.0], dvector![0.0, 2.0]).unwrap();
        let ab = a.compose(&b).unwrap();
        let x = dvector![0.3, -1.2];
        assert!((ab.apply(&x) - a.apply(&b.apply(&x))).norm() < 1e-12);
        let round = a.compose(&a.inverse()).unwrap();
        assert!((round.apply(&x) - &x).norm() < 1e-12);
    }

    #[test]
    fn json_shape() {
        let p = GaussianParams::new(dvector![0.0, 1.0], DMatrix::identity(2, 2)).unwrap();
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(text, r#"{"mean":[0.0,1.0],"cov":[[1.0,0.0],[0.0,1.0]]}"#);
        let back: GaussianParams = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<GaussianParams>(r#"{"mean":[0],"cov":[[-1]]}"#).is_err());
    }
}
