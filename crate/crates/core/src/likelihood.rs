//! Negative log-likelihood of truncated samples in natural parameters.
//!
//! For one sample `x` and parameters `(nu, T)`:
//!
//! ```text
//! l(nu, T; x) = 1/2 x'Tx - x'nu + log Z_S(nu, T)
//! Z_S(nu, T)  = integral over S of exp(-1/2 z'Tz + z'nu) dz
//! ```
//!
//! The gradient with respect to `(T flattened, nu)` is
//! `-(-1/2 xx', x) + E[(-1/2 zz', z)]` with `z ~ N(T^-1 nu, T^-1)` restricted
//! to `S`. Replacing the expectation by one rejection sample gives an
//! unbiased stochastic gradient, which is all the optimizer needs. The NLL
//! values themselves are only used for diagnostics.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::params::{FlatParams, GaussianParams, NaturalParams};
use crate::rng::RngStream;
use crate::sampling::{sample_truncated_with, GaussianSampler, RejectionConfig};
use crate::sets::{measure_estimate, MembershipOracle};

/// One stochastic gradient `v` in flat `(T, nu)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub v: FlatParams,
    /// Oracle queries spent drawing the model sample.
    pub attempts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllEstimate {
    pub value: f64,
    pub std_error: f64,
    pub mc_samples: usize,
}

/// `-(-1/2 xx', x) + (-1/2 yy', y)` for a data point `x` and a model draw `y`.
pub fn gradient_from_pair(x: &DVector<f64>, y: &DVector<f64>) -> FlatParams {
    let t = (x * x.transpose() - y * y.transpose()) * 0.5;
    FlatParams::from_parts(&t, &(y - x))
}

pub(crate) fn model_sampler(w: &NaturalParams) -> Result<GaussianSampler> {
    GaussianSampler::new(&GaussianParams::from_natural(w)?)
}

/// Unbiased estimate of the gradient of `l(nu, T; x)`.
pub fn gradient_sample<S: MembershipOracle + ?Sized>(
    x: &DVector<f64>,
    w: &NaturalParams,
    s: &S,
    cfg: &RejectionConfig,
    rng: &mut RngStream,
) -> Result<GradientSample> {
    Error::check_dim(w.dim(), x.len())?;
    let sampler = model_sampler(w)?;
    let draw = sample_truncated_with(&sampler, s, cfg, rng)?;
    Ok(GradientSample { v: gradient_from_pair(x, &draw.point), attempts: draw.attempts })
}

/// Monte-Carlo estimate of `log Z_S(nu, T)`.
///
/// `Z_S` is the closed-form Gaussian integral over all of space times the
/// mass that `N(T^-1 nu, T^-1)` puts on `S`; only the mass is sampled.
pub fn log_normalizer<S: MembershipOracle + ?Sized>(
    w: &NaturalParams,
    s: &S,
    mc_samples: usize,
    rng: &mut RngStream,
) -> Result<NllEstimate> {
    let g = GaussianParams::from_natural(w)?;
    let eig = linalg::spd_eigen(w.t())?;
    let log_det_t: f64 = eig.eigenvalues.iter().map(|l| l.ln()).sum();
    let d = w.dim() as f64;
    let log_full = 0.5 * d * (2.0 * PI).ln() - 0.5 * log_det_t + 0.5 * w.nu().dot(g.mean());

    let mass = measure_estimate(&g, s, mc_samples, rng)?;
    if mass == 0.0 {
        return Err(Error::MassTooLow { attempts: mc_samples as u64 });
    }
    let std_error = ((1.0 - mass) / (mc_samples as f64 * mass)).sqrt();
    Ok(NllEstimate { value: log_full + mass.ln(), std_error, mc_samples })
}

fn data_term(x: &DVector<f64>, w: &NaturalParams) -> f64 {
    0.5 * x.dot(&(w.t() * x)) - x.dot(w.nu())
}

pub fn nll_single<S: MembershipOracle + ?Sized>(
    x: &DVector<f64>,
    w: &NaturalParams,
    s: &S,
    mc_samples: usize,
    rng: &mut RngStream,
) -> Result<NllEstimate> {
    nll_population(std::slice::from_ref(x), w, s, mc_samples, rng)
}

/// Average NLL over `data`, sharing one log-normalizer estimate.
pub fn nll_population<S: MembershipOracle + ?Sized>(
    data: &[DVector<f64>],
    w: &NaturalParams,
    s: &S,
    mc_samples: usize,
    rng: &mut RngStream,
) -> Result<NllEstimate> {
    if data.is_empty() {
        return Err(Error::Validation("nll_population needs at least one data point".into()));
    }
    for x in data {
        Error::check_dim(w.dim(), x.len())?;
    }
    let avg = data.iter().map(|x| data_term(x, w)).sum::<f64>() / data.len() as f64;
    let z = log_normalizer(w, s, mc_samples, rng)?;
    Ok(NllEstimate { value: avg + z.value, ..z })
}

/// Direction in natural-parameter space of flat coordinate `k`.
///
/// A `T` entry `(i, j)` moves the symmetric part by `(E_ij + E_ji) / 2`,
/// which is how the full `d^2` parametrization acts on the likelihood.
fn coordinate_direction(d: usize, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut dt = DMatrix::zeros(d, d);
    let mut dnu = DVector::zeros(d);
    if k < d * d {
        let (i, j) = (k / d, k % d);
        dt[(i, j)] += 0.5;
        dt[(j, i)] += 0.5;
    } else {
        dnu[k - d * d] = 1.0;
    }
    (dt, dnu)
}

fn shifted(w: &NaturalParams, dt: &DMatrix<f64>, dnu: &DVector<f64>, h: f64) -> Result<NaturalParams> {
    NaturalParams::new(w.nu() + dnu * h, w.t() + dt * h)
}

/// Central differences of [`nll_population`] along each flat coordinate,
/// with common random numbers: every evaluation replays a clone of `rng`.
pub fn finite_difference_gradient<S: MembershipOracle + ?Sized>(
    w: &NaturalParams,
    data: &[DVector<f64>],
    s: &S,
    step: f64,
    mc_samples: usize,
    rng: &RngStream,
) -> Result<DVector<f64>> {
    if !(step > 0.0) {
        return Err(Error::Validation(format!("finite-difference step must be positive, got {step}")));
    }
    let d = w.dim();
    let eval = |p: &NaturalParams| nll_population(data, p, s, mc_samples, &mut rng.clone()).map(|e| e.value);
    let mut grad = DVector::zeros(d * d + d);
    for k in 0..d * d + d {
        let (dt, dnu) = coordinate_direction(d, k);
        let plus = eval(&shifted(w, &dt, &dnu, step)?)?;
        let minus = eval(&shifted(w, &dt, &dnu, -step)?)?;
        grad[k] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Second differences of the log-normalizer, which is the only curved part
/// of the NLL. A diagnostic for the covariance form of the Hessian.
pub fn finite_difference_hessian<S: MembershipOracle + ?Sized>(
    w: &NaturalParams,
    s: &S,
    step: f64,
    mc_samples: usize,
    rng: &RngStream,
) -> Result<DMatrix<f64>> {
    if !(step > 0.0) {
        return Err(Error::Validation(format!("finite-difference step must be positive, got {step}")));
    }
    let d = w.dim();
    let n = d * d + d;
    let eval = |p: &NaturalParams| log_normalizer(p, s, mc_samples, &mut rng.clone()).map(|e| e.value);
    let dirs: Vec<_> = (0..n).map(|k| coordinate_direction(d, k)).collect();
    let mut hess = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let at = |sa: f64, sb: f64| {
                let dt = &dirs[a].0 * sa + &dirs[b].0 * sb;
                let dnu = &dirs[a].1 * sa + &dirs[b].1 * sb;
                shifted(w, &dt, &dnu, step).and_then(|p| eval(&p))
            };
            let val = (at(1.0, 1.0)? - at(1.0, -1.0)? - at(-1.0, 1.0)? + at(-1.0, -1.0)?) / (4.0 * step * step);
            hess[(a, b)] = val;
            hess[(b, a)] = val;
        }
    }
    Ok(hess)
}

/// Density of `N(mean, cov)` conditioned on `S`, with the mass of `S`
/// estimated from `mc_samples` draws. Zero outside `S`.
pub fn truncated_density<S: MembershipOracle + ?Sized>(
    p: &GaussianParams,
    s: &S,
    x: &DVector<f64>,
    mc_samples: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if !s.contains(x)? {
        return Ok(0.0);
    }
    let mass = measure_estimate(p, s, mc_samples, rng)?;
    if mass == 0.0 {
        return Err(Error::MassTooLow { attempts: mc_samples as u64 });
    }
    Ok(p.pdf(x)? / mass)
}
