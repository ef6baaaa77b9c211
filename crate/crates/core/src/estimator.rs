//! The estimation pipeline.
//!
//! 1. Empirical mean and covariance of a first slice of the data.
//! 2. An affine change of coordinates sending those moments to `(0, I)`; the
//!    set is wrapped so that membership is still asked in original coordinates.
//! 3. `K` independent projected SGD runs, each on its own shard of the data,
//!    with step `1 / (lambda i)` and averaging of all iterates.
//! 4. Selection of the run whose output sits closest to the others.
//! 5. The selected average is mapped back to original coordinates.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::gradient_sample;
use crate::linalg;
use crate::params::{frobenius_error, mahalanobis_error, AffineMap, FlatParams, GaussianParams, NaturalParams};
use crate::projection::{project, project_flat, DomainSpec};
use crate::rng::RngStream;
use crate::sampling::RejectionConfig;
use crate::sets::{measure_estimate, MembershipOracle, TransformedSet};

/// Draws used to measure the set's mass under the whitened initialization.
pub const INIT_MASS_SAMPLES: usize = 10_000;
const INIT_MASS_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DomainChoice {
    /// Radius derived from `alpha_floor`, see [`DomainSpec::auto`].
    #[default]
    Auto,
    Explicit(DomainSpec),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawDomainChoice {
    Name(String),
    Radii(DomainSpec),
}

impl Serialize for DomainChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DomainChoice::Auto => RawDomainChoice::Name("auto".into()).serialize(s),
            DomainChoice::Explicit(d) => RawDomainChoice::Radii(*d).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for DomainChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match RawDomainChoice::deserialize(d)? {
            RawDomainChoice::Name(n) if n == "auto" => Ok(DomainChoice::Auto),
            RawDomainChoice::Name(n) => Err(serde::de::Error::custom(format!(
                "domain must be \"auto\" or {{\"r1\",\"r2\",\"r3\"}}, got \"{n}\""
            ))),
            RawDomainChoice::Radii(r) => Ok(DomainChoice::Explicit(r)),
        }
    }
}

fn default_lambda() -> f64 {
    0.1
}
fn default_repetitions() -> usize {
    3
}
fn default_alpha_floor() -> f64 {
    0.01
}
fn default_max_attempts() -> u64 {
    RejectionConfig::default().max_attempts
}

/// Estimator configuration; the JSON config file deserializes into this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    /// SGD steps per run, `M`.
    pub steps: usize,
    /// Strong-convexity constant used for the step sizes.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Independent runs, `K`.
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    /// Samples reserved for the moment initialization; `max(10 d^2, 1000)` when absent.
    #[serde(default)]
    pub init_samples: Option<usize>,
    /// Assumed lower bound on the Gaussian mass of the set; drives `domain: "auto"`.
    #[serde(default = "default_alpha_floor")]
    pub alpha_floor: f64,
    #[serde(default)]
    pub domain: DomainChoice,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u64,
}

impl SgdConfig {
    pub fn new(steps: usize) -> Self {
        SgdConfig {
            steps,
            lambda: default_lambda(),
            repetitions: default_repetitions(),
            seed: 0,
            init_samples: None,
            alpha_floor: default_alpha_floor(),
            domain: DomainChoice::Auto,
            max_attempts: default_max_attempts(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Validation("steps must be at least 1".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Validation("repetitions must be at least 1".into()));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Validation(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.init_samples == Some(0) {
            return Err(Error::Validation("init_samples must be at least 1".into()));
        }
        RejectionConfig::new(self.max_attempts)?;
        self.domain_spec().map(|_| ())
    }

    pub fn domain_spec(&self) -> Result<DomainSpec> {
        match self.domain {
            DomainChoice::Auto => DomainSpec::auto(self.alpha_floor),
            DomainChoice::Explicit(d) => Ok(d),
        }
    }

    pub fn rejection(&self) -> RejectionConfig {
        RejectionConfig { max_attempts: self.max_attempts }
    }

    pub fn init_samples_for(&self, dim: usize) -> usize {
        self.init_samples.unwrap_or((10 * dim * dim).max(1000))
    }

    /// Total samples [`estimate`] consumes in dimension `dim`.
    pub fn samples_needed(&self, dim: usize) -> usize {
        self.init_samples_for(dim) + self.repetitions * self.steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Checkpoint {
    pub step: usize,
    /// Running average of the iterates up to `step`, whitened coordinates.
    pub average: NaturalParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    /// Average of all iterates, whitened coordinates.
    pub average: NaturalParams,
    pub last_iterate: NaturalParams,
    pub checkpoints: Vec<Checkpoint>,
    /// Membership queries spent by the rejection sampler.
    pub oracle_queries: u64,
    pub samples_consumed: usize,
    /// Worst single-step rejection count; large values mean low mass.
    pub max_attempts_per_step: u64,
    /// Steps at which the projection changed the point.
    pub active_projections: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorMetrics {
    pub mahalanobis_error: f64,
    pub frobenius_error: f64,
}

impl ErrorMetrics {
    pub fn between(truth: &GaussianParams, est: &GaussianParams) -> Result<Self> {
        Ok(ErrorMetrics {
            mahalanobis_error: mahalanobis_error(truth, est)?,
            frobenius_error: frobenius_error(truth, est)?,
        })
    }

    pub fn sum(&self) -> f64 {
        self.mahalanobis_error + self.frobenius_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub estimate: GaussianParams,
    pub initial_moments: GaussianParams,
    /// Map from original to whitened coordinates.
    pub whitening: AffineMap,
    pub domain: DomainSpec,
    pub runs: Vec<RunTrace>,
    pub selected_run: usize,
    /// Mass of the set under the whitened initialization `N(0, I)`.
    pub init_mass: f64,
    /// Queries the estimate made on the caller's set, read from its counter.
    pub oracle_queries: u64,
    pub samples_used: usize,
    pub errors: Option<ErrorMetrics>,
}

impl EstimateReport {
    pub fn attach_truth(&mut self, truth: &GaussianParams) -> Result<ErrorMetrics> {
        let m = ErrorMetrics::between(truth, &self.estimate)?;
        self.errors = Some(m);
        Ok(m)
    }
}

/// Sample mean and (biased, `1/n`) sample covariance.
pub fn empirical_moments(data: &[DVector<f64>]) -> Result<GaussianParams> {
    let d = data.first().map(|x| x.len()).ok_or(Error::RankDeficient { samples: 0, dim: 0 })?;
    let n = data.len();
    if n <= d {
        return Err(Error::RankDeficient { samples: n, dim: d });
    }
    for x in data {
        Error::check_dim(d, x.len())?;
    }
    let mean = data.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for x in data {
        let c = x - &mean;
        cov += &c * c.transpose();
    }
    cov /= n as f64;
    GaussianParams::new(mean, cov).map_err(|e| match e {
        Error::NotPositiveDefinite => Error::RankDeficient { samples: n, dim: d },
        other => other,
    })
}

/// `x -> cov^-1/2 (x - mean)`, sending `moments` to `(0, I)`.
pub fn make_whitening(moments: &GaussianParams) -> Result<AffineMap> {
    let root = linalg::spd_inv_sqrt(moments.cov())?;
    let shift = -(&root * moments.mean());
    AffineMap::new(root, shift)
}

/// One projected SGD run from `(nu, T) = (0, I)` on whitened data.
pub fn sgd_run<I, S>(
    data: I,
    set: &S,
    cfg: &SgdConfig,
    domain: &DomainSpec,
    rng: &mut RngStream,
) -> Result<RunTrace>
where
    I: IntoIterator<Item = DVector<f64>>,
    S: MembershipOracle + ?Sized,
{
    cfg.validate()?;
    let d = set.dim();
    let m = cfg.steps;
    let rejection = cfg.rejection();
    let every = (m / 100).max(1);

    let mut w = project(&NaturalParams::standard(d), domain)?.projected;
    let mut sum = DVector::zeros(d * d + d);
    let mut checkpoints = Vec::with_capacity(m / every + 1);
    let mut oracle_queries = 0;
    let mut max_attempts_per_step = 0;
    let mut active_projections = 0;
    let mut data = data.into_iter();

    for i in 1..=m {
        let x = data.next().ok_or(Error::DataExhausted { needed: m, available: i - 1 })?;
        Error::check_dim(d, x.len())?;
        let eta = 1.0 / (cfg.lambda * i as f64);
        let v = gradient_sample(&x, &w, set, &rejection, rng)?;
        oracle_queries += v.attempts;
        max_attempts_per_step = max_attempts_per_step.max(v.attempts);
        let stepped = w.flatten().into_vector() - v.v.as_vector() * eta;
        let proj = project_flat(&FlatParams::from_vector(d, stepped)?, domain)?;
        if !proj.was_interior {
            active_projections += 1;
        }
        w = proj.projected;
        debug_assert!(crate::projection::in_domain(&w, domain, 1e-8), "iterate {i} left the domain");
        sum += w.flatten().as_vector();
        if i % every == 0 || i == m {
            let avg = FlatParams::from_vector(d, &sum / i as f64)?.unflatten()?;
            checkpoints.push(Checkpoint { step: i, average: avg });
        }
    }

    let average = FlatParams::from_vector(d, sum / m as f64)?.unflatten()?;
    Ok(RunTrace {
        average,
        last_iterate: w,
        checkpoints,
        oracle_queries,
        samples_consumed: m,
        max_attempts_per_step,
        active_projections,
    })
}

/// Index minimizing the median distance to the other points; lowest index
/// wins ties. With one or two points there is no majority and 0 is returned.
pub fn medoid_index(points: &[FlatParams]) -> usize {
    if points.len() <= 2 {
        return 0;
    }
    let median_distance = |i: usize| {
        let mut ds: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, p)| p.distance(&points[i]))
            .collect();
        ds.sort_by(f64::total_cmp);
        let k = ds.len();
        if k % 2 == 1 {
            ds[k / 2]
        } else {
            0.5 * (ds[k / 2 - 1] + ds[k / 2])
        }
    };
    let mut best = (0, median_distance(0));
    for i in 1..points.len() {
        let m = median_distance(i);
        if m < best.1 {
            best = (i, m);
        }
    }
    best.0
}

pub fn select_estimate(runs: &[RunTrace]) -> usize {
    let finals: Vec<FlatParams> = runs.iter().map(|r| r.average.flatten()).collect();
    medoid_index(&finals)
}

/// Runs the whole pipeline on `data`, truncated to `set`.
pub fn estimate<S>(data: &[DVector<f64>], set: &S, cfg: &SgdConfig) -> Result<EstimateReport>
where
    S: MembershipOracle + ?Sized,
{
    cfg.validate()?;
    let d = set.dim();
    for x in data {
        Error::check_dim(d, x.len())?;
    }
    let n_init = cfg.init_samples_for(d);
    let needed = cfg.samples_needed(d);
    if data.len() < needed {
        return Err(Error::DataExhausted { needed, available: data.len() });
    }
    let domain = cfg.domain_spec()?;
    let queries_before = set.queries();

    let initial_moments = empirical_moments(&data[..n_init])?;
    let whitening = make_whitening(&initial_moments)?;
    let unwhitening = whitening.inverse();
    let whitened_set = TransformedSet::new(set, unwhitening.clone())?;

    let root = RngStream::new(cfg.seed);
    let init_mass = measure_estimate(
        &GaussianParams::standard(d),
        &whitened_set,
        INIT_MASS_SAMPLES,
        &mut root.split(INIT_MASS_STREAM),
    )?;

    let runs: Vec<RunTrace> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|k| {
            let start = n_init + k * cfg.steps;
            let shard = data[start..start + cfg.steps].iter().map(|x| whitening.apply(x));
            sgd_run(shard, &whitened_set, cfg, &domain, &mut root.split(k as u64))
        })
        .collect::<Result<_>>()?;

    let selected_run = select_estimate(&runs);
    let whitened_estimate = runs[selected_run].average.to_gaussian()?;
    let estimate = unwhitening.push_params(&whitened_estimate)?;

    Ok(EstimateReport {
        estimate,
        initial_moments,
        whitening,
        domain,
        runs,
        selected_run,
        init_mass,
        oracle_queries: set.queries() - queries_before,
        samples_used: needed,
        errors: None,
    })
}
