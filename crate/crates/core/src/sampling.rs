//! Gaussian draws and plain rejection sampling against a membership oracle.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::params::GaussianParams;
use crate::rng::RngStream;
use crate::sets::MembershipOracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionConfig {
    pub max_attempts: u64,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        RejectionConfig { max_attempts: 1_000_000 }
    }
}

impl RejectionConfig {
    pub fn new(max_attempts: u64) -> Result<Self> {
        if max_attempts == 0 {
            return Err(Error::Validation("max_attempts must be at least 1".into()));
        }
        Ok(RejectionConfig { max_attempts })
    }
}

/// Precomputed `mean + L z` sampler, `L` the Cholesky factor of the covariance.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(p: &GaussianParams) -> Result<Self> {
        Ok(GaussianSampler { mean: p.mean().clone(), factor: linalg::cholesky_lower(p.cov())? })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut RngStream) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        &self.factor * z + &self.mean
    }
}

pub fn sample_gaussian(p: &GaussianParams, rng: &mut RngStream) -> Result<DVector<f64>> {
    Ok(GaussianSampler::new(p)?.sample(rng))
}

/// One accepted point and the number of oracle queries it took.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedDraw {
    pub point: DVector<f64>,
    pub attempts: u64,
}

/// Repeat drawing from the untruncated normal until the oracle accepts.
pub fn sample_truncated_with<S: MembershipOracle + ?Sized>(
    sampler: &GaussianSampler,
    s: &S,
    cfg: &RejectionConfig,
    rng: &mut RngStream,
) -> Result<TruncatedDraw> {
    Error::check_dim(s.dim(), sampler.dim())?;
    for attempt in 1..=cfg.max_attempts {
        let y = sampler.sample(rng);
        if s.contains(&y)? {
            return Ok(TruncatedDraw { point: y, attempts: attempt });
        }
    }
    Err(Error::MassTooLow { attempts: cfg.max_attempts })
}

pub fn sample_truncated<S: MembershipOracle + ?Sized>(
    p: &GaussianParams,
    s: &S,
    cfg: &RejectionConfig,
    rng: &mut RngStream,
) -> Result<TruncatedDraw> {
    sample_truncated_with(&GaussianSampler::new(p)?, s, cfg, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedBatch {
    pub samples: Vec<DVector<f64>>,
    /// Total oracle queries spent, accepted or not.
    pub attempts: u64,
}

impl TruncatedBatch {
    pub fn acceptance_rate(&self) -> f64 {
        self.samples.len() as f64 / self.attempts as f64
    }
}

/// `count` accepted samples. The attempt cap applies to each sample separately.
pub fn sample_truncated_batch<S: MembershipOracle + ?Sized>(
    p: &GaussianParams,
    s: &S,
    count: usize,
    cfg: &RejectionConfig,
    rng: &mut RngStream,
) -> Result<TruncatedBatch> {
    if count == 0 {
        return Err(Error::Validation("batch count must be at least 1".into()));
    }
    let sampler = GaussianSampler::new(p)?;
    let mut samples = Vec::with_capacity(count);
    let mut attempts = 0;
    for _ in 0..count {
        let draw = sample_truncated_with(&sampler, s, cfg, rng)?;
        attempts += draw.attempts;
        samples.push(draw.point);
    }
    Ok(TruncatedBatch { samples, attempts })
}

/// Writes one sample per row, comma separated, optional `x0..x{d-1}` header.
pub fn write_samples_csv<W: Write>(mut out: W, samples: &[DVector<f64>], header: bool) -> std::io::Result<()> {
    if header {
        if let Some(first) = samples.first() {
            let names: Vec<String> = (0..first.len()).map(|i| format!("x{i}")).collect();
            writeln!(out, "{}", names.join(","))?;
        }
    }
    for s in samples {
        let row: Vec<String> = s.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()
}

/// Reads rows written by [`write_samples_csv`]. A non-numeric first row is
/// taken to be a header and skipped; blank lines are ignored.
pub fn read_samples_csv<R: BufRead>(input: R) -> Result<Vec<DVector<f64>>> {
    let mut rows = Vec::new();
    let mut dim = None;
    for (idx, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse { line: idx + 1, column: 0, message: e.to_string() })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = trimmed.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows.is_empty() && dim.is_none() => {
                dim = Some(trimmed.split(',').count());
                continue;
            }
            Err(e) => {
                return Err(Error::Parse { line: idx + 1, column: 0, message: format!("bad number: {e}") })
            }
        };
        let d = *dim.get_or_insert(values.len());
        if values.len() != d {
            return Err(Error::Parse {
                line: idx + 1,
                column: 0,
                message: format!("expected {d} columns, found {}", values.len()),
            });
        }
        rows.push(DVector::from_vec(values));
    }
    Ok(rows)
}
