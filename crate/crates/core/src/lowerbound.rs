//! Why the set has to be known: two very different univariate normals whose
//! truncated samples are identically distributed.
//!
//! Given `p1` and `p2`, draw from `p1` and keep `x` with probability
//! `min(p2(x)/p1(x), 1)`. Accepted points have density
//! `min(p1, p2) / alpha` with `alpha = ∫ min(p1, p2)`, which is symmetric in
//! the pair. The keep/reject decision is drawn lazily and memoized per point,
//! so the accepted points form one fixed (random) truncation set for `p1`.
//! Swapping the roles gives a set for `p2` with the same sample law.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{mahalanobis_error, GaussianParams};
use crate::rng::RngStream;
use crate::stats::{ks_two_sample, normal_cdf, normal_pdf};

/// `(mean, sd)` of a one-dimensional normal.
fn scalar(p: &GaussianParams) -> Result<(f64, f64)> {
    Error::check_dim(1, p.dim())?;
    Ok((p.mean()[0], p.cov()[(0, 0)].sqrt()))
}

/// Points where the two densities are equal, sorted.
fn crossings((m1, s1): (f64, f64), (m2, s2): (f64, f64)) -> Vec<f64> {
    // log p1 - log p2 = a x^2 + b x + c
    let a = 0.5 / (s2 * s2) - 0.5 / (s1 * s1);
    let b = m1 / (s1 * s1) - m2 / (s2 * s2);
    let c = 0.5 * m2 * m2 / (s2 * s2) - 0.5 * m1 * m1 / (s1 * s1) + (s2 / s1).ln();
    let scale = a.abs().max(b.abs()).max(1e-300);
    if a.abs() <= 1e-14 * scale {
        if b.abs() <= 1e-300 {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    // numerically stable roots
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut roots = if q == 0.0 { vec![0.0] } else { vec![q / a, c / q] };
    roots.sort_by(f64::total_cmp);
    roots.dedup();
    roots
}

/// `∫ min(p1, p2)`, summed piecewise between the density crossings.
pub fn overlap_mass(p1: &GaussianParams, p2: &GaussianParams) -> Result<f64> {
    let (a, b) = (scalar(p1)?, scalar(p2)?);
    if a == b {
        return Ok(1.0);
    }
    let cuts = crossings(a, b);
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(cuts.iter().copied());
    edges.push(f64::INFINITY);
    let mut total = 0.0;
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let probe = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (false, true) => hi - 1.0,
            (true, false) => lo + 1.0,
            (false, false) => a.0,
        };
        let smaller = if normal_pdf(probe, a.0, a.1) <= normal_pdf(probe, b.0, b.1) { a } else { b };
        total += normal_cdf(hi, smaller.0, smaller.1) - normal_cdf(lo, smaller.0, smaller.1);
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Rejection process with deferred, memoized keep/reject decisions.
#[derive(Debug, Clone)]
pub struct LazyRandomSetSampler {
    base: (f64, f64),
    other: (f64, f64),
    alpha: f64,
    snap_epsilon: f64,
    memo: HashMap<u64, bool>,
    collisions: u64,
    attempts: u64,
    accepted: u64,
}

impl LazyRandomSetSampler {
    /// `snap_epsilon > 0` snaps points to a grid of that pitch before the memo
    /// lookup, so every point in a cell shares one decision.
    pub fn new(base: &GaussianParams, other: &GaussianParams, snap_epsilon: f64) -> Result<Self> {
        if !(snap_epsilon >= 0.0 && snap_epsilon.is_finite()) {
            return Err(Error::Validation(format!("snap_epsilon must be finite and >= 0, got {snap_epsilon}")));
        }
        Ok(LazyRandomSetSampler {
            base: scalar(base)?,
            other: scalar(other)?,
            alpha: overlap_mass(base, other)?,
            snap_epsilon,
            memo: HashMap::new(),
            collisions: 0,
            attempts: 0,
            accepted: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn snap_epsilon(&self) -> f64 {
        self.snap_epsilon
    }

    /// Probability that `x` is kept: `min(other(x) / base(x), 1)`.
    pub fn keep_probability(&self, x: f64) -> f64 {
        let (mb, sb) = self.base;
        let (mo, so) = self.other;
        let log_ratio = (sb / so).ln() - 0.5 * ((x - mo) / so).powi(2) + 0.5 * ((x - mb) / sb).powi(2);
        log_ratio.min(0.0).exp()
    }

    fn key(&self, x: f64) -> (u64, f64) {
        if self.snap_epsilon > 0.0 {
            let cell = (x / self.snap_epsilon).round();
            (cell.to_bits(), cell * self.snap_epsilon)
        } else {
            (x.to_bits(), x)
        }
    }

    /// The memoized membership of `x`, drawing it on first sight.
    pub fn decide(&mut self, x: f64, rng: &mut RngStream) -> bool {
        let (key, rep) = self.key(x);
        if let Some(&d) = self.memo.get(&key) {
            self.collisions += 1;
            return d;
        }
        let d = rng.random::<f64>() < self.keep_probability(rep);
        self.memo.insert(key, d);
        d
    }

    /// Previously drawn decision for `x`, if any.
    pub fn memoized(&self, x: f64) -> Option<bool> {
        self.memo.get(&self.key(x).0).copied()
    }

    /// One accepted point. Fails after `max_attempts` consecutive rejections.
    pub fn draw(&mut self, rng: &mut RngStream, max_attempts: u64) -> Result<f64> {
        for _ in 0..max_attempts {
            let z: f64 = StandardNormal.sample(rng);
            let x = self.base.0 + self.base.1 * z;
            self.attempts += 1;
            if self.decide(x, rng) {
                self.accepted += 1;
                return Ok(x);
            }
        }
        Err(Error::MassTooLow { attempts: max_attempts })
    }

    pub fn collisions(&self) -> u64 {
        self.collisions
    }

    pub fn attempts(&self) -> u64 {
        self.attempts
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            return f64::NAN;
        }
        self.accepted as f64 / self.attempts as f64
    }
}

/// Result of comparing the two constructions.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct IndistinguishabilityReport {
    pub ks_statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub accept: bool,
    pub overlap_alpha: f64,
    pub tv_distance: f64,
    /// Mahalanobis distance between the two generating normals.
    pub parameter_distance: f64,
    pub acceptance_rate: [f64; 2],
    pub acceptance_std_error: [f64; 2],
    pub attempts: [u64; 2],
    pub collisions: [u64; 2],
    pub n: usize,
    pub seed: u64,
    pub snap_epsilon: f64,
}

pub const KS_LEVEL: f64 = 0.01;
const DRAW_CAP: u64 = 1_000_000;

/// Draws `n` points from each construction and runs a two-sample KS test.
pub fn indistinguishability_demo(
    p1: &GaussianParams,
    p2: &GaussianParams,
    n: usize,
    snap_epsilon: f64,
    rng: &RngStream,
) -> Result<IndistinguishabilityReport> {
    if n < 1000 {
        return Err(Error::Validation(format!("n must be at least 1000, got {n}")));
    }
    let mut samplers = [
        LazyRandomSetSampler::new(p1, p2, snap_epsilon)?,
        LazyRandomSetSampler::new(p2, p1, snap_epsilon)?,
    ];
    let mut samples: [Vec<f64>; 2] = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for (k, sampler) in samplers.iter_mut().enumerate() {
        let mut stream = rng.split(k as u64);
        for _ in 0..n {
            samples[k].push(sampler.draw(&mut stream, DRAW_CAP)?);
        }
    }
    let ks = ks_two_sample(&samples[0], &samples[1], KS_LEVEL);
    let alpha = samplers[0].alpha();
    let rate = [samplers[0].acceptance_rate(), samplers[1].acceptance_rate()];
    let se = |k: usize| (alpha * (1.0 - alpha) / samplers[k].attempts() as f64).sqrt();
    Ok(IndistinguishabilityReport {
        ks_statistic: ks.statistic,
        critical_value: ks.critical_value,
        p_value: ks.p_value,
        accept: ks.accept,
        overlap_alpha: alpha,
        tv_distance: 1.0 - alpha,
        parameter_distance: mahalanobis_error(p1, p2)?,
        acceptance_rate: rate,
        acceptance_std_error: [se(0), se(1)],
        attempts: [samplers[0].attempts(), samplers[1].attempts()],
        collisions: [samplers[0].collisions(), samplers[1].collisions()],
        n,
        seed: rng.seed(),
        snap_epsilon,
    })
}
