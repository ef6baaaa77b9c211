//! Checks against independently computed values: hand-written series,
//! quadrature and inverse-CDF samplers that share no code with the crate.

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::Rng;

use truncest::likelihood::log_normalizer;
use truncest::lowerbound::{overlap_mass, LazyRandomSetSampler};
use truncest::sampling::{sample_truncated_batch, RejectionConfig};
use truncest::stats::{ks_two_sample, normal_cdf};
use truncest::{GaussianParams, NaturalParams, RngStream, SetSpec, TruncationSet};

fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        let add = term / (2 * n + 1) as f64;
        sum += add;
        if add.abs() < 1e-17 {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

fn phi_series(x: f64) -> f64 {
    0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2))
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn pdf(x: f64, m: f64, s: f64) -> f64 {
    (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

fn adjugate_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let c = |i: usize, j: usize| {
        let rows: Vec<usize> = (0..3).filter(|&r| r != i).collect();
        let cols: Vec<usize> = (0..3).filter(|&r| r != j).collect();
        let minor = m[(rows[0], cols[0])] * m[(rows[1], cols[1])] - m[(rows[0], cols[1])] * m[(rows[1], cols[0])];
        if (i + j) % 2 == 0 { minor } else { -minor }
    };
    let det = (0..3).map(|j| m[(0, j)] * c(0, j)).sum::<f64>();
    DMatrix::from_fn(3, 3, |i, j| c(j, i) / det)
}

/// Inverse-CDF sampler for a density tabulated on a fine grid.
struct TabulatedSampler {
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl TabulatedSampler {
    fn new<F: Fn(f64) -> f64>(density: F, lo: f64, hi: f64, cells: usize) -> Self {
        let h = (hi - lo) / cells as f64;
        let grid: Vec<f64> = (0..=cells).map(|i| lo + h * i as f64).collect();
        let mut cdf = vec![0.0];
        for w in grid.windows(2) {
            let cell = (w[1] - w[0]) / 6.0 * (density(w[0]) + 4.0 * density(0.5 * (w[0] + w[1])) + density(w[1]));
            cdf.push(cdf.last().unwrap() + cell);
        }
        let total = *cdf.last().unwrap();
        cdf.iter_mut().for_each(|c| *c /= total);
        TabulatedSampler { grid, cdf }
    }

    fn quantile(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.grid[k - 1] + t * (self.grid[k] - self.grid[k - 1])
    }

    fn draw(&self, n: usize, rng: &mut RngStream) -> Vec<f64> {
        (0..n).map(|_| self.quantile(rng.random::<f64>())).collect()
    }
}

#[test]
fn normal_cdf_matches_series() {
    for i in 0..=60 {
        let x = -3.0 + 0.1 * i as f64;
        let (a, b) = (normal_cdf(x, 0.0, 1.0), phi_series(x)); assert!((a - b).abs() < 1e-13, "x = {x}: {a} vs {b}");
    }
    assert!((phi_series(1.96) - 0.975_002_104_851_779_5).abs() < 1e-14);
}

#[test]
fn natural_inverse_matches_adjugate() {
    let cov = dmatrix![2.0, 0.3, -0.1; 0.3, 1.0, 0.2; -0.1, 0.2, 0.5];
    let mean = dvector![1.0, -2.0, 0.5];
    let p = GaussianParams::new(mean.clone(), cov.clone()).unwrap();
    let w = NaturalParams::from_gaussian(&p).unwrap();
    let inv = adjugate_inverse(&cov);
    assert!((w.t() - &inv).abs().max() < 1e-12);
    assert!((w.nu() - &inv * &mean).abs().max() < 1e-12);
}

#[test]
fn log_normalizer_matches_quadrature() {
    // Z = integral over [-1, 2] of exp(nu x - t x^2 / 2)
    let (nu, t) = (0.7, 1.8);
    let exact = simpson(&|x: f64| (nu * x - 0.5 * t * x * x).exp(), -1.0, 2.0, 1e-13).ln();
    let w = NaturalParams::new(dvector![nu], dmatrix![t]).unwrap();
    let set = TruncationSet::new(SetSpec::AxisBox { lo: vec![-1.0], hi: vec![2.0] }).unwrap();
    let est = log_normalizer(&w, &set, 200_000, &mut RngStream::new(4)).unwrap();
    assert!((est.value - exact).abs() < 4.0 * est.std_error, "{} vs {exact} (se {})", est.value, est.std_error);
}

#[test]
fn half_normal_mean() {
    let set = TruncationSet::new(SetSpec::Halfspace { normal: vec![1.0], offset: 0.0 }).unwrap();
    let p = GaussianParams::univariate(0.0, 1.0).unwrap();
    let batch = sample_truncated_batch(&p, &set, 100_000, &RejectionConfig::default(), &mut RngStream::new(8)).unwrap();
    let mean = batch.samples.iter().map(|x| x[0]).sum::<f64>() / batch.samples.len() as f64;
    assert!((mean - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.01);
    assert!(batch.samples.iter().all(|x| x[0] >= 0.0));
}

#[test]
fn rejection_sampler_matches_inverse_cdf() {
    let p = GaussianParams::univariate(0.0, 1.0).unwrap();
    for (k, (lo, hi)) in [(-1.0, 1.0), (0.5, 2.5), (-3.0, -0.5)].into_iter().enumerate() {
        let set = TruncationSet::new(SetSpec::AxisBox { lo: vec![lo], hi: vec![hi] }).unwrap();
        let ours: Vec<f64> = sample_truncated_batch(&p, &set, 10_000, &RejectionConfig::default(), &mut RngStream::new(k as u64))
            .unwrap()
            .samples
            .iter()
            .map(|x| x[0])
            .collect();
        let oracle = TabulatedSampler::new(|x| pdf(x, 0.0, 1.0), lo, hi, 20_000);
        let theirs = oracle.draw(10_000, &mut RngStream::new(100 + k as u64));
        let ks = ks_two_sample(&ours, &theirs, 0.01);
        assert!(ks.accept, "[{lo}, {hi}]: {ks:?}");
    }
}

#[test]
fn overlap_matches_quadrature() {
    let exact = simpson(&|x: f64| pdf(x, 0.0, 1.0).min(pdf(x, 0.0, 2.0)), -20.0, 20.0, 1e-12);
    let a = GaussianParams::univariate(0.0, 1.0).unwrap();
    let b = GaussianParams::univariate(0.0, 4.0).unwrap();
    assert!((overlap_mass(&a, &b).unwrap() - exact).abs() < 1e-6);

    let exact = simpson(&|x: f64| pdf(x, 0.0, 1.0).min(pdf(x, 3.0, 1.0)), -20.0, 20.0, 1e-12);
    let c = GaussianParams::univariate(3.0, 1.0).unwrap();
    assert!((overlap_mass(&a, &c).unwrap() - exact).abs() < 1e-6);
    assert!((exact - 2.0 * phi_series(-1.5)).abs() < 1e-8);
}

#[test]
fn both_constructions_match_min_density() {
    let a = GaussianParams::univariate(0.0, 1.0).unwrap();
    let b = GaussianParams::univariate(3.0, 1.0).unwrap();
    let oracle = TabulatedSampler::new(|x| pdf(x, 0.0, 1.0).min(pdf(x, 3.0, 1.0)), -12.0, 15.0, 50_000);
    let reference = oracle.draw(10_000, &mut RngStream::new(77));
    for (k, (base, other)) in [(&a, &b), (&b, &a)].into_iter().enumerate() {
        let mut sampler = LazyRandomSetSampler::new(base, other, 0.0).unwrap();
        let mut rng = RngStream::new(k as u64 + 1);
        let xs: Vec<f64> = (0..10_000).map(|_| sampler.draw(&mut rng, 1_000_000).unwrap()).collect();
        let ks = ks_two_sample(&xs, &reference, 0.01);
        assert!(ks.accept, "construction {k}: {ks:?}");
    }
}

#[test]
fn truncated_moments_match_quadrature() {
    // truncated N(1, 2) on [0, 3]
    let (m, s) = (1.0, 2f64.sqrt());
    let mass = simpson(&|x: f64| pdf(x, m, s), 0.0, 3.0, 1e-13);
    let mean = simpson(&|x: f64| x * pdf(x, m, s), 0.0, 3.0, 1e-13) / mass;
    let second = simpson(&|x: f64| x * x * pdf(x, m, s), 0.0, 3.0, 1e-13) / mass;
    let set = TruncationSet::new(SetSpec::AxisBox { lo: vec![0.0], hi: vec![3.0] }).unwrap();
    let p = GaussianParams::univariate(m, 2.0).unwrap();
    let batch = sample_truncated_batch(&p, &set, 200_000, &RejectionConfig::default(), &mut RngStream::new(21)).unwrap();
    let xs: Vec<f64> = batch.samples.iter().map(|x: &DVector<f64>| x[0]).collect();
    let n = xs.len() as f64;
    let emp_mean = xs.iter().sum::<f64>() / n;
    let emp_var = xs.iter().map(|x| (x - emp_mean).powi(2)).sum::<f64>() / n;
    let var = second - mean * mean;
    assert!((emp_mean - mean).abs() < 4.0 * (var / n).sqrt());
    assert!((emp_var - var).abs() < 0.01);
    assert!((batch.acceptance_rate() - mass).abs() < 0.01);
}
