//! Recovers N((0,1), I) from samples truncated to [-0.5,0.5] x [1.5,2.5].
//!
//! cargo run --release -p truncest --example box_instance -- [steps] [lambda] [seed] [r1 r2 r3]

use nalgebra::{DMatrix, DVector};
use truncest::sampling::sample_truncated_batch;
use truncest::{estimate, GaussianParams, MembershipOracle, RejectionConfig, RngStream, SetSpec, SgdConfig, TruncationSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map_or(Ok(50_000), |s| s.parse())?;
    let lambda: f64 = args.get(2).map_or(Ok(0.1), |s| s.parse())?;
    let seed: u64 = args.get(3).map_or(Ok(7), |s| s.parse())?;

    // BOX_TRUTH=2 switches to the wide truth N((0,0), 4I).
    let truth = if std::env::var("BOX_TRUTH").as_deref() == Ok("2") {
        GaussianParams::new(DVector::zeros(2), DMatrix::identity(2, 2) * 4.0)?
    } else {
        GaussianParams::new(DVector::from_vec(vec![0.0, 1.0]), DMatrix::identity(2, 2))?
    };
    let set = TruncationSet::new(SetSpec::AxisBox { lo: vec![-0.5, 1.5], hi: vec![0.5, 2.5] })?;

    let mut cfg = SgdConfig::new(steps);
    cfg.lambda = lambda;
    cfg.seed = seed;
    if args.len() >= 7 {
        let r: Vec<f64> = args[4..7].iter().map(|a| a.parse()).collect::<Result<_, _>>()?;
        cfg.domain = truncest::DomainChoice::Explicit(truncest::DomainSpec::new(r[0], r[1], r[2])?);
    }
    let n = cfg.samples_needed(2).max(160_000);
    let data = sample_truncated_batch(&truth, &set, n, &RejectionConfig::default(), &mut RngStream::new(seed))?;
    let generated = set.queries();

    let start = std::time::Instant::now();
    let mut report = estimate(&data.samples, &set, &cfg)?;
    let errors = report.attach_truth(&truth)?;
    println!("estimate mean {:?}", report.estimate.mean().as_slice());
    println!("estimate cov  {:?}", report.estimate.cov().as_slice());
    println!(
        "mahalanobis {:.4}  frobenius {:.4}  init mass {:.3}  selected {}",
        errors.mahalanobis_error, errors.frobenius_error, report.init_mass, report.selected_run
    );
    let other = if truth.cov()[(0, 0)] > 2.0 {
        GaussianParams::new(DVector::from_vec(vec![0.0, 1.0]), DMatrix::identity(2, 2))?
    } else {
        GaussianParams::new(DVector::zeros(2), DMatrix::identity(2, 2) * 4.0)?
    };
    let cross = truncest::estimator::ErrorMetrics::between(&other, &report.estimate)?;
    println!("own sum {:.4}  other sum {:.4}", errors.sum(), cross.sum());
    for (k, run) in report.runs.iter().enumerate() {
        let g = report.whitening.inverse().push_params(&run.average.to_gaussian()?)?;
        let e = truncest::estimator::ErrorMetrics::between(&truth, &g)?;
        println!(
            "run {k}: maha {:.4} frob {:.4} queries {} worst step {} projections {}",
            e.mahalanobis_error, e.frobenius_error, run.oracle_queries, run.max_attempts_per_step, run.active_projections
        );
    }
    if std::env::var("BOX_TRACE").is_ok() {
        let run = &report.runs[report.selected_run];
        let unwhite = report.whitening.inverse();
        for c in run.checkpoints.iter().filter(|c| c.step % (steps / 10).max(1) == 0 || c.step <= steps / 50) {
            let e = truncest::estimator::ErrorMetrics::between(&truth, &unwhite.push_params(&c.average.to_gaussian()?)?)?;
            println!("  step {:>7}: maha {:.4} frob {:.4}", c.step, e.mahalanobis_error, e.frobenius_error);
        }
        let e = truncest::estimator::ErrorMetrics::between(&truth, &unwhite.push_params(&run.last_iterate.to_gaussian()?)?)?;
        println!("  last iterate: maha {:.4} frob {:.4}", e.mahalanobis_error, e.frobenius_error);
    }
    println!("oracle queries: generate {generated}, estimate {}", report.oracle_queries);
    println!("elapsed {:.2?}", start.elapsed());
    Ok(())
}
