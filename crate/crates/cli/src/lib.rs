//! Command-line front end for `truncest`.
//!
//! Subcommands:
//!
//! - `generate`: draw truncated samples to CSV
//! - `estimate`: fit a CSV of samples, write a JSON report
//! - `sweep`: error against sample size over a grid of `M` and seeds
//! - `lowerbound`: the unknown-set indistinguishability demo
//!
//! Every JSON argument accepts either a file path or the JSON text itself.
//! Exit codes: 0 success, 1 usage or parse errors, 2 statistical failure
//! (set mass too low, rank-deficient data), 3 not enough data.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use truncest::lowerbound::indistinguishability_demo;
use truncest::sampling::{read_samples_csv, sample_truncated_batch, write_samples_csv};
use truncest::{estimate, GaussianParams, MembershipOracle, RngStream, SetSpec, SgdConfig, TruncationSet};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{what}: {message}")]
    Json { what: String, message: String },
    #[error(transparent)]
    Core(#[from] truncest::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(truncest::Error::MassTooLow { .. } | truncest::Error::RankDeficient { .. }) => 2,
            CliError::Core(truncest::Error::DataExhausted { .. }) => 3,
            _ => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "truncest", version, about = "Estimate a Gaussian from samples truncated to an unknown set")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw samples of a normal truncated to a set
    Generate(GenerateArgs),
    /// Estimate mean and covariance from truncated samples
    Estimate(EstimateArgs),
    /// Run the estimator over a grid of sample sizes and seeds
    Sweep(SweepArgs),
    /// Two normals whose truncated samples cannot be told apart
    Lowerbound(LowerboundArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Gaussian parameters {"mean", "cov"}
    #[arg(long)]
    pub params: String,
    /// Truncation set spec
    #[arg(long)]
    pub set: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write an x0,x1,... header row
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_attempts: u64,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Samples, one per CSV row
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub set: String,
    /// Estimator config (JSON); only "steps" is required
    #[arg(long)]
    pub config: String,
    /// True parameters; adds both error metrics to the report
    #[arg(long)]
    pub truth: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub spec: String,
    /// Output CSV; overrides the spec's "out"
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LowerboundArgs {
    #[arg(long)]
    pub p1: String,
    #[arg(long)]
    pub p2: String,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid pitch for memo lookups; 0 keeps exact points
    #[arg(long, default_value_t = 0.0)]
    pub snap_epsilon: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// One sweep instance and its grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub truth: GaussianParams,
    pub set: SetSpec,
    /// Values of `M`.
    pub grid: Vec<usize>,
    /// Seeds `0..seeds` per grid value, unless `seed_list` is given.
    #[serde(default = "one")]
    pub seeds: u64,
    #[serde(default)]
    pub seed_list: Option<Vec<u64>>,
    /// Base config; `steps` and `seed` are overwritten per cell.
    #[serde(default = "base_config")]
    pub config: SgdConfig,
    /// Samples generated per cell; defaults to what the estimator consumes.
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn one() -> u64 {
    1
}

fn base_config() -> SgdConfig {
    SgdConfig::new(1)
}

impl SweepSpec {
    pub fn seeds(&self) -> Vec<u64> {
        self.seed_list.clone().unwrap_or_else(|| (0..self.seeds).collect())
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.grid.is_empty() || self.grid.contains(&0) {
            return Err(CliError::Usage("sweep grid must be nonempty with every M >= 1".into()));
        }
        if self.seeds().is_empty() {
            return Err(CliError::Usage("sweep needs at least one seed".into()));
        }
        let dim = self.set.validate()?;
        truncest::Error::check_dim(dim, self.truth.dim())?;
        Ok(())
    }
}

/// One finished sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub mahalanobis_error: Option<f64>,
    pub frobenius_error: Option<f64>,
    pub oracle_queries: Option<u64>,
    pub wall_ms: u128,
    pub error: String,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Sweep(a) => cmd_sweep(&a).map(|_| ()),
        Command::Lowerbound(a) => cmd_lowerbound(&a),
    }
}

/// Text of a JSON argument: inline when it starts with `{` or `[`, else a file.
pub fn json_arg_text(arg: &str) -> CliResult<String> {
    let trimmed = arg.trim_start();
    if trimmed.starts_with('{') || trimmed.starts_with('[') {
        return Ok(arg.to_string());
    }
    std::fs::read_to_string(arg).map_err(|source| CliError::Io { path: arg.to_string(), source })
}

/// Deserializes with a diagnostic naming the offending field.
pub fn parse_json<T: DeserializeOwned>(what: &str, text: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = if path == "." {
            format!("line {} column {}: {inner}", inner.line(), inner.column())
        } else {
            format!("field `{path}`: {inner}")
        };
        CliError::Json { what: what.to_string(), message }
    })
}

fn load<T: DeserializeOwned>(what: &str, arg: &str) -> CliResult<T> {
    parse_json(what, &json_arg_text(arg)?)
}

fn load_set(arg: &str) -> CliResult<TruncationSet> {
    let spec: SetSpec = load("set", arg)?;
    Ok(TruncationSet::new(spec)?)
}

fn open_out(out: Option<&Path>) -> CliResult<Box<dyn Write>> {
    match out {
        Some(p) => {
            let f = File::create(p).map_err(|source| CliError::Io { path: p.display().to_string(), source })?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}

fn io_err(out: Option<&Path>) -> impl Fn(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: out.map_or("<stdout>".into(), |p| p.display().to_string()), source }
}

/// Pretty JSON with object keys sorted.
pub fn to_sorted_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("reports always serialize");
    let mut s = serde_json::to_string_pretty(&v).expect("values always serialize");
    s.push('\n');
    s
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let mut w = open_out(out)?;
    w.write_all(to_sorted_json(value).as_bytes()).map_err(io_err(out))?;
    w.flush().map_err(io_err(out))
}

pub fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    let params: GaussianParams = load("params", &a.params)?;
    let set = load_set(&a.set)?;
    truncest::Error::check_dim(set.dim(), params.dim())?;
    let cfg = truncest::RejectionConfig::new(a.max_attempts)?;
    let batch = sample_truncated_batch(&params, &set, a.n, &cfg, &mut RngStream::new(a.seed))?;
    let out = a.out.as_deref();
    let mut w = open_out(out)?;
    write_samples_csv(&mut w, &batch.samples, a.header).map_err(io_err(out))?;
    w.flush().map_err(io_err(out))?;
    eprintln!(
        "generated {} samples, acceptance rate {:.6}, oracle queries {}",
        batch.samples.len(),
        batch.acceptance_rate(),
        set.queries()
    );
    Ok(())
}

pub fn cmd_estimate(a: &EstimateArgs) -> CliResult<()> {
    let set = load_set(&a.set)?;
    let cfg: SgdConfig = load("config", &a.config)?;
    cfg.validate()?;
    let truth: Option<GaussianParams> = a.truth.as_deref().map(|t| load("truth", t)).transpose()?;
    let path = a.data.display().to_string();
    let file = File::open(&a.data).map_err(|source| CliError::Io { path: path.clone(), source })?;
    let data = read_samples_csv(BufReader::new(file))?;
    if let Some(x) = data.first() {
        truncest::Error::check_dim(set.dim(), x.len())?;
    }
    let mut report = estimate(&data, &set, &cfg)?;
    if let Some(t) = &truth {
        report.attach_truth(t)?;
    }
    write_json(&report, a.out.as_deref())?;
    if let Some(e) = report.errors {
        eprintln!("mahalanobis_error {:.6}  frobenius_error {:.6}", e.mahalanobis_error, e.frobenius_error);
    }
    Ok(())
}

fn run_cell(spec: &SweepSpec, m: usize, seed: u64) -> SweepRow {
    let start = Instant::now();
    let result = (|| -> truncest::Result<(f64, f64, u64)> {
        let set = TruncationSet::new(spec.set.clone())?;
        let mut cfg = spec.config.clone();
        cfg.steps = m;
        cfg.seed = seed;
        let n = spec.samples.unwrap_or(0).max(cfg.samples_needed(spec.truth.dim()));
        let data = sample_truncated_batch(&spec.truth, &set, n, &cfg.rejection(), &mut RngStream::new(seed))?;
        let mut report = estimate(&data.samples, &set, &cfg)?;
        let e = report.attach_truth(&spec.truth)?;
        Ok((e.mahalanobis_error, e.frobenius_error, report.oracle_queries))
    })();
    let wall_ms = start.elapsed().as_millis();
    match result {
        Ok((maha, frob, q)) => SweepRow {
            m,
            seed,
            mahalanobis_error: Some(maha),
            frobenius_error: Some(frob),
            oracle_queries: Some(q),
            wall_ms,
            error: String::new(),
        },
        Err(e) => SweepRow {
            m,
            seed,
            mahalanobis_error: None,
            frobenius_error: None,
            oracle_queries: None,
            wall_ms,
            error: e.to_string(),
        },
    }
}

fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var("TRUNCEST_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("TRUNCEST_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.display().to_string(), source: io::Error::other(e) }
}

/// Runs every `(M, seed)` cell. Rows are appended to the output as they
/// finish, then the file is rewritten sorted by `(M, seed)`.
pub fn cmd_sweep(a: &SweepArgs) -> CliResult<Vec<SweepRow>> {
    let spec: SweepSpec = load("sweep spec", &a.spec)?;
    spec.validate()?;
    let out = a
        .out
        .clone()
        .or_else(|| spec.out.clone())
        .ok_or_else(|| CliError::Usage("sweep needs --out or an \"out\" field in the spec".into()))?;

    let cells: Vec<(usize, u64)> = spec.grid.iter().flat_map(|&m| spec.seeds().into_iter().map(move |s| (m, s))).collect();
    let file = File::create(&out).map_err(|source| CliError::Io { path: out.display().to_string(), source })?;
    let writer = Mutex::new(csv::Writer::from_writer(file));

    let work = || -> Vec<SweepRow> {
        cells
            .par_iter()
            .map(|&(m, seed)| {
                let row = run_cell(&spec, m, seed);
                let mut w = writer.lock().expect("sweep writer poisoned");
                // Partial results only; failures here resurface on the final rewrite.
                let _ = w.serialize(&row).and_then(|_| w.flush().map_err(csv::Error::from));
                row
            })
            .collect()
    };
    let mut rows = match thread_cap()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot build thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    drop(writer);

    rows.sort_by_key(|r| (r.m, r.seed));
    let mut w = csv::Writer::from_path(&out).map_err(csv_err(&out))?;
    for r in &rows {
        w.serialize(r).map_err(csv_err(&out))?;
    }
    w.flush().map_err(|source| CliError::Io { path: out.display().to_string(), source })?;

    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    if failed > 0 {
        eprintln!("{failed} of {} sweep cells failed", rows.len());
    }
    if failed == rows.len() {
        return Err(CliError::Usage(format!("every sweep cell failed; first error: {}", rows[0].error)));
    }
    Ok(rows)
}

/// Reads sweep rows back from CSV.
pub fn read_sweep_csv<R: BufRead>(input: R) -> CliResult<Vec<SweepRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<Vec<SweepRow>, _>>()
        .map_err(|e| CliError::Json { what: "sweep csv".into(), message: e.to_string() })
}

pub fn cmd_lowerbound(a: &LowerboundArgs) -> CliResult<()> {
    let p1: GaussianParams = load("p1", &a.p1)?;
    let p2: GaussianParams = load("p2", &a.p2)?;
    let report = indistinguishability_demo(&p1, &p2, a.n, a.snap_epsilon, &RngStream::new(a.seed))?;
    write_json(&report, a.out.as_deref())?;
    eprintln!(
        "ks {:.6} (critical {:.6}) accept {}  overlap {:.6}  collisions {:?}",
        report.ks_statistic, report.critical_value, report.accept, report.overlap_alpha, report.collisions
    );
    Ok(())
}
