//! `dpp-mle`: experiment runner over the `dpp-mle` library.
//!
//! Every subcommand reads an optional JSON config (missing fields take
//! their defaults), writes its reports into `--out`, and echoes the fully
//! resolved config inside each report.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use dpp_mle::dpp::{SampleRecord, DEFAULT_MAX_N};
use dpp_mle::experiments::{
    curvature_scan, is_reducible, rate_study, variance_growth, verify_identities, IdentityCheckConfig, KernelSpec,
    RateConfig, TridiagonalScan, HESSIAN_BUDGET,
};
use dpp_mle::geometry::{
    hessian_matrix_with, max_principal_angle, min_curvature_with, null_space_basis, GEOMETRY_MAX_N, NULL_EIGEN_TOL,
};
use dpp_mle::mle::{blockwise_loss, fit_mle, sign_orbit_loss, BlockwiseLoss, LossValue, MleConfig, MleResult};
use dpp_mle::{determinantal_graph, empirical_table, DppError, DppTable, EmpiricalTable, Execution, SampleBatch};

#[derive(Parser)]
#[command(
    name = "dpp-mle",
    version,
    about = "Determinantal point process likelihood experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads; DPP_MLE_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw samples from a kernel and write the exact probability table.
    Simulate,
    /// Fit the MLE to a sample file or an exact table.
    Estimate,
    /// Hessian of the expected log-likelihood at a kernel, with null space.
    Hessian,
    /// Smallest curvature along the tridiagonal family.
    CurvatureScan,
    /// Monte Carlo risk against sample size, with log-log slopes.
    RateStudy,
    /// Largest asymptotic variance along the tridiagonal family.
    VarianceGrowth,
    /// Determinantal trace identities over random inputs.
    VerifyIdentities,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Budget(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Budget(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Budget(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<DppError> for Failure {
    fn from(e: DppError) -> Self {
        let m = e.to_string();
        match e {
            DppError::GroundSetTooLarge { .. } => Failure::Budget(m),
            DppError::NotSymmetric { .. }
            | DppError::NotPositiveDefinite { .. }
            | DppError::InvalidCorrelationSpectrum { .. }
            | DppError::DimensionMismatch { .. }
            | DppError::EmptyBatch
            | DppError::InvalidConfig(_)
            | DppError::Json(_)
            | DppError::Io(_) => Failure::Config(m),
            _ => Failure::Numerical(m),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    // serde_json reports the line, column and offending field
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn create(&self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.dir.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| io_failure(&path, e))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::Numerical(e.to_string()))?;
        writeln!(w)
            .and_then(|_| w.flush())
            .map_err(|e| io_failure(&self.dir.join(name), e))
    }

    fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> CliResult<()> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_writer(self.create(name)?);
        for r in rows {
            w.serialize(r).map_err(|e| io_failure(&path, e))?;
        }
        w.flush().map_err(|e| io_failure(&path, e))
    }

    fn with_writer(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> dpp_mle::Result<()>) -> CliResult<()> {
        let mut w = self.create(name)?;
        f(&mut w)?;
        w.flush().map_err(|e| io_failure(&self.dir.join(name), e))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateConfig {
    kernel: KernelSpec,
    count: usize,
    seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::Tridiagonal { a: 2.0, b: 0.5, n: 3 },
            count: 1000,
            seed: 0,
        }
    }
}

fn simulate(cli: &Cli, out: &Output, exec: Execution) -> CliResult<()> {
    let mut config: SimulateConfig = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let l = config.kernel.build()?;
    let table = DppTable::build(&l, DEFAULT_MAX_N, exec)?;
    let batch = SampleBatch::draw(&table, config.count, config.seed, exec);
    log::info!("simulate n={} count={} seed={}", l.n(), config.count, config.seed);
    out.json("samples.json", &batch.to_record())?;
    out.with_writer("table.csv", |w| table.write_csv(w))?;
    out.json("simulate_config.json", &config)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EstimateConfig {
    /// Sample file written by `simulate`. Relative paths resolve against
    /// the config file's directory.
    samples: Option<PathBuf>,
    /// Probability table CSV (`mask,probability`), fitted as exact frequencies.
    table: Option<PathBuf>,
    true_kernel: Option<KernelSpec>,
    mle: MleConfig,
}

#[derive(Serialize)]
struct EstimateReport {
    config: EstimateConfig,
    result: MleResult,
    loss: Option<LossValue>,
    blockwise: Option<BlockwiseLoss>,
}

#[derive(Deserialize)]
struct TableRow {
    mask: u32,
    probability: f64,
}

fn read_table_csv(path: &Path) -> CliResult<EmpiricalTable> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_failure(path, e))?;
    let mut rows = Vec::new();
    for row in reader.deserialize::<TableRow>() {
        rows.push(row.map_err(|e| io_failure(path, e))?);
    }
    let len = rows.len();
    if len < 2 || !len.is_power_of_two() {
        return Err(Failure::Config(format!(
            "{}: expected 2^n rows, found {len}",
            path.display()
        )));
    }
    let mut freqs = vec![f64::NAN; len];
    for r in rows {
        let slot = freqs
            .get_mut(r.mask as usize)
            .ok_or_else(|| Failure::Config(format!("{}: mask {} out of range", path.display(), r.mask)))?;
        *slot = r.probability;
    }
    if freqs.iter().any(|f| f.is_nan()) {
        return Err(Failure::Config(format!(
            "{}: duplicate or missing masks",
            path.display()
        )));
    }
    Ok(EmpiricalTable::from_freqs(len.trailing_zeros() as usize, freqs)?)
}

fn estimate(cli: &Cli, out: &Output) -> CliResult<()> {
    let mut config: EstimateConfig = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.mle.seed = seed;
    }
    let base = cli.config.as_deref().and_then(Path::parent).unwrap_or(Path::new("."));
    let freqs = match (&config.samples, &config.table) {
        (Some(s), None) => {
            let record: SampleRecord = read_json(&base.join(s))?;
            empirical_table(&SampleBatch::from_record(&record)?)?
        }
        (None, Some(t)) => read_table_csv(&base.join(t))?,
        _ => {
            return Err(Failure::Config(
                "estimate config needs exactly one of `samples` or `table`".into(),
            ))
        }
    };
    let truth = config.true_kernel.as_ref().map(KernelSpec::build).transpose()?;
    if let Some(l) = &truth {
        if l.n() != freqs.n() {
            return Err(Failure::Config(format!(
                "true kernel has n = {} but the data has n = {}",
                l.n(),
                freqs.n()
            )));
        }
    }
    let result = fit_mle(&freqs, &config.mle)?;
    log::info!(
        "estimate n={} log_likelihood={:e} converged={} restart={}",
        freqs.n(),
        result.log_likelihood,
        result.converged,
        result.restart_index
    );
    let (loss, blockwise) = match &truth {
        Some(l) => {
            let graph = determinantal_graph(l.matrix(), 0.0);
            (
                Some(sign_orbit_loss(&result.estimate, l)?),
                Some(blockwise_loss(&result.estimate, l, &graph)?),
            )
        }
        None => (None, None),
    };
    out.json(
        "estimate.json",
        &EstimateReport {
            config,
            result,
            loss,
            blockwise,
        },
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct HessianConfig {
    kernel: KernelSpec,
    budget: usize,
}

impl Default for HessianConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::Tridiagonal { a: 2.0, b: 0.5, n: 3 },
            budget: HESSIAN_BUDGET,
        }
    }
}

#[derive(Serialize)]
struct NullSpaceReport {
    numerical_dimension: usize,
    cross_block_dimension: usize,
    cross_pairs: Vec<(usize, usize)>,
    /// Largest principal angle between the two subspaces, when the
    /// dimensions agree.
    principal_angle: Option<f64>,
    components: Vec<Vec<usize>>,
}

#[derive(Serialize)]
struct HessianReport {
    config: HessianConfig,
    n: usize,
    dim: usize,
    eigenvalues: Vec<f64>,
    min_curvature: f64,
    reducible: bool,
    null_space: NullSpaceReport,
}

fn hessian(cli: &Cli, out: &Output, exec: Execution) -> CliResult<()> {
    let config: HessianConfig = load_config(cli.config.as_deref())?;
    let l = config.kernel.build()?;
    let cap = config.budget.min(GEOMETRY_MAX_N);
    if l.n() > cap {
        return Err(DppError::GroundSetTooLarge { n: l.n(), cap }.into());
    }
    let table = DppTable::build(&l, cap, exec)?;
    let form = hessian_matrix_with(&table, exec);
    let graph = determinantal_graph(l.matrix(), 0.0);
    let numeric = form.null_vectors(NULL_EIGEN_TOL);
    let theory = null_space_basis(&graph);
    let angle =
        (numeric.ncols() == theory.dimension()).then(|| max_principal_angle(&numeric, &theory.coords_matrix(l.n())));
    let curvature = min_curvature_with(&l, exec)?;
    out.with_writer("hessian_eigenvalues.csv", |w| form.write_eigenvalues_csv(w))?;
    out.with_writer("hessian_matrix.csv", |w| form.write_matrix_csv(w))?;
    let report = HessianReport {
        n: l.n(),
        dim: form.dim(),
        eigenvalues: form.eigenvalues.clone(),
        min_curvature: curvature.value,
        reducible: is_reducible(&l),
        null_space: NullSpaceReport {
            numerical_dimension: numeric.ncols(),
            cross_block_dimension: theory.dimension(),
            cross_pairs: theory.pairs.clone(),
            principal_angle: angle,
            components: graph.components().to_vec(),
        },
        config,
    };
    out.json("hessian.json", &report)
}

fn curvature(cli: &Cli, out: &Output, exec: Execution) -> CliResult<()> {
    let config: TridiagonalScan = load_config(cli.config.as_deref())?;
    let report = curvature_scan(&config, exec)?;
    out.csv("curvature.csv", &report.rows)?;
    out.json("curvature.json", &report)
}

#[derive(Serialize)]
struct ReplicateRow {
    sample_size: usize,
    replicate: usize,
    loss: f64,
    within: f64,
    cross: f64,
    converged: bool,
    iterations: usize,
}

fn rate(cli: &Cli, out: &Output, exec: Execution) -> CliResult<()> {
    let mut config: RateConfig = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let report = rate_study(&config, exec)?;
    let replicates: Vec<ReplicateRow> = report
        .replicate_outcomes
        .iter()
        .flat_map(|(s, outcomes)| {
            outcomes.iter().map(move |o| ReplicateRow {
                sample_size: *s,
                replicate: o.replicate,
                loss: o.loss,
                within: o.within,
                cross: o.cross,
                converged: o.converged,
                iterations: o.iterations,
            })
        })
        .collect();
    out.csv("rate.csv", &report.rows)?;
    out.csv("rate_replicates.csv", &replicates)?;
    out.json("rate.json", &report)?;
    match &report.failure {
        Some(f) => Err(Failure::Numerical(format!(
            "rate study stopped at n = {}: {}",
            f.sample_size, f.message
        ))),
        None => Ok(()),
    }
}

fn variance(cli: &Cli, out: &Output) -> CliResult<()> {
    let config: TridiagonalScan = load_config(cli.config.as_deref())?;
    let report = variance_growth(&config)?;
    out.csv("variance.csv", &report.rows)?;
    out.json("variance.json", &report)
}

fn identities(cli: &Cli, out: &Output, exec: Execution) -> CliResult<()> {
    let mut config: IdentityCheckConfig = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let report = verify_identities(&config, exec)?;
    out.json("identities.json", &report)?;
    log::info!("verify-identities max residual {:e}", report.max_abs_residual);
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Numerical(format!(
            "identity residual {:e} exceeds {:e}",
            report.max_abs_residual, config.tolerance
        )))
    }
}

/// Thread count from DPP_MLE_THREADS, else `--threads`.
fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    match std::env::var("DPP_MLE_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Config(format!("DPP_MLE_THREADS must be a positive integer, got {v:?}"))),
        _ => Ok(flag),
    }
}

fn execution(threads: Option<usize>) -> CliResult<Execution> {
    if threads == Some(0) {
        return Err(Failure::Config("thread count must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    {
        if let Some(t) = threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| Failure::Config(e.to_string()))?;
        }
        Ok(if threads == Some(1) {
            Execution::Sequential
        } else {
            Execution::default()
        })
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok(Execution::Sequential)
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let exec = execution(thread_count(cli.threads)?)?;
    let out = Output::new(&cli.out)?;
    match cli.command {
        Command::Simulate => simulate(cli, &out, exec),
        Command::Estimate => estimate(cli, &out),
        Command::Hessian => hessian(cli, &out, exec),
        Command::CurvatureScan => curvature(cli, &out, exec),
        Command::RateStudy => rate(cli, &out, exec),
        Command::VarianceGrowth => variance(cli, &out),
        Command::VerifyIdentities => identities(cli, &out, exec),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
