//! Reference solutions, multi-seed runs, comparisons and hyper-parameter
//! sweeps, with CSV output.

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use crate::baselines::{
    run_fedavg, run_scaffnew, run_scaffold, BaselineConfig, BaselineKind, LocalSteps, ProbRule,
    StepCounter,
};
use crate::data::{
    kmeans_partition, load_csv, synthetic_two_cluster, CsvOptions, Partition, RawDataset,
};
use crate::error::{Error, Result};
use crate::federation::RunResult;
use crate::fedmls::{corollary1_params, run_fedmls, FedmlsSchedule};
use crate::linalg;
use crate::metrics::{
    aggregate, write_aggregate, write_metrics, AggregateRow, Algorithm, Metadata,
};
use crate::problem::{
    ClientDataset, FederatedObjective, HingeObjective, Objective, SharedObjective,
};
use crate::reference::{reference_solve, ReferenceConfig, ReferenceSolution};
use crate::rng::GENERATOR;

/// Suboptimality below `-SUBOPT_TOLERANCE` means the reference is not optimal.
pub const SUBOPT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSource {
    Csv {
        path: PathBuf,
        options: CsvOptions,
    },
    Synthetic {
        dim: usize,
        per_cluster: usize,
        separation: f64,
        data_seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionRule {
    KMeans,
    /// Synthetic data only: one blob per group of clients.
    Blobs,
}

impl FromStr for PartitionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(PartitionRule::KMeans),
            "blobs" => Ok(PartitionRule::Blobs),
            other => Err(Error::invalid(format!("unknown partition rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub source: ProblemSource,
    pub clients: usize,
    pub partition: PartitionRule,
    pub kmeans_seed: u64,
    pub kmeans_iters: usize,
    pub standardize: bool,
    /// Fraction of each client's points in a mini-batch; 1 is full batch.
    pub batch_fraction: f64,
}

impl ProblemSpec {
    pub fn csv(path: impl Into<PathBuf>, options: CsvOptions, clients: usize) -> Self {
        Self {
            source: ProblemSource::Csv {
                path: path.into(),
                options,
            },
            clients,
            partition: PartitionRule::KMeans,
            kmeans_seed: 0,
            kmeans_iters: 300,
            standardize: false,
            batch_fraction: 1.0,
        }
    }

    pub fn synthetic(dim: usize, per_cluster: usize, separation: f64, clients: usize) -> Self {
        Self {
            source: ProblemSource::Synthetic {
                dim,
                per_cluster,
                separation,
                data_seed: 0,
            },
            clients,
            partition: PartitionRule::Blobs,
            kmeans_seed: 0,
            kmeans_iters: 300,
            standardize: false,
            batch_fraction: 1.0,
        }
    }

    pub fn build(&self) -> Result<Problem> {
        let (dataset, blob_partition) = match &self.source {
            ProblemSource::Csv { path, options } => (load_csv(path, options)?, None),
            ProblemSource::Synthetic {
                dim,
                per_cluster,
                separation,
                data_seed,
            } => {
                let tc = synthetic_two_cluster(*dim, *per_cluster, *separation, *data_seed)?;
                let blobs = match self.partition {
                    PartitionRule::Blobs => Some(tc.blob_partition(self.clients)?),
                    PartitionRule::KMeans => None,
                };
                (tc.dataset, blobs)
            }
        };
        let dataset = if self.standardize {
            dataset.standardized()
        } else {
            dataset
        };
        let partition = match (self.partition, blob_partition) {
            (_, Some(p)) => p,
            (PartitionRule::KMeans, None) => {
                kmeans_partition(&dataset, self.clients, self.kmeans_seed, self.kmeans_iters)?
            }
            (PartitionRule::Blobs, None) => {
                return Err(Error::invalid("blob partitions need a synthetic problem"))
            }
        };
        let clients = dataset.client_datasets(&partition)?;
        let objectives = clients
            .iter()
            .map(|c| {
                HingeObjective::new(c.clone(), self.batch_fraction)
                    .map(|o| Arc::new(o) as SharedObjective)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Problem {
            dataset,
            partition,
            clients,
            objectives,
        })
    }

    fn metadata(&self) -> Metadata {
        let mut m = Vec::new();
        match &self.source {
            ProblemSource::Csv { path, options } => {
                m.push(kv("problem", "csv"));
                m.push(kv("csv_path", path.display()));
                m.push(kv("label_column", &options.label_column));
                m.push(kv("positive_label", &options.positive_label));
                m.push(kv("missing_marker", &options.missing_marker));
                m.push(kv("drop_columns", options.drop_columns.join(";")));
            }
            ProblemSource::Synthetic {
                dim,
                per_cluster,
                separation,
                data_seed,
            } => {
                m.push(kv("problem", "synthetic"));
                m.push(kv("synthetic_dim", dim));
                m.push(kv("per_cluster", per_cluster));
                m.push(kv("separation", separation));
                m.push(kv("data_seed", data_seed));
            }
        }
        m.push(kv("clients", self.clients));
        m.push(kv(
            "partition",
            match self.partition {
                PartitionRule::KMeans => "kmeans (k-means++ init, Lloyd, raw or z-scored features)",
                PartitionRule::Blobs => "blobs",
            },
        ));
        m.push(kv("kmeans_seed", self.kmeans_seed));
        m.push(kv("kmeans_iters", self.kmeans_iters));
        m.push(kv("standardize", self.standardize));
        m.push(kv("batch_fraction", self.batch_fraction));
        m
    }
}

/// A built problem: data, its partition and one hinge objective per client.
#[derive(Clone)]
pub struct Problem {
    pub dataset: RawDataset,
    pub partition: Partition,
    pub clients: Vec<ClientDataset>,
    pub objectives: Vec<SharedObjective>,
}

impl Problem {
    /// Model dimension (features plus intercept).
    pub fn dim(&self) -> usize {
        self.dataset.dim() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedmlsMode {
    /// `lambda_k = lambda0 / k`, `T_k = ceil(t0 k)`.
    Decaying,
    /// Constant `lambda0` and `inner_steps`.
    Fixed,
    /// `lambda`, `T` and `K` from the target accuracy `epsilon`.
    Corollary1,
}

impl FromStr for FedmlsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decaying" => Ok(FedmlsMode::Decaying),
            "fixed" => Ok(FedmlsMode::Fixed),
            "corollary1" => Ok(FedmlsMode::Corollary1),
            other => Err(Error::invalid(format!("unknown schedule `{other}`"))),
        }
    }
}

/// Which Lipschitz constant enters the accuracy-driven schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LipschitzChoice {
    /// `(1/n) sum_i G_i`, the constant of the averaged objective.
    #[default]
    Global,
    /// `max_i G_i`.
    MaxClient,
}

impl FromStr for LipschitzChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(LipschitzChoice::Global),
            "max-client" | "max_client" => Ok(LipschitzChoice::MaxClient),
            other => Err(Error::invalid(format!(
                "unknown Lipschitz choice `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FedmlsSettings {
    pub mode: FedmlsMode,
    pub lambda0: f64,
    pub t0: f64,
    pub inner_steps: usize,
    pub epsilon: Option<f64>,
    pub dist0: Option<f64>,
    pub lipschitz: LipschitzChoice,
}

impl Default for FedmlsSettings {
    fn default() -> Self {
        Self {
            mode: FedmlsMode::Decaying,
            lambda0: 1.0,
            t0: 1.0,
            inner_steps: 10,
            epsilon: None,
            dist0: None,
            lipschitz: LipschitzChoice::Global,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineSettings {
    pub eta0: f64,
    pub local_steps: LocalSteps,
    pub prob_rule: ProbRule,
    pub step_counter: StepCounter,
    pub max_iterations: Option<u64>,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            eta0: 1.0,
            local_steps: LocalSteps::Linear { t0: 1.0 },
            prob_rule: ProbRule::InverseSqrt,
            step_counter: StepCounter::Cumulative,
            max_iterations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub fedmls: FedmlsSettings,
    pub baseline: BaselineSettings,
    /// Ball radius for FedMLS; defaults to `max(1, 2 (||x0|| + ||x*||))`.
    pub radius: Option<f64>,
    /// Known optimal value; computed with the reference solver when absent.
    pub f_star: Option<f64>,
    pub reference: ReferenceConfig,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Twenty seeds `0..20`, 100 rounds, FedMLS with the decaying schedule.
    pub fn new(problem: ProblemSpec) -> Self {
        Self {
            problem,
            algorithm: Algorithm::Fedmls,
            seeds: (0..20).collect(),
            rounds: 100,
            fedmls: FedmlsSettings::default(),
            baseline: BaselineSettings::default(),
            radius: None,
            f_star: None,
            reference: ReferenceConfig::default(),
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("at least one round is required"));
        }
        if self.problem.clients == 0 {
            return Err(Error::invalid("at least one client is required"));
        }
        if !(self.problem.batch_fraction > 0.0 && self.problem.batch_fraction <= 1.0) {
            return Err(Error::invalid("batch fraction must lie in (0, 1]"));
        }
        if let Some(r) = self.radius {
            if !(r > 0.0) {
                return Err(Error::invalid("radius must be positive"));
            }
        }
        if self.algorithm == Algorithm::Mopes {
            return Err(Error::invalid("mopes is not a federated algorithm"));
        }
        Ok(())
    }

    fn needs_reference(&self) -> bool {
        self.f_star.is_none()
            || self.radius.is_none()
            || (self.fedmls.mode == FedmlsMode::Corollary1 && self.fedmls.dist0.is_none())
    }

    fn metadata(&self) -> Metadata {
        let mut m = vec![
            kv("generator", GENERATOR),
            kv("version", env!("CARGO_PKG_VERSION")),
            kv("algorithm", self.algorithm),
            kv(
                "seeds",
                self.seeds
                    .iter()
                    .map(u64::to_string)
                    .collect::<Vec<_>>()
                    .join(";"),
            ),
            kv("rounds", self.rounds),
            kv("x0", "0"),
        ];
        m.extend(self.problem.metadata());
        match self.algorithm {
            Algorithm::Fedmls | Algorithm::Mopes => {
                let f = &self.fedmls;
                m.push(kv("schedule", format!("{:?}", f.mode).to_lowercase()));
                m.push(kv("lambda0", f.lambda0));
                m.push(kv("t0", f.t0));
                m.push(kv("inner_steps", f.inner_steps));
                m.push(kv("epsilon", opt(f.epsilon)));
                m.push(kv("lipschitz", format!("{:?}", f.lipschitz).to_lowercase()));
            }
            _ => {
                let b = &self.baseline;
                m.push(kv("eta0", b.eta0));
                m.push(kv(
                    "local_steps",
                    match b.local_steps {
                        LocalSteps::Constant(t) => t.to_string(),
                        LocalSteps::Linear { t0 } => format!("ceil({t0} k)"),
                    },
                ));
                if self.algorithm == Algorithm::Scaffold {
                    m.push(kv(
                        "step_counter",
                        format!("{:?}", b.step_counter).to_lowercase(),
                    ));
                }
                if self.algorithm == Algorithm::Scaffnew {
                    m.push(kv(
                        "prob_rule",
                        match b.prob_rule {
                            ProbRule::InverseSqrt => "1/sqrt(t)".to_string(),
                            ProbRule::Constant(p) => p.to_string(),
                        },
                    ));
                    m.push(kv("max_iterations", opt(b.max_iterations)));
                }
            }
        }
        m.push(kv("reference_target", self.reference.target_accuracy));
        m
    }
}

fn kv(key: &str, value: impl fmt::Display) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

/// Everything shared by the runs of one configuration.
#[derive(Clone)]
pub struct Prepared {
    pub objectives: Vec<SharedObjective>,
    pub reference: Option<ReferenceSolution>,
    pub f_star: f64,
    pub radius: f64,
    pub dist0: Option<f64>,
    pub warnings: Vec<String>,
}

impl Prepared {
    pub fn dim(&self) -> usize {
        self.objectives[0].dim()
    }
}

/// Computes the reference solution (unless fully supplied) and the derived
/// radius and initial distance.
pub fn prepare(config: &RunConfig, objectives: Vec<SharedObjective>) -> Result<Prepared> {
    let global = FederatedObjective::new(objectives.clone())?;
    let x0 = vec![0.0; global.dim()];
    let mut warnings = Vec::new();
    let reference = if config.needs_reference() {
        let sol = reference_solve(&global, &x0, &config.reference)?;
        if !sol.met_target {
            warnings.push(format!(
                "reference solver stopped with certificate {:.3e} above target {:.3e}",
                sol.certificate, config.reference.target_accuracy
            ));
        }
        Some(sol)
    } else {
        None
    };
    let x_star_norm = reference
        .as_ref()
        .map(|r| linalg::dist_sq(&r.x_star, &x0).sqrt());
    let f_star = match (config.f_star, &reference) {
        (Some(f), _) => f,
        (None, Some(r)) => r.f_star,
        (None, None) => unreachable!("reference computed when f* is missing"),
    };
    let radius = config
        .radius
        .unwrap_or_else(|| (2.0 * (linalg::norm(&x0) + x_star_norm.unwrap_or(0.0))).max(1.0));
    let dist0 = config.fedmls.dist0.or(x_star_norm);
    Ok(Prepared {
        objectives,
        reference,
        f_star,
        radius,
        dist0,
        warnings,
    })
}

/// The FedMLS schedule a configuration resolves to.
pub fn fedmls_schedule(config: &RunConfig, prepared: &Prepared) -> Result<FedmlsSchedule> {
    let f = &config.fedmls;
    let schedule = match f.mode {
        FedmlsMode::Decaying => {
            FedmlsSchedule::decaying(f.lambda0, f.t0, config.rounds, prepared.radius)
        }
        FedmlsMode::Fixed => {
            FedmlsSchedule::fixed(f.lambda0, f.inner_steps, config.rounds, prepared.radius)
        }
        FedmlsMode::Corollary1 => {
            let eps = f
                .epsilon
                .ok_or_else(|| Error::invalid("the corollary1 schedule needs epsilon"))?;
            let dist0 = prepared
                .dist0
                .ok_or_else(|| Error::invalid("the corollary1 schedule needs dist0"))?;
            let global = FederatedObjective::new(prepared.objectives.clone())?;
            let g = match f.lipschitz {
                LipschitzChoice::Global => global.lipschitz(),
                LipschitzChoice::MaxClient => global.max_client_lipschitz(),
            };
            let sigma2 = prepared
                .objectives
                .iter()
                .map(|o| o.variance_bound())
                .fold(0.0, f64::max);
            let params = corollary1_params(g, sigma2, prepared.objectives.len(), dist0, eps)?;
            FedmlsSchedule::from_corollary1(params, prepared.radius)
        }
    };
    schedule.validate()?;
    Ok(schedule)
}

fn baseline_config(config: &RunConfig, kind: BaselineKind) -> BaselineConfig {
    let b = &config.baseline;
    BaselineConfig {
        kind,
        eta0: b.eta0,
        rounds: config.rounds,
        local_steps: b.local_steps,
        prob_rule: b.prob_rule,
        step_counter: b.step_counter,
        max_iterations: b.max_iterations,
    }
}

/// One run of `algorithm` from `x0 = 0`.
pub fn run_single(
    config: &RunConfig,
    prepared: &Prepared,
    algorithm: Algorithm,
    seed: u64,
) -> RunResult {
    let objectives = prepared.objectives.clone();
    let x0 = vec![0.0; prepared.dim()];
    let f_star = Some(prepared.f_star);
    match algorithm {
        Algorithm::Fedmls => {
            let schedule = fedmls_schedule(config, prepared)?;
            run_fedmls(objectives, schedule, &x0, seed, f_star)
        }
        Algorithm::Fedavg => run_fedavg(
            objectives,
            baseline_config(config, BaselineKind::Fedavg),
            &x0,
            seed,
            f_star,
        ),
        Algorithm::Scaffold => run_scaffold(
            objectives,
            baseline_config(config, BaselineKind::Scaffold),
            &x0,
            seed,
            f_star,
        ),
        Algorithm::Scaffnew => run_scaffnew(
            objectives,
            baseline_config(config, BaselineKind::Scaffnew),
            &x0,
            seed,
            f_star,
        ),
        Algorithm::Mopes => Err(Error::invalid("mopes is not a federated algorithm").into()),
    }
}

pub struct SeedOutcome {
    pub seed: u64,
    pub result: RunResult,
}

pub struct ExperimentOutput {
    pub algorithm: Algorithm,
    pub f_star: f64,
    pub radius: f64,
    pub runs: Vec<SeedOutcome>,
    /// Per-round summary over the successful seeds.
    pub aggregate: Vec<AggregateRow>,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl ExperimentOutput {
    pub fn all_succeeded(&self) -> bool {
        self.runs.iter().all(|r| r.result.is_ok())
    }

    /// Mean over successful seeds of the last recorded suboptimality.
    pub fn mean_final_subopt(&self) -> Option<f64> {
        let finals: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|r| r.result.as_ref().ok())
            .filter_map(|o| o.metrics.last().and_then(|m| m.suboptimality))
            .collect();
        if finals.is_empty() {
            None
        } else {
            Some(finals.iter().sum::<f64>() / finals.len() as f64)
        }
    }
}

fn map_seeds<T, F>(seeds: &[u64], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds.par_iter().map(|&s| f(s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seeds.iter().map(|&s| f(s)).collect()
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

/// Runs `algorithm` for every seed against a prepared problem and writes the
/// per-seed and aggregate CSVs when an output directory is configured.
pub fn run_prepared(
    config: &RunConfig,
    prepared: &Prepared,
    algorithm: Algorithm,
) -> Result<ExperimentOutput> {
    let mut cfg = config.clone();
    cfg.algorithm = algorithm;
    cfg.validate()?;
    let runs: Vec<SeedOutcome> = map_seeds(&cfg.seeds, |seed| SeedOutcome {
        seed,
        result: run_single(&cfg, prepared, algorithm, seed),
    });

    let mut warnings = prepared.warnings.clone();
    let mut successful = Vec::new();
    for run in &runs {
        match &run.result {
            Ok(out) => {
                if let Some(m) = out
                    .metrics
                    .iter()
                    .find(|m| m.suboptimality.is_some_and(|s| s < -SUBOPT_TOLERANCE))
                {
                    warnings.push(format!(
                        "{algorithm} seed {}: suboptimality {:.3e} at round {} is below zero; \
                         the reference value is not optimal",
                        run.seed,
                        m.suboptimality.unwrap_or_default(),
                        m.round
                    ));
                }
                successful.push(out.metrics.clone());
            }
            Err(e) => warnings.push(format!("{algorithm} seed {} failed: {e}", run.seed)),
        }
    }
    if successful.len() < runs.len() && !successful.is_empty() {
        warnings.push(format!(
            "{algorithm}: aggregate covers {} of {} seeds",
            successful.len(),
            runs.len()
        ));
    }
    let rows = aggregate(&successful);

    let mut files = Vec::new();
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut meta = cfg.metadata();
        meta.push(kv("f_star", prepared.f_star));
        meta.push(kv(
            "f_star_source",
            if cfg.f_star.is_some() {
                "config"
            } else {
                "reference solver"
            },
        ));
        if let Some(r) = &prepared.reference {
            meta.push(kv("reference_certificate", r.certificate));
        }
        meta.push(kv("radius", prepared.radius));
        meta.push(kv("dist0", opt(prepared.dist0)));
        if algorithm == Algorithm::Fedmls {
            let s = fedmls_schedule(&cfg, prepared)?;
            meta.push(kv("schedule_resolved", format!("{s:?}")));
        }
        for run in &runs {
            let records = match &run.result {
                Ok(o) => &o.metrics,
                Err(e) => &e.partial,
            };
            let path = dir.join(format!("{algorithm}_seed{}.csv", run.seed));
            let mut m = meta.clone();
            m.push(kv("seed", run.seed));
            if let Err(e) = &run.result {
                m.push(kv("status", format!("failed: {e}")));
            }
            write_metrics(create(&path)?, &m, records)?;
            files.push(path);
        }
        let path = dir.join(format!("{algorithm}_aggregate.csv"));
        let mut m = meta;
        m.push(kv("successful_seeds", successful.len()));
        write_aggregate(create(&path)?, &m, &rows)?;
        files.push(path);
    }

    Ok(ExperimentOutput {
        algorithm,
        f_star: prepared.f_star,
        radius: prepared.radius,
        runs,
        aggregate: rows,
        warnings,
        files,
    })
}

/// Builds the problem, solves for the reference and runs the configured
/// algorithm over every seed.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let problem = config.problem.build()?;
    let prepared = prepare(config, problem.objectives)?;
    run_prepared(config, &prepared, config.algorithm)
}

/// All four federated algorithms against one shared reference value.
pub fn compare(config: &RunConfig) -> Result<Vec<ExperimentOutput>> {
    config.validate()?;
    let problem = config.problem.build()?;
    let prepared = prepare(config, problem.objectives)?;
    Algorithm::FEDERATED
        .iter()
        .map(|&a| run_prepared(config, &prepared, a))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Eta0,
    Lambda0,
    T0,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Eta0 => "eta0",
            SweepParam::Lambda0 => "lambda0",
            SweepParam::T0 => "t0",
        }
    }

    fn apply(self, config: &mut RunConfig, value: f64) {
        match self {
            SweepParam::Eta0 => config.baseline.eta0 = value,
            SweepParam::Lambda0 => config.fedmls.lambda0 = value,
            SweepParam::T0 => config.fedmls.t0 = value,
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eta0" => Ok(SweepParam::Eta0),
            "lambda0" => Ok(SweepParam::Lambda0),
            "t0" => Ok(SweepParam::T0),
            other => Err(Error::invalid(format!(
                "cannot sweep `{other}`; expected eta0, lambda0 or t0"
            ))),
        }
    }
}

/// `10^lo, .., 10^hi`.
pub fn powers_of_ten(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub mean_final_subopt: Option<f64>,
    /// Why the value was not eligible, if it was not.
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub param: SweepParam,
    pub best: f64,
    pub points: Vec<SweepPoint>,
    pub warnings: Vec<String>,
    pub summary_file: Option<PathBuf>,
}

/// Runs the configured algorithm at every grid value and keeps the value
/// with the lowest mean final suboptimality. Values whose runs fail or
/// diverge are excluded with a reason.
pub fn sweep(config: &RunConfig, param: SweepParam, grid: &[f64]) -> Result<SweepOutput> {
    if grid.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    config.validate()?;
    let problem = config.problem.build()?;
    let prepared = prepare(config, problem.objectives)?;
    let mut warnings = prepared.warnings.clone();
    let mut points = Vec::with_capacity(grid.len());
    for &value in grid {
        let mut cfg = config.clone();
        cfg.out_dir = None;
        param.apply(&mut cfg, value);
        let point = match run_prepared(&cfg, &prepared, cfg.algorithm) {
            Err(e) => SweepPoint {
                value,
                mean_final_subopt: None,
                excluded: Some(e.to_string()),
            },
            Ok(out) => {
                let failure = out.runs.iter().find_map(|r| {
                    r.result
                        .as_ref()
                        .err()
                        .map(|e| format!("seed {}: {}", r.seed, e.source))
                });
                let mean = out.mean_final_subopt();
                let excluded = match (failure, mean) {
                    (Some(f), _) => Some(f),
                    (None, Some(m)) if !m.is_finite() => Some("non-finite suboptimality".into()),
                    (None, None) => Some("no suboptimality recorded".into()),
                    _ => None,
                };
                SweepPoint {
                    value,
                    mean_final_subopt: mean,
                    excluded,
                }
            }
        };
        if let Some(reason) = &point.excluded {
            warnings.push(format!("{}={value} excluded: {reason}", param.as_str()));
        }
        points.push(point);
    }

    let best = points
        .iter()
        .filter(|p| p.excluded.is_none())
        .filter_map(|p| p.mean_final_subopt.map(|m| (p.value, m)))
        .fold(None, |acc: Option<(f64, f64)>, (v, m)| match acc {
            Some((_, bm)) if bm <= m => acc,
            _ => Some((v, m)),
        })
        .map(|(v, _)| v)
        .ok_or(Error::SweepFailed)?;

    if grid.len() > 1 {
        let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if best == lo || best == hi {
            warnings.push(format!(
                "best {}={best} is a grid endpoint; consider widening the grid",
                param.as_str()
            ));
        }
    }

    let summary_file = match &config.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            let path = dir.join(format!("sweep_{}_{}.csv", config.algorithm, param.as_str()));
            let mut w = csv::Writer::from_writer(create(&path)?);
            w.write_record(["value", "mean_final_subopt", "selected", "excluded"])?;
            for p in &points {
                w.write_record([
                    p.value.to_string(),
                    p.mean_final_subopt
                        .map(|m| m.to_string())
                        .unwrap_or_default(),
                    (p.value == best).to_string(),
                    p.excluded.clone().unwrap_or_default(),
                ])?;
            }
            w.flush().map_err(|e| io_err(&path, e))?;
            Some(path)
        }
        None => None,
    };

    Ok(SweepOutput {
        param,
        best,
        points,
        warnings,
        summary_file,
    })
}
