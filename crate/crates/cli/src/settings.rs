//! Flag/config-file settings and their translation into a [`RunConfig`].
//!
//! Every field is optional so a TOML file and the command line can be
//! layered: values from the file fill whatever the flags left unset.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use fedmls_core::baselines::{LocalSteps, ProbRule, StepCounter};
use fedmls_core::data::CsvOptions;
use fedmls_core::experiment::{
    powers_of_ten, FedmlsMode, LipschitzChoice, PartitionRule, ProblemSource, ProblemSpec,
    RunConfig, SweepParam,
};
use fedmls_core::metrics::Algorithm;
use serde::Deserialize;

/// Seed list: `0..20` (half-open), `3` or `1,4,9`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if let Some((lo, hi)) = s.split_once("..") {
            let lo: u64 = lo
                .trim()
                .parse()
                .map_err(|_| format!("bad seed range `{s}`"))?;
            let hi: u64 = hi
                .trim()
                .parse()
                .map_err(|_| format!("bad seed range `{s}`"))?;
            if hi <= lo {
                return Err(format!("empty seed range `{s}`"));
            }
            return Ok(Seeds((lo..hi).collect()));
        }
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| format!("bad seed `{p}`")))
            .collect::<Result<Vec<_>, _>>()
            .map(Seeds)
    }
}

impl<'de> Deserialize<'de> for Seeds {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            List(Vec<u64>),
            One(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::List(v) => Ok(Seeds(v)),
            Raw::One(s) => Ok(Seeds(vec![s])),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Comma-separated list of floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| format!("bad grid value `{p}`"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Grid)
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            List(Vec<f64>),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::List(v) => Ok(Grid(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// `lo:hi`, the exponents of a powers-of-ten grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Powers(pub i32, pub i32);

impl FromStr for Powers {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("expected `lo:hi` exponents, got `{s}`");
        let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
        let lo = lo.trim().parse().map_err(|_| bad())?;
        let hi = hi.trim().parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        Ok(Powers(lo, hi))
    }
}

impl<'de> Deserialize<'de> for Powers {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

macro_rules! parsed_enum {
    ($name:ident, $inner:ty) => {
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct $name(pub $inner);

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                s.parse::<$inner>().map($name).map_err(|e| e.to_string())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                String::deserialize(d)?
                    .parse()
                    .map_err(serde::de::Error::custom)
            }
        }
    };
}

parsed_enum!(AlgorithmArg, Algorithm);
parsed_enum!(PartitionArg, PartitionRule);
parsed_enum!(ModeArg, FedmlsMode);
parsed_enum!(LipschitzArg, LipschitzChoice);
parsed_enum!(SweepParamArg, SweepParam);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterArg(pub StepCounter);

impl FromStr for CounterArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cumulative" => Ok(CounterArg(StepCounter::Cumulative)),
            "per-round" | "per_round" => Ok(CounterArg(StepCounter::PerRound)),
            other => Err(format!(
                "unknown step counter `{other}`; expected cumulative or per-round"
            )),
        }
    }
}

impl<'de> Deserialize<'de> for CounterArg {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Settings {
    /// TOML file with any of these settings; flags win over it.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    // -- problem
    /// CSV data file; without it a synthetic two-cluster problem is used.
    #[arg(long, value_name = "CSV", help_heading = "Problem")]
    pub data: Option<PathBuf>,
    /// Label column; omitted means the Wisconsin layout.
    #[arg(long, help_heading = "Problem")]
    pub label_column: Option<String>,
    /// Label value mapped to +1.
    #[arg(long, help_heading = "Problem")]
    pub positive_label: Option<String>,
    #[arg(long, help_heading = "Problem")]
    pub missing_marker: Option<String>,
    /// Comma-separated columns to ignore.
    #[arg(long, value_delimiter = ',', help_heading = "Problem")]
    pub drop_columns: Option<Vec<String>>,
    #[arg(long, help_heading = "Problem")]
    pub synthetic_dim: Option<usize>,
    /// Points per synthetic cluster.
    #[arg(long, help_heading = "Problem")]
    pub per_cluster: Option<usize>,
    #[arg(long, help_heading = "Problem")]
    pub separation: Option<f64>,
    #[arg(long, help_heading = "Problem")]
    pub data_seed: Option<u64>,
    #[arg(long, short = 'n', help_heading = "Problem")]
    pub clients: Option<usize>,
    /// kmeans or blobs (synthetic only).
    #[arg(long, help_heading = "Problem")]
    pub partition: Option<PartitionArg>,
    #[arg(long, help_heading = "Problem")]
    pub kmeans_seed: Option<u64>,
    #[arg(long, help_heading = "Problem")]
    pub kmeans_iters: Option<usize>,
    /// Z-score features before partitioning and training.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", help_heading = "Problem")]
    pub standardize: Option<bool>,
    #[arg(long, help_heading = "Problem")]
    pub batch_fraction: Option<f64>,

    // -- run
    /// fedmls, fedavg, scaffold or scaffnew.
    #[arg(long, short = 'a', help_heading = "Run")]
    pub algorithm: Option<AlgorithmArg>,
    /// `0..20`, `7` or `1,2,3`.
    #[arg(long, help_heading = "Run")]
    pub seeds: Option<Seeds>,
    #[arg(long, short = 'K', help_heading = "Run")]
    pub rounds: Option<usize>,
    #[arg(long, short = 'o', value_name = "DIR", help_heading = "Run")]
    pub out_dir: Option<PathBuf>,
    /// FedMLS ball radius.
    #[arg(long, help_heading = "Run")]
    pub radius: Option<f64>,
    /// Known optimal value; skips the reference solver.
    #[arg(long, allow_negative_numbers = true, help_heading = "Run")]
    pub f_star: Option<f64>,

    // -- FedMLS
    /// decaying, fixed or corollary1.
    #[arg(long, help_heading = "FedMLS")]
    pub mode: Option<ModeArg>,
    #[arg(long, help_heading = "FedMLS")]
    pub lambda0: Option<f64>,
    /// Local-step slope: T_k = ceil(t0 k), also used by the baselines.
    #[arg(long, help_heading = "FedMLS")]
    pub t0: Option<f64>,
    /// Constant T for the fixed schedule.
    #[arg(long, help_heading = "FedMLS")]
    pub inner_steps: Option<usize>,
    #[arg(long, help_heading = "FedMLS")]
    pub epsilon: Option<f64>,
    #[arg(long, help_heading = "FedMLS")]
    pub dist0: Option<f64>,
    /// global or max-client.
    #[arg(long, help_heading = "FedMLS")]
    pub lipschitz: Option<LipschitzArg>,

    // -- baselines
    #[arg(long, help_heading = "Baselines")]
    pub eta0: Option<f64>,
    /// Constant local steps per round instead of ceil(t0 k).
    #[arg(long, help_heading = "Baselines")]
    pub local_steps: Option<usize>,
    /// Constant Scaffnew communication probability instead of 1/sqrt(t).
    #[arg(long, help_heading = "Baselines")]
    pub comm_prob: Option<f64>,
    /// cumulative or per-round (Scaffold step index).
    #[arg(long, help_heading = "Baselines")]
    pub step_counter: Option<CounterArg>,
    /// Scaffnew iteration cap.
    #[arg(long, help_heading = "Baselines")]
    pub max_iterations: Option<u64>,

    // -- reference solver
    #[arg(long, help_heading = "Reference")]
    pub target_accuracy: Option<f64>,
    #[arg(long, help_heading = "Reference")]
    pub max_restarts: Option<usize>,
    #[arg(long, help_heading = "Reference")]
    pub max_steps_per_restart: Option<usize>,

    // -- sweep / partition
    /// eta0, lambda0 or t0.
    #[arg(long, help_heading = "Sweep")]
    pub param: Option<SweepParamArg>,
    /// Explicit comma-separated grid.
    #[arg(long, allow_negative_numbers = true, help_heading = "Sweep")]
    pub grid: Option<Grid>,
    /// Powers-of-ten exponents `lo:hi` (default -2:2).
    #[arg(long, allow_hyphen_values = true, help_heading = "Sweep")]
    pub powers: Option<Powers>,
    /// Partition CSV destination (stdout if omitted).
    #[arg(long, value_name = "FILE", help_heading = "Partition")]
    pub output: Option<PathBuf>,
}

macro_rules! fill {
    ($self:ident, $other:ident; $($f:ident),* $(,)?) => {
        $( if $self.$f.is_none() { $self.$f = $other.$f; } )*
    };
}

impl Settings {
    /// Fills unset fields from `file`.
    pub fn layered_over(mut self, file: Settings) -> Settings {
        fill!(self, file;
            data, label_column, positive_label, missing_marker, drop_columns,
            synthetic_dim, per_cluster, separation, data_seed, clients, partition,
            kmeans_seed, kmeans_iters, standardize, batch_fraction,
            algorithm, seeds, rounds, out_dir, radius, f_star,
            mode, lambda0, t0, inner_steps, epsilon, dist0, lipschitz,
            eta0, local_steps, comm_prob, step_counter, max_iterations,
            target_accuracy, max_restarts, max_steps_per_restart,
            param, grid, powers, output,
        );
        self
    }

    /// Parses a TOML settings file. Keys use the flag names; `_` and `-`
    /// are interchangeable. Relative paths resolve against the file.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Settings, String> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        let table: toml::Table = table
            .into_iter()
            .map(|(k, v)| (k.replace('_', "-"), v))
            .collect();
        let mut s: Settings = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| e.to_string())?;
        if let Some(base) = base {
            for p in [&mut s.data, &mut s.out_dir, &mut s.output]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(s)
    }

    /// Reads `--config` if given and layers the flags over it.
    pub fn resolve(self) -> Result<Settings, String> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let file = Settings::from_toml(&text, path.parent())
            .map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(self.layered_over(file))
    }

    pub fn problem(&self) -> ProblemSpec {
        let clients = self.clients.unwrap_or(2);
        let mut spec = match &self.data {
            Some(path) => {
                let mut opts = match &self.label_column {
                    None => CsvOptions::wisconsin(),
                    Some(label) => {
                        CsvOptions::new(label, self.positive_label.as_deref().unwrap_or("1"))
                    }
                };
                if self.label_column.is_none() {
                    if let Some(p) = &self.positive_label {
                        opts.positive_label = p.clone();
                    }
                }
                if let Some(m) = &self.missing_marker {
                    opts.missing_marker = m.clone();
                }
                if let Some(d) = &self.drop_columns {
                    opts.drop_columns = d.clone();
                }
                ProblemSpec::csv(path, opts, clients)
            }
            None => {
                let mut s = ProblemSpec::synthetic(
                    self.synthetic_dim.unwrap_or(2),
                    self.per_cluster.unwrap_or(50),
                    self.separation.unwrap_or(1.0),
                    clients,
                );
                if let (Some(seed), ProblemSource::Synthetic { data_seed, .. }) =
                    (self.data_seed, &mut s.source)
                {
                    *data_seed = seed;
                }
                s
            }
        };
        if let Some(p) = self.partition {
            spec.partition = p.0;
        }
        if let Some(s) = self.kmeans_seed {
            spec.kmeans_seed = s;
        }
        if let Some(i) = self.kmeans_iters {
            spec.kmeans_iters = i;
        }
        if let Some(s) = self.standardize {
            spec.standardize = s;
        }
        if let Some(b) = self.batch_fraction {
            spec.batch_fraction = b;
        }
        spec
    }

    pub fn run_config(&self) -> RunConfig {
        let mut cfg = RunConfig::new(self.problem());
        if let Some(a) = self.algorithm {
            cfg.algorithm = a.0;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.0.clone();
        }
        if let Some(r) = self.rounds {
            cfg.rounds = r;
        }
        cfg.out_dir = self.out_dir.clone();
        cfg.radius = self.radius;
        cfg.f_star = self.f_star;

        let f = &mut cfg.fedmls;
        if let Some(m) = self.mode {
            f.mode = m.0;
        }
        if let Some(v) = self.lambda0 {
            f.lambda0 = v;
        }
        if let Some(v) = self.t0 {
            f.t0 = v;
        }
        if let Some(v) = self.inner_steps {
            f.inner_steps = v;
        }
        f.epsilon = self.epsilon;
        f.dist0 = self.dist0;
        if let Some(l) = self.lipschitz {
            f.lipschitz = l.0;
        }

        let b = &mut cfg.baseline;
        if let Some(v) = self.eta0 {
            b.eta0 = v;
        }
        b.local_steps = match self.local_steps {
            Some(t) => LocalSteps::Constant(t),
            None => LocalSteps::Linear {
                t0: self.t0.unwrap_or(1.0),
            },
        };
        if let Some(p) = self.comm_prob {
            b.prob_rule = ProbRule::Constant(p);
        }
        if let Some(c) = self.step_counter {
            b.step_counter = c.0;
        }
        b.max_iterations = self.max_iterations;

        let r = &mut cfg.reference;
        if let Some(v) = self.target_accuracy {
            r.target_accuracy = v;
        }
        if let Some(v) = self.max_restarts {
            r.max_restarts = v;
        }
        if let Some(v) = self.max_steps_per_restart {
            r.max_steps_per_restart = v;
        }
        cfg
    }

    pub fn sweep_grid(&self) -> Vec<f64> {
        match (&self.grid, self.powers) {
            (Some(g), _) => g.0.clone(),
            (None, Some(Powers(lo, hi))) => powers_of_ten(lo, hi),
            (None, None) => powers_of_ten(-2, 2),
        }
    }
}
