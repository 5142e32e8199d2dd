//! Command-line flags, the JSON configuration file that mirrors them, and
//! the resolved run configuration.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ratecate::data::Schema;
use ratecate::pipeline::Method;
use ratecate::sim::DgpName;
use ratecate::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 20240101;

#[derive(Debug, Parser)]
#[command(name = "ratecate", version, about = "Ratio-based CATE estimation and validation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train CATE scores on a dataset.
    Fit(FitArgs),
    /// Validate a score on a held-out dataset.
    Validate(ValidateArgs),
    /// Run a Monte-Carlo study or export a simulated dataset.
    Simulate(SimulateArgs),
    /// Univariate confounding example.
    Toy(ToyArgs),
    /// Property checks on exactly computable populations.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    Glm,
    Boost,
    Rmst,
    Poisson,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file whose keys mirror the long flags (snake_case).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Training {
    /// Comma-separated list of contrast, tworeg, naive, boost.
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub learner: Option<Learner>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub partition_replicates: Option<usize>,
    /// Symmetric contrast equation (default).
    #[arg(long, overrides_with = "no_symmetric")]
    pub symmetric: bool,
    #[arg(long)]
    pub no_symmetric: bool,
}

impl Training {
    fn symmetric(&self) -> Option<bool> {
        if self.no_symmetric {
            Some(false)
        } else if self.symmetric {
            Some(true)
        } else {
            None
        }
    }
}

#[derive(Debug, Args)]
pub struct Outcome {
    /// Treat the data as right-censored event times.
    #[arg(long)]
    pub survival: bool,
    /// RMTL horizon; required with --survival.
    #[arg(long)]
    pub tau: Option<f64>,
    /// JSON column mapping.
    #[arg(long, value_name = "FILE")]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub outcome: Outcome,
    #[command(flatten)]
    pub training: Training,
    /// Also score the rows of this file (covariate columns only needed).
    #[arg(long, value_name = "FILE")]
    pub predict: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub outcome: Outcome,
    /// CSV with one score per input row.
    #[arg(long, value_name = "FILE")]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub score_column: Option<String>,
    /// Comma-separated fractions in (0, 1].
    #[arg(long, value_delimiter = ',')]
    pub q_grid: Option<Vec<f64>>,
    /// Simulation setting that generated the input; adds the true subgroup
    /// ratio of each curve point.
    #[arg(long)]
    pub oracle: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub setting: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[command(flatten)]
    pub training: Training,
    #[arg(long, value_delimiter = ',')]
    pub q_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub oracle_draws: Option<usize>,
    /// Write one simulated dataset of size --n to this CSV instead of
    /// running a study.
    #[arg(long, value_name = "FILE")]
    pub export: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    /// Draw Z from the same law in both arms.
    #[arg(long)]
    pub randomized: bool,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Random populations for the monotonicity check.
    #[arg(long)]
    pub populations: Option<usize>,
    /// Random perturbation directions for the orthogonality check.
    #[arg(long)]
    pub directions: Option<usize>,
    /// Sample size for the hazard-ratio check.
    #[arg(long)]
    pub n: Option<usize>,
}

/// Configuration file. Every key is optional and mirrors a long flag.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub method: Option<Vec<String>>,
    pub learner: Option<Learner>,
    pub folds: Option<usize>,
    pub partition_replicates: Option<usize>,
    pub symmetric: Option<bool>,
    pub seed: Option<u64>,
    pub survival: Option<bool>,
    pub tau: Option<f64>,
    pub q_grid: Option<Vec<f64>>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub predict: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub score_column: Option<String>,
    pub oracle: Option<String>,
    pub setting: Option<String>,
    pub n: Option<usize>,
    pub replicates: Option<usize>,
    pub oracle_draws: Option<usize>,
    pub export: Option<PathBuf>,
    pub randomized: Option<bool>,
    pub populations: Option<usize>,
    pub directions: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::input(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OutcomeMode {
    Count,
    Survival { tau: f64 },
}

/// Fully resolved settings of one invocation; its JSON form is hashed into
/// the provenance of every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub out: PathBuf,
    pub input: Option<PathBuf>,
    pub schema: Schema,
    pub outcome: OutcomeMode,
    pub methods: Vec<Method>,
    pub learner: Option<Learner>,
    pub folds: usize,
    pub partition_replicates: usize,
    pub symmetric: bool,
    pub q_grid: Option<Vec<f64>>,
    pub predict: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub score_column: Option<String>,
    pub oracle: Option<DgpName>,
    pub setting: Option<DgpName>,
    pub n: Option<usize>,
    pub replicates: Option<usize>,
    pub oracle_draws: Option<usize>,
    pub export: Option<PathBuf>,
    pub randomized: bool,
    pub populations: Option<usize>,
    pub directions: Option<usize>,
}

impl RunConfig {
    fn base(command: &'static str, common: &Common, file: &FileConfig) -> Self {
        RunConfig {
            command,
            seed: common.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            jobs: common.jobs.or(file.jobs),
            out: common.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("ratecate-out")),
            input: None,
            schema: Schema::default(),
            outcome: OutcomeMode::Count,
            methods: Vec::new(),
            learner: file.learner,
            folds: file.folds.unwrap_or(7),
            partition_replicates: file.partition_replicates.unwrap_or(3),
            symmetric: file.symmetric.unwrap_or(true),
            q_grid: None,
            predict: None,
            scores: None,
            score_column: None,
            oracle: None,
            setting: None,
            n: file.n,
            replicates: file.replicates,
            oracle_draws: file.oracle_draws,
            export: None,
            randomized: false,
            populations: None,
            directions: None,
        }
    }

    fn training(&mut self, t: &Training, file: &FileConfig, default_methods: &[Method]) -> Result<()> {
        self.methods = match t.method.as_ref().or(file.method.as_ref()) {
            Some(names) => names.iter().map(|m| m.trim().parse()).collect::<Result<_>>()?,
            None => default_methods.to_vec(),
        };
        if self.methods.is_empty() {
            return Err(Error::input("at least one method is required"));
        }
        self.learner = t.learner.or(self.learner);
        if let Some(k) = t.folds {
            self.folds = k;
        }
        if let Some(p) = t.partition_replicates {
            self.partition_replicates = p;
        }
        if let Some(s) = t.symmetric() {
            self.symmetric = s;
        }
        if self.folds < 2 {
            return Err(Error::input("--folds must be at least 2"));
        }
        if self.partition_replicates == 0 {
            return Err(Error::input("--partition-replicates must be at least 1"));
        }
        Ok(())
    }

    fn outcome(&mut self, o: &Outcome, file: &FileConfig) -> Result<()> {
        let survival = o.survival || file.survival.unwrap_or(false);
        let tau = o.tau.or(file.tau);
        self.outcome = match (survival, tau) {
            (true, Some(tau)) if tau > 0.0 && tau.is_finite() => OutcomeMode::Survival { tau },
            (true, Some(tau)) => return Err(Error::input(format!("--tau must be positive, got {tau}"))),
            (true, None) => return Err(Error::input("--survival requires --tau")),
            (false, Some(_)) => return Err(Error::input("--tau is only meaningful with --survival")),
            (false, None) => OutcomeMode::Count,
        };
        if let Some(path) = o.schema.as_ref().or(file.schema.as_ref()) {
            let path = existing(path, "schema")?;
            let text = std::fs::read_to_string(&path)?;
            self.schema = serde_json::from_str(&text)
                .map_err(|e| Error::input(format!("schema {}: {e}", path.display())))?;
        }
        Ok(())
    }

    pub fn fit(args: &FitArgs) -> Result<Self> {
        let file = FileConfig::load(args.common.config.as_deref())?;
        let mut run = Self::base("fit", &args.common, &file);
        run.input = Some(required(args.input.as_ref().or(file.input.as_ref()), "input")?);
        run.outcome(&args.outcome, &file)?;
        run.training(&args.training, &file, &[Method::Contrast, Method::Tworeg, Method::Naive])?;
        run.predict = args.predict.clone().or_else(|| file.predict.clone()).map(|p| existing(&p, "predict")).transpose()?;
        Ok(run)
    }

    pub fn validate(args: &ValidateArgs) -> Result<Self> {
        let file = FileConfig::load(args.common.config.as_deref())?;
        let mut run = Self::base("validate", &args.common, &file);
        run.input = Some(required(args.input.as_ref().or(file.input.as_ref()), "input")?);
        run.scores = Some(required(args.scores.as_ref().or(file.scores.as_ref()), "scores")?);
        run.outcome(&args.outcome, &file)?;
        run.score_column = Some(
            args.score_column
                .clone()
                .or_else(|| file.score_column.clone())
                .unwrap_or_else(|| Method::Contrast.as_str().to_string()),
        );
        run.q_grid = args.q_grid.clone().or_else(|| file.q_grid.clone());
        run.oracle = args.oracle.as_ref().or(file.oracle.as_ref()).map(|s| s.parse()).transpose()?;
        Ok(run)
    }

    pub fn simulate(args: &SimulateArgs) -> Result<Self> {
        let file = FileConfig::load(args.common.config.as_deref())?;
        let mut run = Self::base("simulate", &args.common, &file);
        let setting = args
            .setting
            .as_ref()
            .or(file.setting.as_ref())
            .ok_or_else(|| Error::input("--setting is required"))?;
        run.setting = Some(setting.parse()?);
        run.n = args.n.or(file.n);
        run.replicates = args.replicates.or(file.replicates);
        run.oracle_draws = args.oracle_draws.or(file.oracle_draws);
        run.q_grid = args.q_grid.clone().or_else(|| file.q_grid.clone());
        run.export = args.export.clone().or_else(|| file.export.clone());
        run.training(&args.training, &file, &Method::ALL)?;
        Ok(run)
    }

    pub fn toy(args: &ToyArgs) -> Result<Self> {
        let file = FileConfig::load(args.common.config.as_deref())?;
        let mut run = Self::base("toy", &args.common, &file);
        run.setting = Some(DgpName::ToyConfounding);
        run.n = args.n.or(file.n);
        run.randomized = args.randomized || file.randomized.unwrap_or(false);
        Ok(run)
    }

    pub fn check(args: &CheckArgs) -> Result<Self> {
        let file = FileConfig::load(args.common.config.as_deref())?;
        let mut run = Self::base("check", &args.common, &file);
        run.populations = args.populations.or(file.populations);
        run.directions = args.directions.or(file.directions);
        run.n = args.n.or(file.n);
        Ok(run)
    }

    pub fn tau(&self) -> Option<f64> {
        match self.outcome {
            OutcomeMode::Count => None,
            OutcomeMode::Survival { tau } => Some(tau),
        }
    }
}

fn required(path: Option<&PathBuf>, flag: &str) -> Result<PathBuf> {
    let path = path.ok_or_else(|| Error::input(format!("--{flag} is required")))?;
    existing(path, flag)
}

fn existing(path: &Path, flag: &str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path.to_path_buf())
    } else {
        Err(Error::input(format!("--{flag}: no such file {}", path.display())))
    }
}
