//! Command-line front end. `run` returns the process exit code:
//! 0 on success, 2 for usage errors, 3 for data errors.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use stresswatch_core::dataset::{FeatureMatrix, FeatureSet, FeaturizeConfig};
use stresswatch_core::explain::{beeswarm_records, explain_rows, rank_mean_abs};
use stresswatch_core::learn::{
    fit_pipeline, grouped_cv, personalization_eval, prepare_split, Model, ModelSpec, BOOST_DEPTH,
};

use crate::formats::{self, ImputationSettings, MatrixSidecar, RankingEntry};
use crate::manifest::{self, sha256_hex, RunManifest};
use crate::pipeline;
use crate::sim::{self, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_FOREST_DEPTH: usize = 10;
pub const MAX_BACKGROUND: usize = 128;

#[derive(Debug, Parser)]
#[command(name = "stresswatch", version, about = "Context-aware stress monitoring toolkit")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// RNG seed; simulate falls back to the config seed, other commands to 42.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the deployment simulator and write raw study files.
    Simulate {
        /// Overrides the configured cohort size.
        #[arg(long)]
        users: Option<usize>,
        /// Overrides the configured study length.
        #[arg(long)]
        days: Option<usize>,
    },
    /// Turn raw study files into a labeled feature matrix.
    Featurize {
        /// Directory holding bursts.jsonl, context.jsonl and ema.csv.
        #[arg(long)]
        input: PathBuf,
    },
    /// Grouped cross-validation plus a final model fitted on all users.
    TrainEval {
        /// Feature matrix CSV.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Number of user-grouped folds.
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Shapley attributions of a saved tree model.
    Explain {
        /// Feature matrix CSV.
        #[arg(long)]
        input: PathBuf,
        /// model.json written by train-eval.
        #[arg(long = "model-file")]
        model_file: PathBuf,
        /// Explain only the first N rows.
        #[arg(long)]
        max_rows: Option<usize>,
    },
    /// Before/after scores when a user's own data joins training.
    Personalize {
        /// Feature matrix CSV.
        #[arg(long)]
        input: PathBuf,
        /// Target user; repeat for several.
        #[arg(long, required = true)]
        user: Vec<String>,
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Rf,
    Knn,
    XgbLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureChoice {
    All,
    Ppg,
    Context,
}

impl From<FeatureChoice> for FeatureSet {
    fn from(c: FeatureChoice) -> Self {
        match c {
            FeatureChoice::All => FeatureSet::All,
            FeatureChoice::Ppg => FeatureSet::Ppg,
            FeatureChoice::Context => FeatureSet::Context,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "rf")]
    pub model: ModelChoice,
    /// Maximum tree depth (rf defaults to 10).
    #[arg(long)]
    pub depth: Option<usize>,
    /// Neighbors for the knn model.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "all")]
    pub features: FeatureChoice,
    /// Keep this many top-ranked features instead of tuning the count.
    #[arg(long = "select-top")]
    pub select_top: Option<usize>,
}

impl ModelArgs {
    pub fn spec(&self) -> Result<ModelSpec, CliError> {
        let spec = match self.model {
            ModelChoice::Rf => ModelSpec::random_forest(self.depth.unwrap_or(DEFAULT_FOREST_DEPTH)),
            ModelChoice::XgbLike => ModelSpec::boosted(self.depth.unwrap_or(BOOST_DEPTH)),
            ModelChoice::Knn => ModelSpec::knn(self.k),
        };
        if spec.kind != stresswatch_core::learn::ModelKind::Knn && spec.depth == 0 {
            return Err(CliError::Usage("--depth must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(CliError::Usage("--k must be at least 1".into()));
        }
        if self.select_top == Some(0) {
            return Err(CliError::Usage("--select-top must be at least 1".into()));
        }
        Ok(spec.with_select_top(self.select_top))
    }
}

/// Settings file; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub simulation: SimConfig,
    pub featurize: FeaturizeConfig,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }

    fn data(e: impl Display) -> Self {
        CliError::Data(e.to_string())
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let raw: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, raw) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    let Some(p) = path else {
        return Ok(Config::default());
    };
    let text = fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
}

fn load_features(path: &Path, set: FeatureSet) -> Result<FeatureMatrix, CliError> {
    let m = formats::read_matrix(path).map_err(CliError::data)?;
    m.select_columns(&set.columns()).map_err(CliError::data)
}

struct Outputs<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl Outputs<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }
}

pub fn execute(cli: &Cli, args: Vec<String>) -> Result<(), CliError> {
    let mut config = load_config(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(match cli.command {
        Command::Simulate { .. } => config.simulation.seed,
        _ => DEFAULT_SEED,
    });
    fs::create_dir_all(&cli.out).map_err(|e| CliError::Data(format!("{}: {e}", cli.out.display())))?;
    let mut out = Outputs {
        dir: &cli.out,
        written: Vec::new(),
    };
    let mut inputs: Vec<PathBuf> = cli.config.iter().cloned().collect();
    let command = match &cli.command {
        Command::Simulate { users, days } => {
            if let Some(u) = users {
                config.simulation.n_users = *u;
            }
            if let Some(d) = days {
                config.simulation.days = *d;
            }
            config.simulation.seed = seed;
            let res = sim::run_simulation(&config.simulation).map_err(CliError::data)?;
            let bursts: Vec<_> = res.bursts().cloned().collect();
            formats::write_bursts(&out.path("bursts.jsonl"), &bursts).map_err(CliError::data)?;
            drop(bursts);
            let ctx: Vec<_> = res.context().cloned().collect();
            formats::write_context(&out.path("context.jsonl"), &ctx).map_err(CliError::data)?;
            let emas: Vec<_> = res.emas().cloned().collect();
            formats::write_ema(&out.path("ema.csv"), &emas).map_err(CliError::data)?;
            let trig: Vec<_> = res.triggers().cloned().collect();
            formats::write_triggers(&out.path("triggers.jsonl"), &trig).map_err(CliError::data)?;
            formats::write_latent(&out.path("latent.csv"), &res.latent()).map_err(CliError::data)?;
            "simulate"
        }
        Command::Featurize { input } => {
            for f in ["bursts.jsonl", "context.jsonl", "ema.csv"] {
                inputs.push(input.join(f));
            }
            let m = pipeline::featurize_dir(input, &config.featurize).map_err(CliError::data)?;
            formats::write_matrix(&out.path("features.csv"), &m).map_err(CliError::data)?;
            let spec = ModelSpec::random_forest(1);
            let side = MatrixSidecar::describe(
                &m,
                ImputationSettings {
                    k: spec.impute_k,
                    weighting: spec.impute_weighting,
                },
            );
            formats::write_json(&out.path("features.json"), &side).map_err(CliError::data)?;
            "featurize"
        }
        Command::TrainEval { input, model, folds } => {
            inputs.push(input.clone());
            let spec = model.spec()?;
            if *folds < 2 {
                return Err(CliError::Usage("--folds must be at least 2".into()));
            }
            let m = load_features(input, model.features.into())?;
            let report = grouped_cv(&m, &spec, *folds, seed).map_err(CliError::data)?;
            formats::write_report(&out.path("report.json"), &out.path("report.csv"), &report).map_err(CliError::data)?;
            let fitted = fit_pipeline(&m, &spec, seed).map_err(CliError::data)?;
            formats::write_json(&out.path("model.json"), &fitted.model).map_err(CliError::data)?;
            "train-eval"
        }
        Command::Explain {
            input,
            model_file,
            max_rows,
        } => {
            inputs.push(input.clone());
            inputs.push(model_file.clone());
            let model: Model = formats::read_json(model_file).map_err(CliError::data)?;
            let Some(ens) = model.as_ensemble() else {
                return Err(CliError::Usage("explain needs a tree-ensemble model".into()));
            };
            let m = formats::read_matrix(input).map_err(CliError::data)?.trainable();
            let spec = ModelSpec::random_forest(1);
            let (x, _) = prepare_split(&m, &FeatureMatrix::empty(m.columns.clone()), &spec).map_err(CliError::data)?;
            let cols: Vec<usize> = ens
                .feature_names
                .iter()
                .map(|n| m.column_index(n).ok_or_else(|| CliError::Data(format!("feature {n} missing from {}", input.display()))))
                .collect::<Result<_, _>>()?;
            let rows: Vec<Vec<f64>> = x.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nb = rows.len().min(MAX_BACKGROUND);
            let background: Vec<Vec<f64>> = sample(&mut rng, rows.len(), nb).into_iter().map(|i| rows[i].clone()).collect();
            let explained = &rows[..max_rows.unwrap_or(rows.len()).min(rows.len())];
            let ex = explain_rows(ens, explained, &background).map_err(CliError::data)?;
            let ranking: Vec<RankingEntry> = rank_mean_abs(&ex, ens.n_features())
                .into_iter()
                .map(|(f, v)| RankingEntry {
                    feature: ens.feature_names[f].clone(),
                    mean_abs_shap: v,
                })
                .collect();
            formats::write_json(&out.path("ranking.json"), &ranking).map_err(CliError::data)?;
            formats::write_beeswarm(&out.path("shap.csv"), &beeswarm_records(&ex, &ens.feature_names))
                .map_err(CliError::data)?;
            "explain"
        }
        Command::Personalize { input, user, model } => {
            inputs.push(input.clone());
            let spec = model.spec()?;
            let m = load_features(input, model.features.into())?;
            let reports = user
                .iter()
                .map(|u| personalization_eval(&m, u, &spec, seed))
                .collect::<Result<Vec<_>, _>>()
                .map_err(CliError::data)?;
            formats::write_json(&out.path("personalization.json"), &reports).map_err(CliError::data)?;
            "personalize"
        }
    };
    let config_json = serde_json::to_vec(&config).map_err(CliError::data)?;
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let output_refs: Vec<&Path> = out.written.iter().map(PathBuf::as_path).collect();
    let man = RunManifest {
        command: command.into(),
        args,
        config_hash: sha256_hex(&config_json),
        seed,
        inputs: manifest::digests(&input_refs).map_err(CliError::data)?,
        outputs: manifest::digests(&output_refs).map_err(CliError::data)?,
        versions: manifest::versions(),
    };
    formats::write_json(&cli.out.join("manifest.json"), &man).map_err(CliError::data)
}
