use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icp_core::forest::{FeaturesPerSplit, ForestConfig};
use serde::Serialize;

use crate::UsageError;

/// Seed used when `--seed` is not given, so casual runs are reproducible.
pub const DEFAULT_SEED: u64 = 20_231_104;

#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "icp", version, about = "Invariant causal prediction toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Directory receiving report.json and command outputs.
    #[arg(long, global = true, default_value = "icp-out")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long, global = true, env = "ICP_THREADS")]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub forest: ForestArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ForestArgs {
    #[arg(long, global = true, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, global = true, default_value_t = 10)]
    pub max_depth: usize,
    #[arg(long, global = true, default_value_t = 2)]
    pub min_samples_split: usize,
    /// `sqrt`, `all` or a fixed count.
    #[arg(long, global = true, default_value = "sqrt")]
    pub features_per_split: String,
    #[arg(long, global = true)]
    pub no_bootstrap: bool,
    #[arg(long, global = true)]
    pub no_class_weighting: bool,
}

impl ForestArgs {
    pub fn config(&self, seed: u64) -> Result<ForestConfig, UsageError> {
        let features_per_split = match self.features_per_split.as_str() {
            "sqrt" => FeaturesPerSplit::Sqrt,
            "all" => FeaturesPerSplit::All,
            other => FeaturesPerSplit::Fixed(
                other
                    .parse()
                    .ok()
                    .filter(|&m| m > 0)
                    .ok_or_else(|| UsageError(format!("invalid --features-per-split {other:?}")))?,
            ),
        };
        Ok(ForestConfig {
            n_trees: self.trees,
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
            features_per_split,
            bootstrap: !self.no_bootstrap,
            class_weighting: !self.no_class_weighting,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeArg {
    Event,
    Spatial,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FoldArgs {
    #[arg(long, value_enum, default_value_t = SchemeArg::Event)]
    pub scheme: SchemeArg,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Event coordinates (event_id,lat,lon); otherwise taken from env_lat/env_lon.
    #[arg(long)]
    pub coords: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum Command {
    /// Aggregate per-pixel grids into a feature table.
    Aggregate {
        #[arg(long)]
        grids: PathBuf,
        /// Event coordinates (event_id,lat,lon).
        #[arg(long)]
        events: PathBuf,
        /// Observation metadata (obs_id,event_id,label,env_*).
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign events to cross-validation folds.
    Folds {
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        folds: FoldArgs,
    },
    /// Greedy backward elimination.
    Greedy {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[command(flatten)]
        folds: FoldArgs,
        /// Also compute event/spatial generalization curves along the trace.
        #[arg(long)]
        curve: bool,
        #[arg(long, default_value_t = 3)]
        curve_seeds: usize,
    },
    /// Test every subset of the base groups above a minimum size.
    Exhaustive {
        #[arg(long)]
        features: PathBuf,
        /// Comma-separated groups; all groups when omitted.
        #[arg(long, value_delimiter = ',')]
        base: Option<Vec<String>>,
        #[arg(long)]
        min_size: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[command(flatten)]
        folds: FoldArgs,
    },
    /// Test unions of clusters of groups.
    ClusterIcp {
        #[arg(long)]
        features: PathBuf,
        /// JSON list of group-name lists.
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        min_size: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[command(flatten)]
        folds: FoldArgs,
    },
    /// Normalized HSIC between groups and threshold clusters.
    Hsic {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        threshold: f64,
        #[arg(long, value_delimiter = ',')]
        groups: Option<Vec<String>>,
    },
    /// Sample a synthetic table from a model spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        events: usize,
        #[arg(long)]
        obs: usize,
    },
    /// Monte-Carlo coverage of exhaustive ICP on a synthetic model.
    Coverage {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        min_size: usize,
        #[arg(long, default_value_t = 50)]
        events: usize,
        #[arg(long, default_value_t = 10)]
        obs: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Aggregate { .. } => "aggregate",
            Command::Folds { .. } => "folds",
            Command::Greedy { .. } => "greedy",
            Command::Exhaustive { .. } => "exhaustive",
            Command::ClusterIcp { .. } => "cluster-icp",
            Command::Hsic { .. } => "hsic",
            Command::Synth { .. } => "synth",
            Command::Coverage { .. } => "coverage",
        }
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        let mut v = Vec::new();
        match self {
            Command::Aggregate { grids, events, obs, out } => v.extend([grids, events, obs, out]),
            Command::Folds { features, folds }
            | Command::Greedy { features, folds, .. }
            | Command::Exhaustive { features, folds, .. } => {
                v.push(features);
                v.extend(folds.coords.as_mut());
            }
            Command::ClusterIcp { features, clusters, folds, .. } => {
                v.extend([features, clusters]);
                v.extend(folds.coords.as_mut());
            }
            Command::Hsic { features, .. } => v.push(features),
            Command::Synth { spec, .. } | Command::Coverage { spec, .. } => v.push(spec),
        }
        v
    }

    fn alpha(&self) -> Option<f64> {
        match self {
            Command::Greedy { alpha, .. }
            | Command::Exhaustive { alpha, .. }
            | Command::ClusterIcp { alpha, .. }
            | Command::Coverage { alpha, .. } => Some(*alpha),
            _ => None,
        }
    }
}

impl Cli {
    /// Makes every path absolute and checks cross-flag constraints.
    pub fn resolve(mut self) -> Result<Self, UsageError> {
        let absolute = |p: &PathBuf| std::path::absolute(p).map_err(|e| UsageError(format!("{}: {e}", p.display())));
        self.common.out_dir = absolute(&self.common.out_dir)?;
        for p in self.command.paths_mut() {
            *p = absolute(p)?;
        }
        if let Some(a) = self.command.alpha() {
            if !(a > 0.0 && a < 1.0) {
                return Err(UsageError(format!("alpha {a} outside (0, 1)")));
            }
        }
        if self.common.threads == Some(0) {
            return Err(UsageError("--threads must be positive".into()));
        }
        self.common.forest.config(self.common.seed)?;
        Ok(self)
    }
}
