//! Run configuration: a flat TOML file whose keys can each be overridden
//! by the command-line flag of the same name (`seed_split` ↔ `--seed-split`).

use std::path::{Path, PathBuf};

use clap::Args;
use hgat_core::features::{FeatureConfig, VocabConfig};
use hgat_core::model::{HgatConfig, SchemaMode, Task};
use hgat_core::ndiff::Activation;
use hgat_core::synth::{EDGES_FILE, NODES_FILE, SCHEMA_FILE};
use hgat_core::train::{RunInfo, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const THETAS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
pub const CHECKPOINT_FILE: &str = "checkpoint.hgat";
pub const HISTORY_FILE: &str = "history.tsv";
pub const METRICS_FILE: &str = "metrics.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory holding `schema.toml`, `nodes.tsv` and `edges.tsv`.
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    /// Defaults to `<out>/checkpoint.hgat`.
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub task: Task,
    pub theta: f64,
    pub seed_split: u64,
    pub seed_init: u64,
    pub seed_train: u64,
    pub hidden: usize,
    pub heads: usize,
    /// Defaults to `8 * heads`.
    pub schema_dim: Option<usize>,
    pub leaky_slope: f64,
    pub aggregation: Activation,
    pub dropout: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_df: usize,
    pub max_features: usize,
    pub lowercase: bool,
    pub ablate_schema: bool,
    pub homogeneous: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = HgatConfig::new(Task::Multiclass, 2);
        let train = TrainConfig::default();
        let features = FeatureConfig::default().vocab;
        Self {
            data: None,
            schema: None,
            nodes: None,
            edges: None,
            checkpoint: None,
            out: PathBuf::from("out"),
            task: Task::Multiclass,
            theta: 0.8,
            seed_split: 0,
            seed_init: 0,
            seed_train: 0,
            hidden: model.hidden,
            heads: model.heads,
            schema_dim: None,
            leaky_slope: model.leaky_slope,
            aggregation: model.aggregation,
            dropout: model.dropout,
            learning_rate: train.learning_rate,
            beta1: train.beta1,
            beta2: train.beta2,
            epsilon: train.epsilon,
            weight_decay: train.weight_decay,
            max_epochs: train.max_epochs,
            patience: train.patience,
            min_df: features.min_df,
            max_features: features.max_features,
            lowercase: features.lowercase,
            ablate_schema: false,
            homogeneous: false,
        }
    }
}

/// Flags shared by every command that reads a graph.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration; flags take precedence over its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub nodes: Option<PathBuf>,
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub seed_split: Option<u64>,
    #[arg(long)]
    pub seed_init: Option<u64>,
    #[arg(long)]
    pub seed_train: Option<u64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub schema_dim: Option<usize>,
    #[arg(long)]
    pub leaky_slope: Option<f64>,
    #[arg(long)]
    pub aggregation: Option<Activation>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub min_df: Option<usize>,
    #[arg(long)]
    pub max_features: Option<usize>,
    #[arg(long)]
    pub lowercase: Option<bool>,
    /// Fuse schema nodes with equal weights instead of learned attention.
    #[arg(long)]
    pub ablate_schema: bool,
    /// Collapse all node and edge types into one before training.
    #[arg(long)]
    pub homogeneous: bool,
}

macro_rules! take {
    ($cfg:ident, $o:ident, $($field:ident),*) => {
        $(if let Some(v) = &$o.$field {
            $cfg.$field = v.clone();
        })*
    };
}

impl RunConfig {
    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.data,
            &mut cfg.schema,
            &mut cfg.nodes,
            &mut cfg.edges,
            &mut cfg.checkpoint,
        ]
        .into_iter()
        .flatten()
        {
            *p = base.join(&*p);
        }
        cfg.out = base.join(&cfg.out);
        Ok(cfg)
    }

    /// Config file (if any) with flags applied on top.
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &o.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        cfg.apply(o);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let cfg = self;
        if let Some(v) = &o.data {
            cfg.data = Some(v.clone());
        }
        if let Some(v) = &o.schema {
            cfg.schema = Some(v.clone());
        }
        if let Some(v) = &o.nodes {
            cfg.nodes = Some(v.clone());
        }
        if let Some(v) = &o.edges {
            cfg.edges = Some(v.clone());
        }
        if let Some(v) = &o.checkpoint {
            cfg.checkpoint = Some(v.clone());
        }
        if let Some(v) = o.schema_dim {
            cfg.schema_dim = Some(v);
        }
        take!(
            cfg,
            o,
            out,
            task,
            theta,
            seed_split,
            seed_init,
            seed_train,
            hidden,
            heads,
            leaky_slope,
            aggregation,
            dropout,
            learning_rate,
            beta1,
            beta2,
            epsilon,
            weight_decay,
            max_epochs,
            patience,
            min_df,
            max_features,
            lowercase
        );
        cfg.ablate_schema |= o.ablate_schema;
        cfg.homogeneous |= o.homogeneous;
    }

    /// Takes the split, feature and graph-shape settings a checkpoint was
    /// trained with.
    pub fn adopt_run(&mut self, run: &RunInfo, task: Task) {
        if let Some(theta) = run.theta {
            self.theta = theta;
        }
        self.task = task;
        self.seed_split = run.split_seed;
        self.seed_init = run.init_seed;
        self.seed_train = run.train_seed;
        self.ablate_schema = run.ablate_schema;
        self.homogeneous = run.homogeneous;
        self.min_df = run.features.vocab.min_df;
        self.max_features = run.features.vocab.max_features;
        self.lowercase = run.features.vocab.lowercase;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !THETAS.iter().any(|t| (t - self.theta).abs() < 1e-9) {
            return Err(CliError::Config(format!(
                "theta must be one of 0.2, 0.4, 0.6, 0.8 (got {})",
                self.theta
            )));
        }
        self.graph_paths()?;
        Ok(())
    }

    /// Schema, nodes and edges files.
    pub fn graph_paths(&self) -> Result<[PathBuf; 3], CliError> {
        let pick = |explicit: &Option<PathBuf>, file: &str, key: &str| {
            explicit
                .clone()
                .or_else(|| self.data.as_ref().map(|d| d.join(file)))
                .ok_or_else(|| {
                    CliError::Config(format!("no `{key}` file given (set `data` or `{key}`)"))
                })
        };
        Ok([
            pick(&self.schema, SCHEMA_FILE, "schema")?,
            pick(&self.nodes, NODES_FILE, "nodes")?,
            pick(&self.edges, EDGES_FILE, "edges")?,
        ])
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join(CHECKPOINT_FILE))
    }

    pub fn model_config(&self, num_classes: usize) -> HgatConfig {
        HgatConfig {
            hidden: self.hidden,
            heads: self.heads,
            schema_dim: self.schema_dim.unwrap_or(8 * self.heads),
            num_classes,
            task: self.task,
            leaky_slope: self.leaky_slope,
            aggregation: self.aggregation,
            dropout: self.dropout,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
            max_epochs: self.max_epochs,
            patience: self.patience,
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            vocab: VocabConfig {
                lowercase: self.lowercase,
                max_features: self.max_features,
                min_df: self.min_df,
            },
        }
    }

    pub fn schema_mode(&self) -> SchemaMode {
        if self.ablate_schema {
            SchemaMode::Uniform
        } else {
            SchemaMode::Learned
        }
    }

    pub fn run_info(&self) -> RunInfo {
        RunInfo {
            theta: Some(self.theta),
            split_seed: self.seed_split,
            init_seed: self.seed_init,
            train_seed: self.seed_train,
            ablate_schema: self.ablate_schema,
            homogeneous: self.homogeneous,
            features: self.feature_config(),
        }
    }
}
