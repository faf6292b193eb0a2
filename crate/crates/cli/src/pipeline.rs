//! Steps shared by the commands: load a graph, split it, train, evaluate.

use std::fmt::Write as _;
use std::path::Path;

use hgat_core::atomic::write_atomic;
use hgat_core::features::{encode_graph, FeatureConfig, FeatureSet};
use hgat_core::graph::{load_graph, HinGraph};
use hgat_core::metrics::{confusion, MetricsReport};
use hgat_core::model::{HgatConfig, HgatParams, SchemaMode, Task};
use hgat_core::train::{
    evaluate, fit, format_history, make_splits, save_checkpoint, target_labels, Checkpoint,
    EpochRecord, Evaluation, FitOptions, Fold, LabeledSet,
};

use crate::config::{RunConfig, HISTORY_FILE, METRICS_FILE};
use crate::error::CliError;

pub struct Data {
    pub graph: HinGraph,
    pub features: FeatureSet,
}

/// Loads the graph files, optionally collapses types, and encodes text.
pub fn load_data(cfg: &RunConfig) -> Result<Data, CliError> {
    let [schema, nodes, edges] = cfg.graph_paths()?;
    let graph = load_graph(&schema, &nodes, &edges)?;
    prepare(graph, cfg.homogeneous, &cfg.feature_config())
}

pub fn prepare(
    graph: HinGraph,
    homogeneous: bool,
    features: &FeatureConfig,
) -> Result<Data, CliError> {
    let graph = if homogeneous {
        graph.homogeneous()
    } else {
        graph
    };
    let features = encode_graph(&graph, features)?;
    Ok(Data { graph, features })
}

pub struct Splits {
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub test: LabeledSet,
}

impl Splits {
    pub fn get(&self, fold: Fold) -> &LabeledSet {
        match fold {
            Fold::Train => &self.train,
            Fold::Val => &self.val,
            Fold::Test => &self.test,
        }
    }
}

pub fn splits(graph: &HinGraph, task: Task, theta: f64, seed: u64) -> Result<Splits, CliError> {
    let labels = target_labels(graph, task)?;
    let labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    let plan = make_splits(labeled.len(), theta, seed)?;
    Ok(Splits {
        train: LabeledSet::select(&labels, &labeled, &plan.train()),
        val: LabeledSet::select(&labels, &labeled, &plan.val()),
        test: LabeledSet::select(&labels, &labeled, &plan.test()),
    })
}

/// Output class names: negative/positive group for binary, fine classes
/// otherwise.
pub fn class_names(graph: &HinGraph, task: Task) -> Result<Vec<String>, CliError> {
    let labels = graph.labels();
    match task {
        Task::Multiclass => Ok(labels.class_names.clone()),
        Task::Binary => labels
            .binary_names()
            .map(|n| n.iter().map(|s| s.to_string()).collect())
            .ok_or_else(|| {
                CliError::Config("binary task needs a binary grouping in the schema".into())
            }),
    }
}

pub fn fold_name(fold: Fold) -> &'static str {
    match fold {
        Fold::Train => "train",
        Fold::Val => "val",
        Fold::Test => "test",
    }
}

pub fn report(
    eval: &Evaluation,
    set: &LabeledSet,
    names: &[String],
    task: Task,
    fold: Fold,
) -> Result<MetricsReport, CliError> {
    let predicted: Vec<usize> = eval.predictions.iter().map(|p| p.class).collect();
    let cm = confusion(&set.labels, &predicted, names.len())?;
    Ok(MetricsReport::new(
        &task.to_string(),
        fold_name(fold),
        eval.loss,
        names,
        &cm,
    )?)
}

pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub test: MetricsReport,
}

pub fn train(cfg: &RunConfig, data: &Data) -> Result<TrainResult, CliError> {
    cfg.validate()?;
    let names = class_names(&data.graph, cfg.task)?;
    let model = cfg.model_config(names.len());
    let s = splits(&data.graph, cfg.task, cfg.theta, cfg.seed_split)?;
    let options = FitOptions {
        model: model.clone(),
        train: cfg.train_config(),
        schema: cfg.schema_mode(),
        init_seed: cfg.seed_init,
        train_seed: cfg.seed_train,
    };
    let out = fit(&data.graph, &data.features, &s.train, &s.val, &options)?;
    let eval = evaluate(
        &data.graph,
        &data.features,
        &out.params,
        &model,
        &s.test,
        cfg.schema_mode(),
    )?;
    let test = report(&eval, &s.test, &names, cfg.task, Fold::Test)?;
    Ok(TrainResult {
        checkpoint: Checkpoint {
            config: model,
            params: out.params,
            fingerprints: data.features.fingerprints(),
            best_val_loss: out.best_val_loss,
            epoch: out.best_epoch,
            run: cfg.run_info(),
        },
        history: out.history,
        test,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Writes the history, metrics report and checkpoint.
pub fn write_train_artifacts(
    out: &Path,
    checkpoint: &Path,
    result: &TrainResult,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;
    write(
        &out.join(HISTORY_FILE),
        format_history(&result.history).as_bytes(),
    )?;
    write(&out.join(METRICS_FILE), result.test.to_text().as_bytes())?;
    if let Some(dir) = checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    }
    save_checkpoint(checkpoint, &result.checkpoint)?;
    Ok(())
}

/// Evaluates stored parameters on one fold.
pub fn evaluate_fold(
    data: &Data,
    config: &HgatConfig,
    params: &HgatParams,
    splits: &Splits,
    fold: Fold,
    mode: SchemaMode,
) -> Result<(Evaluation, MetricsReport), CliError> {
    let names = class_names(&data.graph, config.task)?;
    let set = splits.get(fold);
    let eval = evaluate(&data.graph, &data.features, params, config, set, mode)?;
    let rep = report(&eval, set, &names, config.task, fold)?;
    Ok((eval, rep))
}

/// `id<TAB>logit...` per evaluated target, full precision.
pub fn format_logits(graph: &HinGraph, eval: &Evaluation) -> String {
    let nodes = graph.nodes_of(graph.schema().target());
    let mut out = String::new();
    for (i, p) in eval.predictions.iter().enumerate() {
        out.push_str(&nodes[p.node].id);
        for v in eval.logits.row(i) {
            write!(out, "\t{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write(path, text.as_bytes())
}
