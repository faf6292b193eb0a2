//! Losses, Adam, fold splits and the full-batch training loop.

mod checkpoint;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureSet;
use crate::graph::HinGraph;
use crate::model::{
    self, check_inputs, forward_tape, init_params, predictions_from, ForwardOptions, HgatConfig,
    HgatParams, ModelError, ParamVars, Prediction, SchemaMode, Task,
};
use crate::ndiff::{NdiffError, Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RunInfo, CHECKPOINT_VERSION};

/// Probabilities are clamped into `[PROB_FLOOR, 1 − PROB_FLOOR]` before the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Number of folds; the last two are validation and test.
pub const FOLDS: usize = 10;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] NdiffError),
    #[error("split: {0}")]
    Split(String),
    #[error("labels: {0}")]
    Labels(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at epoch {epoch}; parameter norms: {}", format_norms(.norms))]
    NonFinite {
        what: &'static str,
        epoch: usize,
        norms: Vec<(String, f64)>,
    },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {message}")]
    Format {
        path: std::path::PathBuf,
        message: String,
    },
    #[error("vocabulary of `{node_type}` does not match the checkpoint (expected {expected}, found {found})")]
    Fingerprint {
        node_type: String,
        expected: String,
        found: String,
    },
}

fn format_norms(norms: &[(String, f64)]) -> String {
    norms
        .iter()
        .map(|(n, v)| format!("{n}={v:.4e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Assignment of labeled targets to folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    /// Fold of each labeled-target position.
    pub folds: Vec<usize>,
    /// Training uses folds `0..train_folds`.
    pub train_folds: usize,
    pub seed: u64,
}

pub const VAL_FOLD: usize = 8;
pub const TEST_FOLD: usize = 9;

/// Number of training folds for a training ratio θ ∈ {0.2, 0.4, 0.6, 0.8}.
pub fn train_folds_for(theta: f64) -> Result<usize, TrainError> {
    [0.2, 0.4, 0.6, 0.8]
        .iter()
        .position(|&t| (t - theta).abs() < 1e-9)
        .map(|i| 2 * (i + 1))
        .ok_or_else(|| {
            TrainError::Split(format!(
                "training ratio {theta} is not one of 0.2, 0.4, 0.6, 0.8"
            ))
        })
}

/// Seeded shuffle followed by round-robin assignment to ten folds.
pub fn make_splits(n: usize, theta: f64, seed: u64) -> Result<SplitPlan, TrainError> {
    if n < FOLDS {
        return Err(TrainError::Split(format!(
            "need at least {FOLDS} labeled targets, found {n}"
        )));
    }
    let train_folds = train_folds_for(theta)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (rank, &pos) in order.iter().enumerate() {
        folds[pos] = rank % FOLDS;
    }
    Ok(SplitPlan {
        folds,
        train_folds,
        seed,
    })
}

impl SplitPlan {
    fn positions(&self, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        (0..self.folds.len())
            .filter(|&i| keep(self.folds[i]))
            .collect()
    }

    pub fn train(&self) -> Vec<usize> {
        self.positions(|f| f < self.train_folds)
    }

    pub fn val(&self) -> Vec<usize> {
        self.positions(|f| f == VAL_FOLD)
    }

    pub fn test(&self) -> Vec<usize> {
        self.positions(|f| f == TEST_FOLD)
    }
}

/// Which part of a split to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Fold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Fold::Train),
            "val" => Ok(Fold::Val),
            "test" => Ok(Fold::Test),
            other => Err(format!(
                "unknown fold `{other}` (expected train, val or test)"
            )),
        }
    }
}

impl SplitPlan {
    pub fn fold(&self, fold: Fold) -> Vec<usize> {
        match fold {
            Fold::Train => self.train(),
            Fold::Val => self.val(),
            Fold::Test => self.test(),
        }
    }
}

/// Class index of every target node under `task`: the fine class for
/// multi-class, the grouped class (1 = positive) for binary.
pub fn target_labels(graph: &HinGraph, task: Task) -> Result<Vec<Option<usize>>, TrainError> {
    let labels = graph.labels();
    graph
        .nodes_of(graph.schema().target())
        .iter()
        .map(|n| match (task, n.label) {
            (_, None) => Ok(None),
            (Task::Multiclass, Some(l)) => Ok(Some(l)),
            (Task::Binary, Some(l)) => labels.binary_index(l).map(Some).ok_or_else(|| {
                TrainError::Labels(format!(
                    "class `{}` of `{}` has no binary grouping",
                    labels.class_names[l], n.id
                ))
            }),
        })
        .collect()
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// `−Σ (y ln p + (1−y) ln(1−p))` with `p` clamped.
pub fn binary_loss(p: &[f64], y: &[bool]) -> Result<f64, TrainError> {
    if p.len() != y.len() {
        return Err(TrainError::Labels(format!(
            "{} probabilities for {} labels",
            p.len(),
            y.len()
        )));
    }
    Ok(-p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            if y {
                clamp_prob(p).ln()
            } else {
                clamp_prob(1.0 - p).ln()
            }
        })
        .sum::<f64>())
}

/// `−Σ_i ln p[i, y_i]` with `p` clamped.
pub fn multiclass_loss(p: &Tensor, labels: &[usize]) -> Result<f64, TrainError> {
    if p.rows() != labels.len() {
        return Err(TrainError::Labels(format!(
            "{} probability rows for {} labels",
            p.rows(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= p.cols() {
            return Err(TrainError::Labels(format!(
                "label {y} out of range for {} classes",
                p.cols()
            )));
        }
        total -= clamp_prob(p.at(i, y)).ln();
    }
    Ok(total)
}

/// Summed negative log-likelihood recorded on the tape. `probabilities` is
/// `[n × classes]` (binary rows are `[1−p, p]`).
pub(crate) fn nll_on_tape<'t>(
    probabilities: Var<'t>,
    labels: &[usize],
) -> Result<Var<'t>, NdiffError> {
    let cells: Vec<(usize, usize)> = labels.iter().copied().enumerate().collect();
    Ok(probabilities
        .pick(&cells)?
        .clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
        .ln()
        .sum()
        .affine(-1.0, 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            max_epochs: 300,
            patience: 30,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be nonnegative");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        Ok(())
    }
}

/// First and second moments per array plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = shapes
            .into_iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Weight decay, when set, shrinks each
/// parameter by `lr · weight_decay` before the gradient step.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::Config(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(NdiffError::ShapeMismatch {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            }
            .into());
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    let decay = 1.0 - lr * config.weight_decay;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, (x, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            if config.weight_decay > 0.0 {
                *x *= decay;
            }
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            *x -= lr * mh / (vh.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

/// One line of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-example loss on the training targets before the update.
    pub train_loss: f64,
    /// Training accuracy before the update.
    pub train_accuracy: f64,
    /// Mean per-example loss on the validation targets after the update.
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// History as tab-separated text, one epoch per line.
pub fn format_history(history: &[EpochRecord]) -> String {
    history
        .iter()
        .map(|r| {
            format!(
                "{}\t{}\t{}\t{}\n",
                r.epoch, r.train_loss, r.val_loss, r.val_accuracy
            )
        })
        .collect()
}

/// Targets and their class indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledSet {
    pub targets: Vec<usize>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    /// Picks `positions` out of the labeled targets of `labels`.
    pub fn select(all: &[Option<usize>], labeled: &[usize], positions: &[usize]) -> Self {
        let targets: Vec<usize> = positions.iter().map(|&p| labeled[p]).collect();
        let labels = targets.iter().map(|&t| all[t].expect("labeled")).collect();
        Self { targets, labels }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean per-example loss.
    pub loss: f64,
    pub accuracy: f64,
    pub probabilities: Tensor,
    pub logits: Tensor,
    pub predictions: Vec<Prediction>,
}

/// Forward pass over a labeled set with loss and accuracy.
pub fn evaluate(
    graph: &HinGraph,
    features: &FeatureSet,
    params: &HgatParams,
    config: &HgatConfig,
    set: &LabeledSet,
    mode: SchemaMode,
) -> Result<Evaluation, TrainError> {
    let out = model::forward(graph, features, params, config, &set.targets, mode)?;
    let loss = multiclass_loss(&out.probabilities, &set.labels)?;
    let predictions = predictions_from(&out.probabilities, &set.targets);
    let correct = predictions
        .iter()
        .zip(&set.labels)
        .filter(|(p, &y)| p.class == y)
        .count();
    let n = set.len().max(1) as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        probabilities: out.probabilities,
        logits: out.logits,
        predictions,
    })
}

/// Summed loss over `set` and its gradient with respect to every parameter
/// array, in [`HgatParams::named`] order.
pub fn loss_and_gradients(
    graph: &HinGraph,
    features: &FeatureSet,
    params: &HgatParams,
    config: &HgatConfig,
    set: &LabeledSet,
    mode: SchemaMode,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    config.validate()?;
    check_inputs(graph, features, params, &set.targets)?;
    let tape = Tape::new();
    let pv = ParamVars::register(&tape, params, true);
    let fw = ForwardOptions {
        schema: mode,
        dropout_seed: None,
    };
    let out = forward_tape(&tape, graph, features, &pv, config, &set.targets, &fw)?;
    let loss = nll_on_tape(out.probabilities, &set.labels)?;
    let value = loss.value().data()[0];
    let g = tape.backward(loss)?;
    Ok((value, pv.all().into_iter().map(|v| g.wrt(v)).collect()))
}

/// Everything [`fit`] needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub model: HgatConfig,
    pub train: TrainConfig,
    pub schema: SchemaMode,
    pub init_seed: u64,
    /// Seeds dropout masks; unused when dropout is 0.
    pub train_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    /// Best-validation parameters, rounded to 32-bit storage.
    pub params: HgatParams,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochRecord>,
}

/// Full-batch training with early stopping on validation loss.
///
/// Validation is measured on parameters rounded to 32 bits, so the kept
/// parameters reproduce the recorded validation numbers after a checkpoint
/// round trip.
pub fn fit(
    graph: &HinGraph,
    features: &FeatureSet,
    train: &LabeledSet,
    val: &LabeledSet,
    options: &FitOptions,
) -> Result<FitOutcome, TrainError> {
    options.model.validate()?;
    options.train.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Split(
            "training and validation sets must be nonempty".into(),
        ));
    }
    let mut params = init_params(
        &options.model,
        graph.schema().node_types(),
        &features.dims(),
        options.init_seed,
    )?;
    check_inputs(graph, features, &params, &train.targets)?;
    check_inputs(graph, features, &params, &val.targets)?;
    let mut adam = AdamState::new(params.named().into_iter().map(|(_, t)| t));
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, HgatParams)> = None;
    let mut since_best = 0;

    for epoch in 1..=options.train.max_epochs {
        let (train_loss, train_accuracy, grads) = {
            let tape = Tape::new();
            let pv = ParamVars::register(&tape, &params, true);
            let fw = ForwardOptions {
                schema: options.schema,
                dropout_seed: Some(
                    options.train_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch as u64,
                ),
            };
            let out = forward_tape(
                &tape,
                graph,
                features,
                &pv,
                &options.model,
                &train.targets,
                &fw,
            )?;
            let correct = {
                let probs = out.probabilities.value();
                train
                    .labels
                    .iter()
                    .enumerate()
                    .filter(|&(i, &y)| model::argmax(probs.row(i)) == y)
                    .count()
            };
            let loss = nll_on_tape(out.probabilities, &train.labels)?;
            let value = loss.value().data()[0];
            if !value.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "training loss",
                    epoch,
                    norms: params.norms(),
                });
            }
            let g = tape.backward(loss)?;
            let grads = pv.all().into_iter().map(|v| g.wrt(v)).collect::<Vec<_>>();
            (value, correct as f64 / train.len() as f64, grads)
        };
        adam_step(&mut params.arrays_mut(), &grads, &mut adam, &options.train)?;
        if !params.is_finite() {
            return Err(TrainError::NonFinite {
                what: "parameters",
                epoch,
                norms: params.norms(),
            });
        }

        let snapshot = params.quantized();
        let eval = evaluate(
            graph,
            features,
            &snapshot,
            &options.model,
            val,
            options.schema,
        )?;
        if !eval.loss.is_finite() {
            return Err(TrainError::NonFinite {
                what: "validation loss",
                epoch,
                norms: params.norms(),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: train_loss / train.len() as f64,
            train_accuracy,
            val_loss: eval.loss,
            val_accuracy: eval.accuracy,
        });
        if best.as_ref().is_none_or(|(b, _, _)| eval.loss < *b) {
            best = Some((eval.loss, epoch, snapshot));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= options.train.patience {
            break;
        }
    }
    let (best_val_loss, best_epoch, params) = best.expect("at least one epoch");
    Ok(FitOutcome {
        params,
        best_epoch,
        best_val_loss,
        history,
    })
}
