//! Hierarchical graph attention over a heterogeneous graph.
//!
//! Every node type is projected into a shared space, each target's typed
//! neighborhoods are summarized by node-level attention into one schema node
//! per type, and the schema nodes are fused by schema-level attention before
//! a linear classifier.

mod forward;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureSet;
use crate::graph::HinGraph;
use crate::ndiff::{Activation, NdiffError, Tape, Tensor};

pub(crate) use forward::{forward_tape, ParamVars};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] NdiffError),
    #[error("node type `{node_type}`: expected feature dimension {expected}, found {found}")]
    FeatureDim {
        node_type: String,
        expected: usize,
        found: usize,
    },
    #[error("node type `{node_type}`: {rows} feature rows for {nodes} nodes")]
    FeatureRows {
        node_type: String,
        rows: usize,
        nodes: usize,
    },
    #[error("expected {expected} node types, found {found}")]
    TypeCount { expected: usize, found: usize },
    #[error("target index {index} out of range ({count} target nodes)")]
    UnknownTarget { index: usize, count: usize },
    #[error("schema node of the target type is missing")]
    MissingTargetSchemaNode,
    #[error("parameter `{name}`: {message}")]
    Parameter { name: String, message: String },
}

/// Output head. Binary uses one sigmoid unit whose probability belongs to
/// class index 1 (the positive class).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Multiclass,
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(Task::Binary),
            "multiclass" => Ok(Task::Multiclass),
            other => Err(format!(
                "unknown task `{other}` (expected binary or multiclass)"
            )),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Binary => "binary",
            Task::Multiclass => "multiclass",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HgatConfig {
    /// Shared node-level dimension `F`.
    pub hidden: usize,
    /// Attention heads `K`.
    pub heads: usize,
    /// Schema transform output dimension `F′`.
    pub schema_dim: usize,
    pub num_classes: usize,
    pub task: Task,
    pub leaky_slope: f64,
    pub aggregation: Activation,
    /// Dropout rate on projected features during training.
    pub dropout: f64,
}

impl HgatConfig {
    pub fn new(task: Task, num_classes: usize) -> Self {
        Self {
            hidden: 12,
            heads: 1,
            schema_dim: 8,
            num_classes,
            task,
            leaky_slope: 0.2,
            aggregation: Activation::Elu,
            dropout: 0.0,
        }
    }

    /// Sets `K` and `F′ = 8K`.
    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self.schema_dim = 8 * heads;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.hidden == 0 || self.heads == 0 || self.schema_dim == 0 {
            return bad("hidden, heads and schema_dim must be at least 1");
        }
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1");
        }
        if self.task == Task::Binary && self.num_classes != 2 {
            return bad("binary task needs exactly 2 classes");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !self.leaky_slope.is_finite() {
            return bad("leaky_slope must be finite");
        }
        Ok(())
    }

    /// Width `K·F` of a schema node.
    pub fn schema_node_dim(&self) -> usize {
        self.heads * self.hidden
    }

    /// Classifier rows: 1 for binary, `num_classes` otherwise.
    pub fn output_units(&self) -> usize {
        match self.task {
            Task::Binary => 1,
            Task::Multiclass => self.num_classes,
        }
    }
}

/// All trainable arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct HgatParams {
    pub type_names: Vec<String>,
    /// `M^φ`, `[F × F^φ]` per type.
    pub projections: Vec<Tensor>,
    /// `a^{φ,k}`, `[2F]` per type and head.
    pub attention: Vec<Vec<Tensor>>,
    /// `W`, `[F′ × K·F]`.
    pub schema_transform: Tensor,
    /// `q`, `[2F′]`.
    pub schema_attention: Tensor,
    /// `b_q`, `[1]`.
    pub schema_bias: Tensor,
    /// `U`, `[outputs × K·F]`.
    pub classifier: Tensor,
    /// `c`, `[outputs]`.
    pub classifier_bias: Tensor,
}

/// Expected name and shape of every parameter array, in storage order.
pub fn param_layout(
    config: &HgatConfig,
    type_names: &[String],
    dims: &[usize],
) -> Vec<(String, Vec<usize>)> {
    let f = config.hidden;
    let kf = config.schema_node_dim();
    let mut out = Vec::new();
    for (name, &d) in type_names.iter().zip(dims) {
        out.push((format!("projection.{name}"), vec![f, d]));
    }
    for name in type_names {
        for k in 0..config.heads {
            out.push((format!("attention.{name}.{k}"), vec![2 * f]));
        }
    }
    out.push(("schema.transform".into(), vec![config.schema_dim, kf]));
    out.push(("schema.attention".into(), vec![2 * config.schema_dim]));
    out.push(("schema.bias".into(), vec![1]));
    out.push(("classifier.weight".into(), vec![config.output_units(), kf]));
    out.push(("classifier.bias".into(), vec![config.output_units()]));
    out
}

impl HgatParams {
    /// Arrays in storage order, paired with their names.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, m) in self.type_names.iter().zip(&self.projections) {
            out.push((format!("projection.{name}"), m));
        }
        for (name, heads) in self.type_names.iter().zip(&self.attention) {
            for (k, a) in heads.iter().enumerate() {
                out.push((format!("attention.{name}.{k}"), a));
            }
        }
        out.push(("schema.transform".into(), &self.schema_transform));
        out.push(("schema.attention".into(), &self.schema_attention));
        out.push(("schema.bias".into(), &self.schema_bias));
        out.push(("classifier.weight".into(), &self.classifier));
        out.push(("classifier.bias".into(), &self.classifier_bias));
        out
    }

    /// Mutable arrays in the same order as [`HgatParams::named`].
    pub fn arrays_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.projections.iter_mut().collect();
        for heads in &mut self.attention {
            out.extend(heads.iter_mut());
        }
        out.push(&mut self.schema_transform);
        out.push(&mut self.schema_attention);
        out.push(&mut self.schema_bias);
        out.push(&mut self.classifier);
        out.push(&mut self.classifier_bias);
        out
    }

    /// Feature dimension `F^φ` each projection expects.
    pub fn feature_dims(&self) -> Vec<usize> {
        self.projections.iter().map(Tensor::cols).collect()
    }

    /// Rebuilds parameters from arrays listed in storage order, checking
    /// names and shapes against `config`.
    pub fn from_named(
        config: &HgatConfig,
        type_names: &[String],
        dims: &[usize],
        arrays: Vec<(String, Tensor)>,
    ) -> Result<Self, ModelError> {
        let layout = param_layout(config, type_names, dims);
        if layout.len() != arrays.len() {
            return Err(ModelError::Parameter {
                name: "*".into(),
                message: format!("expected {} arrays, found {}", layout.len(), arrays.len()),
            });
        }
        for ((name, shape), (got_name, t)) in layout.iter().zip(&arrays) {
            if name != got_name {
                return Err(ModelError::Parameter {
                    name: got_name.clone(),
                    message: format!("expected `{name}` at this position"),
                });
            }
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Parameter {
                    name: name.clone(),
                    message: format!("expected shape {shape:?}, found {:?}", t.shape()),
                });
            }
        }
        let mut it = arrays.into_iter().map(|(_, t)| t);
        let projections = (0..type_names.len()).map(|_| it.next().unwrap()).collect();
        let attention = (0..type_names.len())
            .map(|_| (0..config.heads).map(|_| it.next().unwrap()).collect())
            .collect();
        Ok(Self {
            type_names: type_names.to_vec(),
            projections,
            attention,
            schema_transform: it.next().unwrap(),
            schema_attention: it.next().unwrap(),
            schema_bias: it.next().unwrap(),
            classifier: it.next().unwrap(),
            classifier_bias: it.next().unwrap(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    /// Euclidean norm of every array, for diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.named()
            .into_iter()
            .map(|(n, t)| (n, t.norm()))
            .collect()
    }

    /// Copy with every value rounded through 32-bit storage.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for t in out.arrays_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        out
    }
}

fn glorot(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Glorot-uniform weights and zero biases, deterministic per seed.
pub fn init_params(
    config: &HgatConfig,
    type_names: &[String],
    feature_dims: &[usize],
    seed: u64,
) -> Result<HgatParams, ModelError> {
    config.validate()?;
    if type_names.len() != feature_dims.len() || type_names.is_empty() {
        return Err(ModelError::Config(format!(
            "{} type names for {} feature dimensions",
            type_names.len(),
            feature_dims.len()
        )));
    }
    if let Some(i) = feature_dims.iter().position(|&d| d == 0) {
        return Err(ModelError::FeatureDim {
            node_type: type_names[i].clone(),
            expected: 1,
            found: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = config.hidden;
    let kf = config.schema_node_dim();
    let fp = config.schema_dim;
    let out = config.output_units();
    let projections = feature_dims
        .iter()
        .map(|&d| glorot(&mut rng, vec![f, d], d, f))
        .collect();
    let attention = type_names
        .iter()
        .map(|_| {
            (0..config.heads)
                .map(|_| glorot(&mut rng, vec![2 * f], 2 * f, 1))
                .collect()
        })
        .collect();
    Ok(HgatParams {
        type_names: type_names.to_vec(),
        projections,
        attention,
        schema_transform: glorot(&mut rng, vec![fp, kf], kf, fp),
        schema_attention: glorot(&mut rng, vec![2 * fp], 2 * fp, 1),
        schema_bias: Tensor::zeros(vec![1]),
        classifier: glorot(&mut rng, vec![out, kf], kf, out),
        classifier_bias: Tensor::zeros(vec![out]),
    })
}

/// How schema nodes are weighted during fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchemaMode {
    #[default]
    Learned,
    /// Every present type gets weight `1/|types|`; absent types contribute nothing.
    Uniform,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    pub schema: SchemaMode,
    /// Seed for the dropout mask. `None` disables dropout.
    pub dropout_seed: Option<u64>,
}

/// One head of node-level attention for one target and one neighbor type.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeAttention {
    /// Neighbor indices within the neighbor type, in scoring order.
    pub neighbors: Vec<usize>,
    /// Raw scores `e` before normalization.
    pub scores: Vec<f64>,
    pub alpha: Vec<f64>,
    /// `σ(Σ α_j h′_j)`, length `F`.
    pub contribution: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeTrace {
    pub heads: Vec<NodeAttention>,
    /// Concatenated head contributions, length `K·F`.
    pub schema_node: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetTrace {
    pub node: usize,
    pub projected: Vec<f64>,
    /// `None` where the target has no neighbor of that type.
    pub types: Vec<Option<TypeTrace>>,
    /// Schema scores `w`; `None` for absent types and under uniform fusion.
    pub schema_scores: Vec<Option<f64>>,
    pub beta: Vec<f64>,
    pub fused: Vec<f64>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub targets: Vec<TargetTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[targets × outputs]`.
    pub logits: Tensor,
    /// `[targets × num_classes]`; binary rows are `[1−p, p]`.
    pub probabilities: Tensor,
    pub trace: ForwardTrace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub node: usize,
    pub class: usize,
    pub probability: f64,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_inputs(
    graph: &HinGraph,
    features: &FeatureSet,
    params: &HgatParams,
    targets: &[usize],
) -> Result<(), ModelError> {
    let nt = graph.num_types();
    for found in [
        features.num_types(),
        params.projections.len(),
        params.attention.len(),
    ] {
        if found != nt {
            return Err(ModelError::TypeCount {
                expected: nt,
                found,
            });
        }
    }
    for t in 0..nt {
        let m = features.matrix(t);
        let name = graph.schema().node_types()[t].clone();
        if m.rows() != graph.node_count(t) {
            return Err(ModelError::FeatureRows {
                node_type: name,
                rows: m.rows(),
                nodes: graph.node_count(t),
            });
        }
        let expected = params.projections[t].cols();
        if m.cols() != expected {
            return Err(ModelError::FeatureDim {
                node_type: name,
                expected,
                found: m.cols(),
            });
        }
    }
    let count = graph.node_count(graph.schema().target());
    if let Some(&index) = targets.iter().find(|&&i| i >= count) {
        return Err(ModelError::UnknownTarget { index, count });
    }
    Ok(())
}

/// `h′ = h·(M^φ)ᵀ` for every type.
pub fn project(features: &FeatureSet, params: &HgatParams) -> Result<Vec<Tensor>, ModelError> {
    if features.num_types() != params.projections.len() {
        return Err(ModelError::TypeCount {
            expected: params.projections.len(),
            found: features.num_types(),
        });
    }
    (0..features.num_types())
        .map(|t| {
            let m = &params.projections[t];
            let h = features.matrix(t);
            if h.cols() != m.cols() {
                return Err(ModelError::FeatureDim {
                    node_type: params.type_names[t].clone(),
                    expected: m.cols(),
                    found: h.cols(),
                });
            }
            Ok(h.matmul(&m.transpose()?)?)
        })
        .collect()
}

/// Neighbors of target `target` within type `ty`; the target itself comes
/// first when `ty` is the target type.
pub fn neighbor_list(graph: &HinGraph, target: usize, ty: usize) -> Vec<usize> {
    let tt = graph.schema().target();
    let node = crate::graph::NodeRef {
        ty: tt,
        index: target,
    };
    let adj = graph.neighbors(node, ty);
    if ty == tt {
        let mut out = Vec::with_capacity(adj.len() + 1);
        out.push(target);
        out.extend(adj.iter().copied().filter(|&j| j != target));
        out
    } else {
        adj.to_vec()
    }
}

fn check_projected(
    graph: &HinGraph,
    projected: &[Tensor],
    config: &HgatConfig,
) -> Result<(), ModelError> {
    if projected.len() != graph.num_types() {
        return Err(ModelError::TypeCount {
            expected: graph.num_types(),
            found: projected.len(),
        });
    }
    for (t, h) in projected.iter().enumerate() {
        if h.rows() != graph.node_count(t) || h.cols() != config.hidden {
            return Err(ModelError::FeatureRows {
                node_type: graph.schema().node_types()[t].clone(),
                rows: h.rows(),
                nodes: graph.node_count(t),
            });
        }
    }
    Ok(())
}

/// Node-level attention of head `head` for `target` over its neighbors of
/// type `ty`. Returns `None` when the target has no such neighbor.
pub fn node_attention(
    graph: &HinGraph,
    projected: &[Tensor],
    params: &HgatParams,
    config: &HgatConfig,
    target: usize,
    ty: usize,
    head: usize,
) -> Result<Option<NodeAttention>, ModelError> {
    check_projected(graph, projected, config)?;
    let neighbors = neighbor_list(graph, target, ty);
    if neighbors.is_empty() {
        return Ok(None);
    }
    let tape = Tape::new();
    let tt = graph.schema().target();
    let hi = tape
        .constant(projected[tt].clone())
        .gather_rows(&[target])?;
    let ht = tape.constant(projected[ty].clone());
    let a = tape.constant(params.attention[ty][head].clone());
    let head = forward::attend(hi, ht, a, std::slice::from_ref(&neighbors), config)?;
    Ok(Some(NodeAttention {
        neighbors,
        scores: head.scores.to_tensor().into_data(),
        alpha: head.alpha.to_tensor().into_data(),
        contribution: head.output.to_tensor().into_data(),
    }))
}

/// Per-type schema nodes of `target`: the concatenation of all head
/// contributions, or `None` for absent types.
pub fn build_schema_nodes(
    graph: &HinGraph,
    projected: &[Tensor],
    params: &HgatParams,
    config: &HgatConfig,
    target: usize,
) -> Result<Vec<Option<Vec<f64>>>, ModelError> {
    (0..graph.num_types())
        .map(|ty| {
            let mut node = Vec::with_capacity(config.schema_node_dim());
            for k in 0..config.heads {
                match node_attention(graph, projected, params, config, target, ty, k)? {
                    Some(h) => node.extend(h.contribution),
                    None => return Ok(None),
                }
            }
            Ok(Some(node))
        })
        .collect()
}

/// Result of schema-level attention for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaFusion {
    pub scores: Vec<Option<f64>>,
    pub beta: Vec<f64>,
    pub fused: Vec<f64>,
}

/// Weights the schema nodes of one target against its target-type schema
/// node and fuses them.
pub fn schema_attention(
    schema_nodes: &[Option<Vec<f64>>],
    target_type: usize,
    params: &HgatParams,
    config: &HgatConfig,
    mode: SchemaMode,
) -> Result<SchemaFusion, ModelError> {
    if schema_nodes.get(target_type).is_none_or(Option::is_none) {
        return Err(ModelError::MissingTargetSchemaNode);
    }
    let kf = config.schema_node_dim();
    let tape = Tape::new();
    let pv = ParamVars::register(&tape, params, false);
    let mut nodes = Vec::new();
    let mut present = Vec::new();
    for n in schema_nodes {
        let row = match n {
            Some(v) if v.len() == kf => v.clone(),
            Some(v) => {
                return Err(ModelError::Config(format!(
                    "schema node of length {} (expected {kf})",
                    v.len()
                )))
            }
            None => vec![0.0; kf],
        };
        nodes.push(tape.constant(Tensor::matrix(1, kf, row)?));
        present.push(n.is_some());
    }
    let fusion = forward::fuse(&tape, &nodes, &present, &pv, target_type, mode)?;
    let scores = fusion.scores.map(|s| s.to_tensor().into_data());
    Ok(SchemaFusion {
        scores: present
            .iter()
            .enumerate()
            .map(|(t, &p)| scores.as_ref().filter(|_| p).map(|s| s[t]))
            .collect(),
        beta: fusion.beta.to_tensor().into_data(),
        fused: fusion.fused.to_tensor().into_data(),
    })
}

/// Full forward pass for the given target nodes with a per-target trace.
pub fn forward(
    graph: &HinGraph,
    features: &FeatureSet,
    params: &HgatParams,
    config: &HgatConfig,
    targets: &[usize],
    mode: SchemaMode,
) -> Result<ForwardOutput, ModelError> {
    config.validate()?;
    check_inputs(graph, features, params, targets)?;
    if targets.is_empty() {
        return Ok(ForwardOutput {
            logits: Tensor::zeros(vec![0, config.output_units()]),
            probabilities: Tensor::zeros(vec![0, config.num_classes]),
            trace: ForwardTrace {
                targets: Vec::new(),
            },
        });
    }
    let tape = Tape::new();
    let pv = ParamVars::register(&tape, params, false);
    let options = ForwardOptions {
        schema: mode,
        dropout_seed: None,
    };
    let out = forward_tape(&tape, graph, features, &pv, config, targets, &options)?;
    let logits = out.logits.to_tensor();
    let probabilities = out.probabilities.to_tensor();
    let trace = out.trace(targets);
    Ok(ForwardOutput {
        logits,
        probabilities,
        trace,
    })
}

/// Most probable class per target, ties to the lowest class index.
pub fn predict(
    graph: &HinGraph,
    features: &FeatureSet,
    params: &HgatParams,
    config: &HgatConfig,
    targets: &[usize],
    mode: SchemaMode,
) -> Result<Vec<Prediction>, ModelError> {
    let out = forward(graph, features, params, config, targets, mode)?;
    Ok(predictions_from(&out.probabilities, targets))
}

pub(crate) fn predictions_from(probabilities: &Tensor, targets: &[usize]) -> Vec<Prediction> {
    targets
        .iter()
        .enumerate()
        .map(|(i, &node)| {
            let row = probabilities.row(i);
            let class = argmax(row);
            Prediction {
                node,
                class,
                probability: row[class],
            }
        })
        .collect()
}
