//! Batched forward pass recorded on a tape.
//!
//! Neighbor lists of one type are padded to a common width `D`; padded slots
//! repeat the first real neighbor and are masked out of the softmax, so their
//! coefficients are exactly zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    neighbor_list, HgatConfig, HgatParams, ModelError, NodeAttention, SchemaMode, TargetTrace,
    Task, TypeTrace,
};
use super::{ForwardOptions, ForwardTrace};
use crate::features::FeatureSet;
use crate::graph::HinGraph;
use crate::ndiff::{Activation, NdiffError, Tape, Tensor, Var};

/// Parameters registered on a tape, in the same order as [`HgatParams::named`].
pub(crate) struct ParamVars<'t> {
    pub projections: Vec<Var<'t>>,
    pub attention: Vec<Vec<Var<'t>>>,
    pub schema_transform: Var<'t>,
    pub schema_attention: Var<'t>,
    pub schema_bias: Var<'t>,
    pub classifier: Var<'t>,
    pub classifier_bias: Var<'t>,
}

impl<'t> ParamVars<'t> {
    pub fn register(tape: &'t Tape, params: &HgatParams, trainable: bool) -> Self {
        let leaf = |t: &Tensor| tape.leaf(t.clone(), trainable);
        Self {
            projections: params.projections.iter().map(leaf).collect(),
            attention: params
                .attention
                .iter()
                .map(|h| h.iter().map(leaf).collect())
                .collect(),
            schema_transform: leaf(&params.schema_transform),
            schema_attention: leaf(&params.schema_attention),
            schema_bias: leaf(&params.schema_bias),
            classifier: leaf(&params.classifier),
            classifier_bias: leaf(&params.classifier_bias),
        }
    }

    pub fn all(&self) -> Vec<Var<'t>> {
        let mut out = self.projections.clone();
        for heads in &self.attention {
            out.extend(heads.iter().copied());
        }
        out.extend([
            self.schema_transform,
            self.schema_attention,
            self.schema_bias,
            self.classifier,
            self.classifier_bias,
        ]);
        out
    }
}

pub(crate) struct Head<'t> {
    /// `[p × D]` raw scores.
    pub scores: Var<'t>,
    /// `[p × D]` coefficients.
    pub alpha: Var<'t>,
    /// `[p × F]` activated aggregates.
    pub output: Var<'t>,
}

/// One attention head for `p` targets. `targets_h` is `[p × F]`, `neighbors_h`
/// holds every node of the neighbor type, `lists[i]` is nonempty.
pub(crate) fn attend<'t>(
    targets_h: Var<'t>,
    neighbors_h: Var<'t>,
    a: Var<'t>,
    lists: &[Vec<usize>],
    config: &HgatConfig,
) -> Result<Head<'t>, NdiffError> {
    let f = config.hidden;
    let p = lists.len();
    let d = lists.iter().map(Vec::len).max().unwrap_or(0);
    let mut flat = Vec::with_capacity(p * d);
    let mut mask = Vec::with_capacity(p * d);
    for l in lists {
        for s in 0..d {
            flat.push(*l.get(s).unwrap_or(&l[0]));
            mask.push(s < l.len());
        }
    }
    let a = a.reshape(vec![2 * f, 1])?;
    let left = targets_h.matmul(a.slice_rows(0, f)?)?;
    let right = neighbors_h
        .matmul(a.slice_rows(f, f)?)?
        .gather_rows(&flat)?
        .reshape(vec![p, d])?;
    let scores = right
        .add_col_broadcast(left)?
        .activation(Activation::LeakyRelu(config.leaky_slope));
    let alpha = scores.masked_softmax(&mask)?;
    let output = neighbors_h
        .gather_rows(&flat)?
        .mul_col_broadcast(alpha.reshape(vec![p * d, 1])?)?
        .segment_sum(d)?
        .activation(config.aggregation);
    Ok(Head {
        scores,
        alpha,
        output,
    })
}

pub(crate) struct Fusion<'t> {
    /// `[n × types]` schema scores; `None` under uniform fusion.
    pub scores: Option<Var<'t>>,
    /// `[n × types]`.
    pub beta: Var<'t>,
    /// `[n × K·F]`.
    pub fused: Var<'t>,
}

/// Schema-level attention over per-type schema nodes `[n × K·F]`.
/// `present` is row-major `[n × types]`.
pub(crate) fn fuse<'t>(
    tape: &'t Tape,
    nodes: &[Var<'t>],
    present: &[bool],
    pv: &ParamVars<'t>,
    target_type: usize,
    mode: SchemaMode,
) -> Result<Fusion<'t>, ModelError> {
    let nt = nodes.len();
    let n = present.len() / nt;
    let (scores, beta) = match mode {
        SchemaMode::Learned => {
            let fp = pv.schema_transform.shape()[0];
            let wt = pv.schema_transform.transpose()?;
            let q = pv.schema_attention.reshape(vec![2 * fp, 1])?;
            let (ql, qr) = (q.slice_rows(0, fp)?, q.slice_rows(fp, fp)?);
            let b = pv.schema_bias.reshape(vec![1, 1])?;
            let reference = nodes[target_type].matmul(wt)?.matmul(qr)?;
            let cols = nodes
                .iter()
                .map(|t| {
                    Ok(t.matmul(wt)?
                        .matmul(ql)?
                        .add(reference)?
                        .add_row_broadcast(b)?
                        .activation(Activation::Sigmoid))
                })
                .collect::<Result<Vec<_>, NdiffError>>()?;
            let scores = Var::concat(&cols)?;
            let beta = scores.masked_softmax(present)?;
            (Some(scores), beta)
        }
        SchemaMode::Uniform => {
            let mut data = vec![0.0; n * nt];
            for i in 0..n {
                let row = &present[i * nt..(i + 1) * nt];
                let count = row.iter().filter(|&&p| p).count();
                if count == 0 {
                    return Err(ModelError::MissingTargetSchemaNode);
                }
                for (t, &p) in row.iter().enumerate() {
                    if p {
                        data[i * nt + t] = 1.0 / count as f64;
                    }
                }
            }
            (None, tape.constant(Tensor::matrix(n, nt, data)?))
        }
    };
    let mut fused = nodes[0].mul_col_broadcast(beta.slice_cols(0, 1)?)?;
    for (t, node) in nodes.iter().enumerate().skip(1) {
        fused = fused.add(node.mul_col_broadcast(beta.slice_cols(t, 1)?)?)?;
    }
    Ok(Fusion {
        scores,
        beta,
        fused,
    })
}

pub(crate) struct TypeVars<'t> {
    /// Positions (into the target list) of targets with at least one neighbor.
    pub rows: Vec<usize>,
    pub lists: Vec<Vec<usize>>,
    pub heads: Vec<Head<'t>>,
}

pub(crate) struct TapeForward<'t> {
    pub projected_targets: Var<'t>,
    pub types: Vec<TypeVars<'t>>,
    pub schema_nodes: Vec<Var<'t>>,
    pub fusion: Fusion<'t>,
    pub logits: Var<'t>,
    /// `[n × num_classes]`.
    pub probabilities: Var<'t>,
}

fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rate: f64) -> Tensor {
    let keep = 1.0 - rate;
    let data = (0..rows * cols)
        .map(|_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data).expect("mask shape")
}

/// Records the forward pass for `targets` (indices of target-type nodes).
/// Inputs must already be validated.
pub(crate) fn forward_tape<'t>(
    tape: &'t Tape,
    graph: &HinGraph,
    features: &FeatureSet,
    pv: &ParamVars<'t>,
    config: &HgatConfig,
    targets: &[usize],
    options: &ForwardOptions,
) -> Result<TapeForward<'t>, ModelError> {
    let nt = graph.num_types();
    let tt = graph.schema().target();
    let n = targets.len();
    let kf = config.schema_node_dim();

    let mut dropout = options
        .dropout_seed
        .filter(|_| config.dropout > 0.0)
        .map(ChaCha8Rng::seed_from_u64);
    let mut projected = Vec::with_capacity(nt);
    for t in 0..nt {
        let h = tape.shared(features.shared(t));
        let mut hp = h.matmul(pv.projections[t].transpose()?)?;
        if let Some(rng) = dropout.as_mut() {
            let mask = dropout_mask(rng, graph.node_count(t), config.hidden, config.dropout);
            hp = hp.mul(tape.constant(mask))?;
        }
        projected.push(hp);
    }
    let projected_targets = projected[tt].gather_rows(targets)?;

    let mut types = Vec::with_capacity(nt);
    let mut schema_nodes = Vec::with_capacity(nt);
    let mut present = vec![false; n * nt];
    for t in 0..nt {
        let mut rows = Vec::new();
        let mut lists = Vec::new();
        for (pos, &target) in targets.iter().enumerate() {
            let l = neighbor_list(graph, target, t);
            if !l.is_empty() {
                present[pos * nt + t] = true;
                rows.push(pos);
                lists.push(l);
            }
        }
        if rows.is_empty() {
            schema_nodes.push(tape.constant(Tensor::zeros(vec![n, kf])));
            types.push(TypeVars {
                rows,
                lists,
                heads: Vec::new(),
            });
            continue;
        }
        let hi = projected_targets.gather_rows(&rows)?;
        let heads = pv.attention[t]
            .iter()
            .map(|&a| attend(hi, projected[t], a, &lists, config))
            .collect::<Result<Vec<_>, _>>()?;
        let node = if heads.len() == 1 {
            heads[0].output
        } else {
            Var::concat(&heads.iter().map(|h| h.output).collect::<Vec<_>>())?
        };
        schema_nodes.push(node.scatter_rows(&rows, n)?);
        types.push(TypeVars { rows, lists, heads });
    }

    let fusion = fuse(tape, &schema_nodes, &present, pv, tt, options.schema)?;
    let logits = fusion
        .fused
        .matmul(pv.classifier.transpose()?)?
        .add_row_broadcast(pv.classifier_bias)?;
    let probabilities = match config.task {
        Task::Binary => {
            let p = logits.activation(Activation::Sigmoid);
            Var::concat(&[p.affine(-1.0, 1.0), p])?
        }
        Task::Multiclass => logits.softmax()?,
    };
    Ok(TapeForward {
        projected_targets,
        types,
        schema_nodes,
        fusion,
        logits,
        probabilities,
    })
}

impl TapeForward<'_> {
    /// Per-target view of every intermediate quantity.
    pub fn trace(&self, targets: &[usize]) -> ForwardTrace {
        let n = targets.len();
        let nt = self.types.len();
        let projected = self.projected_targets.to_tensor();
        let nodes: Vec<Tensor> = self.schema_nodes.iter().map(|v| v.to_tensor()).collect();
        let scores = self.fusion.scores.map(|s| s.to_tensor());
        let beta = self.fusion.beta.to_tensor();
        let fused = self.fusion.fused.to_tensor();
        let logits = self.logits.to_tensor();
        let probabilities = self.probabilities.to_tensor();

        struct HeadValues {
            scores: Tensor,
            alpha: Tensor,
            output: Tensor,
        }
        let heads: Vec<Vec<HeadValues>> = self
            .types
            .iter()
            .map(|tv| {
                tv.heads
                    .iter()
                    .map(|h| HeadValues {
                        scores: h.scores.to_tensor(),
                        alpha: h.alpha.to_tensor(),
                        output: h.output.to_tensor(),
                    })
                    .collect()
            })
            .collect();
        let mut slot = vec![vec![None; n]; nt];
        for (t, tv) in self.types.iter().enumerate() {
            for (r, &pos) in tv.rows.iter().enumerate() {
                slot[t][pos] = Some(r);
            }
        }

        let targets = targets
            .iter()
            .enumerate()
            .map(|(pos, &node)| {
                let types = (0..nt)
                    .map(|t| {
                        slot[t][pos].map(|r| {
                            let neighbors = self.types[t].lists[r].clone();
                            let len = neighbors.len();
                            TypeTrace {
                                heads: heads[t]
                                    .iter()
                                    .map(|h| NodeAttention {
                                        neighbors: neighbors.clone(),
                                        scores: h.scores.row(r)[..len].to_vec(),
                                        alpha: h.alpha.row(r)[..len].to_vec(),
                                        contribution: h.output.row(r).to_vec(),
                                    })
                                    .collect(),
                                schema_node: nodes[t].row(pos).to_vec(),
                            }
                        })
                    })
                    .collect::<Vec<_>>();
                TargetTrace {
                    node,
                    projected: projected.row(pos).to_vec(),
                    schema_scores: (0..nt)
                        .map(|t| {
                            scores
                                .as_ref()
                                .filter(|_| types[t].is_some())
                                .map(|s| s.at(pos, t))
                        })
                        .collect(),
                    types,
                    beta: beta.row(pos).to_vec(),
                    fused: fused.row(pos).to_vec(),
                    logits: logits.row(pos).to_vec(),
                    probabilities: probabilities.row(pos).to_vec(),
                }
            })
            .collect();
        ForwardTrace { targets }
    }
}
