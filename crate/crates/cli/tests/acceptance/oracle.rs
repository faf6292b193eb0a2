//! Straight-line recomputation of the two-level attention forward pass from
//! plain nested vectors. Shares nothing with the model code beyond reading
//! its inputs.

use std::collections::BTreeMap;

use hgat_core::features::FeatureSet;
use hgat_core::graph::HinGraph;
use hgat_core::model::{HgatConfig, HgatParams, Task};

pub struct Plain {
    /// `[type][node][dim]`
    features: Vec<Vec<Vec<f64>>>,
    /// `((type, index), (type, index))`, undirected.
    edges: Vec<((usize, usize), (usize, usize))>,
    target_type: usize,
    arrays: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
    type_names: Vec<String>,
    hidden: usize,
    heads: usize,
    schema_dim: usize,
    slope: f64,
    binary: bool,
}

impl Plain {
    pub fn new(
        graph: &HinGraph,
        features: &FeatureSet,
        params: &HgatParams,
        config: &HgatConfig,
    ) -> Self {
        let nt = graph.num_types();
        Plain {
            features: (0..nt)
                .map(|t| {
                    let m = features.matrix(t);
                    (0..graph.node_count(t))
                        .map(|j| m.row(j).to_vec())
                        .collect()
                })
                .collect(),
            edges: graph
                .edges()
                .iter()
                .map(|e| {
                    (
                        (e.source.ty, e.source.index),
                        (e.destination.ty, e.destination.index),
                    )
                })
                .collect(),
            target_type: graph.schema().target(),
            arrays: params
                .named()
                .into_iter()
                .map(|(n, t)| (n, (t.shape().to_vec(), t.data().to_vec())))
                .collect(),
            type_names: graph.schema().node_types().to_vec(),
            hidden: config.hidden,
            heads: config.heads,
            schema_dim: config.schema_dim,
            slope: config.leaky_slope,
            binary: config.task == Task::Binary,
        }
    }

    fn array(&self, name: &str) -> &(Vec<usize>, Vec<f64>) {
        &self.arrays[name]
    }

    fn matvec(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let (shape, data) = self.array(name);
        let (rows, cols) = (shape[0], shape[1]);
        assert_eq!(cols, x.len());
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            for c in 0..cols {
                out[r] += data[r * cols + c] * x[c];
            }
        }
        out
    }

    /// Logits and class probabilities of one target node.
    pub fn target(&self, target: usize, uniform: bool) -> (Vec<f64>, Vec<f64>) {
        let tt = self.target_type;
        let project = |t: usize, j: usize| {
            self.matvec(
                &format!("projection.{}", self.type_names[t]),
                &self.features[t][j],
            )
        };
        let hi = project(tt, target);

        let mut schema_nodes: Vec<Option<Vec<f64>>> = Vec::new();
        for t in 0..self.type_names.len() {
            let mut neighbors = Vec::new();
            if t == tt {
                neighbors.push(target);
            }
            for &(a, b) in &self.edges {
                for (x, y) in [(a, b), (b, a)] {
                    if x == (tt, target) && y.0 == t && !neighbors.contains(&y.1) {
                        neighbors.push(y.1);
                    }
                }
            }
            if neighbors.is_empty() {
                schema_nodes.push(None);
                continue;
            }
            let hs: Vec<Vec<f64>> = neighbors.iter().map(|&j| project(t, j)).collect();
            let mut node = Vec::new();
            for k in 0..self.heads {
                let a = &self
                    .array(&format!("attention.{}.{k}", self.type_names[t]))
                    .1;
                let mut e = Vec::new();
                for hj in &hs {
                    let mut s = 0.0;
                    for d in 0..self.hidden {
                        s += a[d] * hi[d] + a[self.hidden + d] * hj[d];
                    }
                    e.push(if s >= 0.0 { s } else { self.slope * s });
                }
                let m = e.iter().fold(f64::NEG_INFINITY, |x, &y| x.max(y));
                let w: Vec<f64> = e.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = w.iter().sum();
                for d in 0..self.hidden {
                    let mut s = 0.0;
                    for (j, hj) in hs.iter().enumerate() {
                        s += w[j] / z * hj[d];
                    }
                    node.push(if s > 0.0 { s } else { s.exp() - 1.0 });
                }
            }
            schema_nodes.push(Some(node));
        }

        let present: Vec<usize> = (0..schema_nodes.len())
            .filter(|&t| schema_nodes[t].is_some())
            .collect();
        let mut beta = BTreeMap::new();
        if uniform {
            for &t in &present {
                beta.insert(t, 1.0 / present.len() as f64);
            }
        } else {
            let q = &self.array("schema.attention").1;
            let b = self.array("schema.bias").1[0];
            let wn = self.matvec("schema.transform", schema_nodes[tt].as_ref().unwrap());
            let mut w = Vec::new();
            for &t in &present {
                let wt = self.matvec("schema.transform", schema_nodes[t].as_ref().unwrap());
                let mut s = b;
                for p in 0..self.schema_dim {
                    s += q[p] * wt[p] + q[self.schema_dim + p] * wn[p];
                }
                w.push(1.0 / (1.0 + (-s).exp()));
            }
            let m = w.iter().fold(f64::NEG_INFINITY, |x, &y| x.max(y));
            let z: f64 = w.iter().map(|v| (v - m).exp()).sum();
            for (i, &t) in present.iter().enumerate() {
                beta.insert(t, (w[i] - m).exp() / z);
            }
        }
        let mut r = vec![0.0; self.hidden * self.heads];
        for (&t, &bt) in &beta {
            for (d, v) in schema_nodes[t].as_ref().unwrap().iter().enumerate() {
                r[d] += bt * v;
            }
        }
        let mut logits = self.matvec("classifier.weight", &r);
        for (l, c) in logits.iter_mut().zip(&self.array("classifier.bias").1) {
            *l += c;
        }
        let probs = if self.binary {
            let p = 1.0 / (1.0 + (-logits[0]).exp());
            vec![1.0 - p, p]
        } else {
            let m = logits.iter().fold(f64::NEG_INFINITY, |x, &y| x.max(y));
            let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
            logits.iter().map(|v| (v - m).exp() / z).collect()
        };
        (logits, probs)
    }
}
