//! Typed heterogeneous graphs: schema, loading, validation and neighbor queries.
//!
//! Nodes get dense per-type indices in file order. Adjacency is stored per
//! `(node, neighbor type)` as sorted, deduplicated index lists and records
//! only real edges; a node is never its own neighbor unless an edge says so.

mod io;
mod schema;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub use io::{escape_text, load_graph, unescape_text, write_graph};
pub use schema::{BinaryGrouping, EdgeType, HinSchema, LabelSpace};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{context}: edge endpoint `{id}` does not exist")]
    Referential { context: String, id: String },
    #[error("{context}: node id `{id}` defined twice")]
    Conflict { context: String, id: String },
    #[error("graph violates {} invariant(s): {}", .0.len(), .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// A node addressed by its type and its index within that type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub ty: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub label: Option<usize>,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub edge_type: usize,
    pub source: NodeRef,
    pub destination: NodeRef,
}

/// One broken invariant found by [`HinGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EndpointType {
        edge: usize,
        edge_type: String,
        expected: (String, String),
        found: (String, String),
    },
    DanglingEndpoint {
        edge: usize,
    },
    DuplicateId {
        id: String,
    },
    LabelOnNonTarget {
        id: String,
        node_type: String,
    },
    LabelOutOfRange {
        id: String,
        label: usize,
    },
    AdjacencyOrder {
        id: String,
        neighbor_type: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EndpointType {
                edge,
                edge_type,
                expected,
                found,
            } => write!(
                f,
                "endpoint types: edge #{edge} ({edge_type}) joins {}->{}, schema requires {}->{}",
                found.0, found.1, expected.0, expected.1
            ),
            Violation::DanglingEndpoint { edge } => write!(f, "dangling endpoint: edge #{edge}"),
            Violation::DuplicateId { id } => write!(f, "unique ids: `{id}` appears more than once"),
            Violation::LabelOnNonTarget { id, node_type } => {
                write!(f, "label on non-target type: `{id}` is a {node_type}")
            }
            Violation::LabelOutOfRange { id, label } => {
                write!(f, "label range: `{id}` has class index {label}")
            }
            Violation::AdjacencyOrder { id, neighbor_type } => {
                write!(
                    f,
                    "adjacency order: `{id}` {neighbor_type} neighbors not sorted/unique"
                )
            }
        }
    }
}

/// An immutable heterogeneous information network.
#[derive(Debug, Clone, PartialEq)]
pub struct HinGraph {
    schema: HinSchema,
    nodes: Vec<Vec<Node>>,
    edges: Vec<Edge>,
    index: HashMap<String, NodeRef>,
    /// `adjacency[ty][node][neighbor_ty]`
    adjacency: Vec<Vec<Vec<Vec<usize>>>>,
}

/// Incremental construction of a [`HinGraph`].
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    schema: HinSchema,
    nodes: Vec<Vec<Node>>,
    edges: Vec<Edge>,
    index: HashMap<String, NodeRef>,
}

impl GraphBuilder {
    pub fn new(schema: HinSchema) -> Self {
        let nodes = vec![Vec::new(); schema.node_types().len()];
        Self {
            schema,
            nodes,
            edges: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn schema(&self) -> &HinSchema {
        &self.schema
    }

    pub fn add_node(
        &mut self,
        id: &str,
        node_type: &str,
        label: Option<usize>,
        text: &str,
    ) -> Result<NodeRef, GraphError> {
        let ty = self.schema.type_index(node_type)?;
        if self.index.contains_key(id) {
            return Err(GraphError::Conflict {
                context: "add_node".into(),
                id: id.to_string(),
            });
        }
        let node = NodeRef {
            ty,
            index: self.nodes[ty].len(),
        };
        self.nodes[ty].push(Node {
            id: id.to_string(),
            label,
            text: text.to_string(),
        });
        self.index.insert(id.to_string(), node);
        Ok(node)
    }

    /// Endpoint types are not checked here; [`HinGraph::validate`] reports them.
    pub fn add_edge(
        &mut self,
        edge_type: &str,
        source: &str,
        destination: &str,
    ) -> Result<(), GraphError> {
        let edge_type = self.schema.edge_type_index(edge_type)?;
        let lookup = |id: &str| {
            self.index
                .get(id)
                .copied()
                .ok_or_else(|| GraphError::Referential {
                    context: "add_edge".into(),
                    id: id.to_string(),
                })
        };
        let edge = Edge {
            edge_type,
            source: lookup(source)?,
            destination: lookup(destination)?,
        };
        self.edges.push(edge);
        Ok(())
    }

    /// Builds adjacency without checking invariants.
    pub fn finish(self) -> HinGraph {
        let n_types = self.schema.node_types().len();
        let mut adjacency: Vec<Vec<Vec<Vec<usize>>>> = self
            .nodes
            .iter()
            .map(|ns| vec![vec![Vec::new(); n_types]; ns.len()])
            .collect();
        for e in &self.edges {
            let (s, d) = (e.source, e.destination);
            if s.index < adjacency[s.ty].len() && d.index < adjacency[d.ty].len() {
                adjacency[s.ty][s.index][d.ty].push(d.index);
                adjacency[d.ty][d.index][s.ty].push(s.index);
            }
        }
        for per_node in adjacency.iter_mut().flatten().flatten() {
            per_node.sort_unstable();
            per_node.dedup();
        }
        HinGraph {
            schema: self.schema,
            nodes: self.nodes,
            edges: self.edges,
            index: self.index,
            adjacency,
        }
    }

    /// Builds and validates.
    pub fn build(self) -> Result<HinGraph, GraphError> {
        let graph = self.finish();
        let violations = graph.validate();
        if violations.is_empty() {
            Ok(graph)
        } else {
            Err(GraphError::Invalid(violations))
        }
    }
}

/// Counts and degree statistics of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSummary {
    pub node_counts: Vec<(String, usize)>,
    pub edge_counts: Vec<(String, usize)>,
    pub labeled_targets: usize,
    pub degrees: Vec<DegreeStats>,
}

/// Per-node count of edges of one edge type, over all nodes of one type.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeStats {
    pub node_type: String,
    pub edge_type: String,
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

impl fmt::Display for GraphSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# node")?;
        for (t, n) in &self.node_counts {
            writeln!(f, "  {t:<24}{n:>10}")?;
        }
        writeln!(f, "# link")?;
        for (t, n) in &self.edge_counts {
            writeln!(f, "  {t:<24}{n:>10}")?;
        }
        writeln!(f, "labeled targets: {}", self.labeled_targets)?;
        writeln!(f, "# degree (node type / edge type: mean min max)")?;
        for d in &self.degrees {
            writeln!(
                f,
                "  {} / {}: {:.4} {} {}",
                d.node_type, d.edge_type, d.mean, d.min, d.max
            )?;
        }
        Ok(())
    }
}

impl HinGraph {
    pub fn schema(&self) -> &HinSchema {
        &self.schema
    }

    pub fn labels(&self) -> &LabelSpace {
        self.schema.labels()
    }

    pub fn num_types(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes_of(&self, ty: usize) -> &[Node] {
        &self.nodes[ty]
    }

    pub fn node(&self, node: NodeRef) -> &Node {
        &self.nodes[node.ty][node.index]
    }

    pub fn node_count(&self, ty: usize) -> usize {
        self.nodes[ty].len()
    }

    pub fn total_nodes(&self) -> usize {
        self.nodes.iter().map(Vec::len).sum()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn lookup(&self, id: &str) -> Option<NodeRef> {
        self.index.get(id).copied()
    }

    /// Sorted, duplicate-free neighbors of `node` having type index `ty`.
    pub fn neighbors(&self, node: NodeRef, ty: usize) -> &[usize] {
        &self.adjacency[node.ty][node.index][ty]
    }

    /// Like [`HinGraph::neighbors`] with the type given by name.
    pub fn neighbors_of_type(
        &self,
        node: NodeRef,
        node_type: &str,
    ) -> Result<&[usize], GraphError> {
        let ty = self.schema.type_index(node_type)?;
        Ok(self.neighbors(node, ty))
    }

    /// Indices of labeled target-type nodes, ascending.
    pub fn labeled_targets(&self) -> Vec<usize> {
        self.nodes[self.schema.target()]
            .iter()
            .enumerate()
            .filter(|(_, n)| n.label.is_some())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let types = self.schema.node_types();
        for (i, e) in self.edges.iter().enumerate() {
            let in_range = |n: NodeRef| n.ty < self.nodes.len() && n.index < self.nodes[n.ty].len();
            if !in_range(e.source) || !in_range(e.destination) {
                out.push(Violation::DanglingEndpoint { edge: i });
                continue;
            }
            let decl = &self.schema.edge_types()[e.edge_type];
            let found = (types[e.source.ty].clone(), types[e.destination.ty].clone());
            if found.0 != decl.source || found.1 != decl.destination {
                out.push(Violation::EndpointType {
                    edge: i,
                    edge_type: decl.name.clone(),
                    expected: (decl.source.clone(), decl.destination.clone()),
                    found,
                });
            }
        }
        let mut seen = HashSet::new();
        let n_classes = self.labels().len();
        for (ty, nodes) in self.nodes.iter().enumerate() {
            for (idx, n) in nodes.iter().enumerate() {
                if !seen.insert(n.id.as_str()) {
                    out.push(Violation::DuplicateId { id: n.id.clone() });
                }
                if let Some(label) = n.label {
                    if ty != self.schema.target() {
                        out.push(Violation::LabelOnNonTarget {
                            id: n.id.clone(),
                            node_type: types[ty].clone(),
                        });
                    } else if label >= n_classes {
                        out.push(Violation::LabelOutOfRange {
                            id: n.id.clone(),
                            label,
                        });
                    }
                }
                for (nt, list) in self.adjacency[ty][idx].iter().enumerate() {
                    if list.windows(2).any(|w| w[0] >= w[1]) {
                        out.push(Violation::AdjacencyOrder {
                            id: n.id.clone(),
                            neighbor_type: types[nt].clone(),
                        });
                    }
                }
            }
        }
        out
    }

    pub fn summarize(&self) -> GraphSummary {
        let types = self.schema.node_types();
        let node_counts = types
            .iter()
            .zip(&self.nodes)
            .map(|(t, ns)| (t.clone(), ns.len()))
            .collect();
        let mut per_type = vec![0usize; self.schema.edge_types().len()];
        for e in &self.edges {
            per_type[e.edge_type] += 1;
        }
        let edge_counts = self
            .schema
            .edge_types()
            .iter()
            .zip(&per_type)
            .map(|(e, &n)| (e.name.clone(), n))
            .collect();

        let mut degrees = Vec::new();
        for (et, decl) in self.schema.edge_types().iter().enumerate() {
            let mut ends = vec![decl.source.as_str()];
            if decl.destination != decl.source {
                ends.push(decl.destination.as_str());
            }
            for end in ends {
                let ty = self.schema.type_index(end).expect("declared");
                let mut deg = vec![0usize; self.nodes[ty].len()];
                for e in self.edges.iter().filter(|e| e.edge_type == et) {
                    for n in [e.source, e.destination] {
                        if n.ty == ty && n.index < deg.len() {
                            deg[n.index] += 1;
                        }
                    }
                }
                let (mean, min, max) = if deg.is_empty() {
                    (0.0, 0, 0)
                } else {
                    (
                        deg.iter().sum::<usize>() as f64 / deg.len() as f64,
                        *deg.iter().min().unwrap(),
                        *deg.iter().max().unwrap(),
                    )
                };
                degrees.push(DegreeStats {
                    node_type: end.to_string(),
                    edge_type: decl.name.clone(),
                    mean,
                    min,
                    max,
                });
            }
        }
        GraphSummary {
            node_counts,
            edge_counts,
            labeled_targets: self.labeled_targets().len(),
            degrees,
        }
    }

    /// Collapses every node type into a single type `node` joined by a
    /// single edge type `link`. Node order is type-major in schema order, so
    /// the relative order of the original target nodes is preserved.
    pub fn homogeneous(&self) -> HinGraph {
        let schema = HinSchema::new(
            vec!["node".into()],
            vec![EdgeType {
                name: "link".into(),
                source: "node".into(),
                destination: "node".into(),
            }],
            "node",
            self.labels().clone(),
        )
        .expect("single-type schema is valid");
        let mut b = GraphBuilder::new(schema);
        for nodes in &self.nodes {
            for n in nodes {
                b.add_node(&n.id, "node", n.label, &n.text)
                    .expect("ids are unique");
            }
        }
        for e in &self.edges {
            let (s, d) = (self.node(e.source), self.node(e.destination));
            b.add_edge("link", &s.id, &d.id).expect("endpoints exist");
        }
        b.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn news_schema() -> HinSchema {
        HinSchema::new(
            vec!["article".into(), "creator".into(), "subject".into()],
            vec![
                EdgeType {
                    name: "Write".into(),
                    source: "creator".into(),
                    destination: "article".into(),
                },
                EdgeType {
                    name: "Belongs-to".into(),
                    source: "article".into(),
                    destination: "subject".into(),
                },
            ],
            "article",
            LabelSpace {
                class_names: vec!["False".into(), "True".into()],
                grouping: None,
            },
        )
        .unwrap()
    }

    fn fixture() -> GraphBuilder {
        let mut b = GraphBuilder::new(news_schema());
        b.add_node("a0", "article", Some(0), "tax cuts").unwrap();
        b.add_node("a1", "article", None, "health care").unwrap();
        for c in 0..8 {
            b.add_node(&format!("c{c}"), "creator", None, "senator")
                .unwrap();
        }
        b.add_node("s0", "subject", None, "economy").unwrap();
        b.add_edge("Write", "c7", "a0").unwrap();
        b.add_edge("Belongs-to", "a0", "s0").unwrap();
        b.add_edge("Belongs-to", "a0", "s0").unwrap();
        b
    }

    #[test]
    fn single_edge_and_isolated_neighbors() {
        let g = fixture().build().unwrap();
        let a0 = g.lookup("a0").unwrap();
        let c7 = g.lookup("c7").unwrap();
        assert_eq!(g.neighbors_of_type(a0, "creator").unwrap(), &[c7.index]);
        // duplicate edges collapse in adjacency but stay in the edge list
        assert_eq!(g.neighbors_of_type(a0, "subject").unwrap(), &[0]);
        assert_eq!(g.edges().len(), 3);
        let a1 = g.lookup("a1").unwrap();
        for t in ["article", "creator", "subject"] {
            assert!(g.neighbors_of_type(a1, t).unwrap().is_empty());
        }
        // no implicit self loop
        assert!(g.neighbors_of_type(a0, "article").unwrap().is_empty());
        assert!(matches!(
            g.neighbors_of_type(a0, "editor"),
            Err(GraphError::Schema(_))
        ));
    }

    #[test]
    fn validate_reports_each_violation() {
        assert!(fixture().build().unwrap().validate().is_empty());

        let mut b = fixture();
        b.add_edge("Write", "c0", "s0").unwrap();
        let v = b.finish().validate();
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::EndpointType { .. }));

        let mut b = fixture();
        b.add_node("c8", "creator", Some(1), "").unwrap();
        let v = b.finish().validate();
        assert_eq!(
            v,
            vec![Violation::LabelOnNonTarget {
                id: "c8".into(),
                node_type: "creator".into()
            }]
        );
    }

    #[test]
    fn builder_rejects_conflicts_and_dangling_edges() {
        let mut b = fixture();
        assert!(matches!(
            b.add_node("a0", "article", None, ""),
            Err(GraphError::Conflict { .. })
        ));
        assert!(matches!(
            b.add_edge("Write", "c0", "nope"),
            Err(GraphError::Referential { .. })
        ));
    }

    #[test]
    fn summary_counts_and_degrees() {
        let s = fixture().build().unwrap().summarize();
        assert_eq!(s.node_counts[1], ("creator".into(), 8));
        assert_eq!(
            s.edge_counts,
            vec![("Write".into(), 1), ("Belongs-to".into(), 2)]
        );
        let belongs = s
            .degrees
            .iter()
            .find(|d| d.node_type == "article" && d.edge_type == "Belongs-to")
            .unwrap();
        assert_eq!((belongs.mean, belongs.min, belongs.max), (1.0, 0, 2));

        let empty = GraphBuilder::new(news_schema())
            .build()
            .unwrap()
            .summarize();
        assert!(empty.node_counts.iter().all(|(_, n)| *n == 0));
        assert!(empty.edge_counts.iter().all(|(_, n)| *n == 0));
        assert!(empty.degrees.iter().all(|d| d.mean == 0.0 && d.max == 0));
    }

    #[test]
    fn neighbors_agree_with_brute_force_edge_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for round in 0..5 {
            let mut b = GraphBuilder::new(news_schema());
            let (na, nc, ns) = (40 + round * 30, 15, 9);
            for i in 0..na {
                b.add_node(&format!("a{i}"), "article", None, "").unwrap();
            }
            for i in 0..nc {
                b.add_node(&format!("c{i}"), "creator", None, "").unwrap();
            }
            for i in 0..ns {
                b.add_node(&format!("s{i}"), "subject", None, "").unwrap();
            }
            for _ in 0..na * 3 {
                let a = format!("a{}", rng.random_range(0..na));
                if rng.random_bool(0.4) {
                    b.add_edge("Write", &format!("c{}", rng.random_range(0..nc)), &a)
                        .unwrap();
                } else {
                    b.add_edge("Belongs-to", &a, &format!("s{}", rng.random_range(0..ns)))
                        .unwrap();
                }
            }
            let g = b.build().unwrap();
            for ty in 0..3 {
                for idx in 0..g.node_count(ty) {
                    let me = NodeRef { ty, index: idx };
                    for nt in 0..3 {
                        let mut want: Vec<usize> = g
                            .edges()
                            .iter()
                            .filter_map(|e| {
                                if e.source == me && e.destination.ty == nt {
                                    Some(e.destination.index)
                                } else if e.destination == me && e.source.ty == nt {
                                    Some(e.source.index)
                                } else {
                                    None
                                }
                            })
                            .collect();
                        want.sort_unstable();
                        want.dedup();
                        assert_eq!(g.neighbors(me, nt), want.as_slice());
                    }
                }
            }
        }
    }

    #[test]
    fn homogeneous_collapse_keeps_target_order() {
        let g = fixture().build().unwrap();
        let h = g.homogeneous();
        assert_eq!(h.num_types(), 1);
        assert_eq!(h.total_nodes(), g.total_nodes());
        let ids: Vec<_> = h
            .labeled_targets()
            .iter()
            .map(|&i| h.nodes_of(0)[i].id.clone())
            .collect();
        assert_eq!(ids, vec!["a0"]);
        let a0 = h.lookup("a0").unwrap();
        // c7 and s0
        assert_eq!(h.neighbors(a0, 0).len(), 2);
    }
}
