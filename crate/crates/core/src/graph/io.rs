use std::fs;
use std::path::Path;

use super::{GraphBuilder, GraphError, HinGraph, HinSchema};
use crate::atomic::write_atomic;

fn read(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Escapes `\`, tab and newline so a text fits in one tab-separated field.
pub fn escape_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

/// Inverse of [`escape_text`]. Unknown escapes are kept verbatim.
pub fn unescape_text(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Reads the schema (TOML), nodes and edges files and returns a validated graph.
///
/// Nodes rows are `id<TAB>type<TAB>label-or-"-"<TAB>text`; edge rows are
/// `edge_type<TAB>source_id<TAB>destination_id`. Blank lines are skipped.
pub fn load_graph(
    schema_path: &Path,
    nodes_path: &Path,
    edges_path: &Path,
) -> Result<HinGraph, GraphError> {
    let schema = HinSchema::from_toml(&read(schema_path)?)?;
    let mut builder = GraphBuilder::new(schema);

    let nodes = read(nodes_path)?;
    for (no, line) in nodes.lines().enumerate() {
        let line_no = no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| GraphError::Parse {
            path: nodes_path.to_path_buf(),
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        if fields.len() < 3 {
            return Err(parse_err(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let (id, ty, label) = (fields[0], fields[1], fields[2]);
        let text = fields.get(3).map_or(String::new(), |t| unescape_text(t));
        if id.is_empty() {
            return Err(parse_err("empty node id".into()));
        }
        let label = match label {
            "-" => None,
            name => Some(
                builder
                    .schema()
                    .labels()
                    .index_of(name)
                    .ok_or_else(|| parse_err(format!("unknown class `{name}`")))?,
            ),
        };
        builder
            .add_node(id, ty, label, &text)
            .map_err(|e| match e {
                GraphError::Conflict { id, .. } => GraphError::Conflict {
                    context: format!("{}:{line_no}", nodes_path.display()),
                    id,
                },
                GraphError::Schema(m) => parse_err(m),
                other => other,
            })?;
    }

    let edges = read(edges_path)?;
    for (no, line) in edges.lines().enumerate() {
        let line_no = no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(GraphError::Parse {
                path: edges_path.to_path_buf(),
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        builder
            .add_edge(fields[0], fields[1], fields[2])
            .map_err(|e| match e {
                GraphError::Referential { id, .. } => GraphError::Referential {
                    context: format!("{}:{line_no}", edges_path.display()),
                    id,
                },
                GraphError::Schema(message) => GraphError::Parse {
                    path: edges_path.to_path_buf(),
                    line: line_no,
                    message,
                },
                other => other,
            })?;
    }
    builder.build()
}

/// Writes the three files read by [`load_graph`]. Each file is replaced atomically.
pub fn write_graph(
    graph: &HinGraph,
    schema_path: &Path,
    nodes_path: &Path,
    edges_path: &Path,
) -> Result<(), GraphError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| GraphError::Io { path, source }
    };
    write_atomic(schema_path, graph.schema().to_toml().as_bytes()).map_err(io_err(schema_path))?;

    let types = graph.schema().node_types();
    let classes = &graph.labels().class_names;
    let mut nodes = String::new();
    for (ty, name) in types.iter().enumerate() {
        for n in graph.nodes_of(ty) {
            let label = n.label.map_or("-", |l| classes[l].as_str());
            nodes.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                n.id,
                name,
                label,
                escape_text(&n.text)
            ));
        }
    }
    write_atomic(nodes_path, nodes.as_bytes()).map_err(io_err(nodes_path))?;

    let mut edges = String::new();
    for e in graph.edges() {
        let et = &graph.schema().edge_types()[e.edge_type].name;
        edges.push_str(&format!(
            "{}\t{}\t{}\n",
            et,
            graph.node(e.source).id,
            graph.node(e.destination).id
        ));
    }
    write_atomic(edges_path, edges.as_bytes()).map_err(io_err(edges_path))
}
