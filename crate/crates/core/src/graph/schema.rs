use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::GraphError;

/// A declared edge type between two node types.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeType {
    pub name: String,
    pub source: String,
    pub destination: String,
}

/// Coarse two-way relabeling of the fine classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryGrouping {
    pub positive: String,
    pub negative: String,
    /// fine class name -> `positive` or `negative`
    pub classes: BTreeMap<String, String>,
}

/// Class names of the target type plus an optional binary grouping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    pub class_names: Vec<String>,
    pub grouping: Option<BinaryGrouping>,
}

impl LabelSpace {
    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    /// Binary class names in index order: negative is 0, positive is 1.
    pub fn binary_names(&self) -> Option<[&str; 2]> {
        self.grouping
            .as_ref()
            .map(|g| [g.negative.as_str(), g.positive.as_str()])
    }

    /// 1 when the fine class maps to the positive group, else 0.
    pub fn binary_index(&self, fine: usize) -> Option<usize> {
        let g = self.grouping.as_ref()?;
        let name = self.class_names.get(fine)?;
        let coarse = g.classes.get(name)?;
        Some(usize::from(coarse == &g.positive))
    }
}

/// Node and edge types of a heterogeneous network, with the target type
/// whose nodes are classified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HinSchema {
    node_types: Vec<String>,
    edge_types: Vec<EdgeType>,
    target: usize,
    labels: LabelSpace,
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaFile {
    node_types: Vec<String>,
    target_type: String,
    classes: Vec<String>,
    #[serde(default)]
    edge_types: Vec<EdgeType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grouping: Option<BinaryGrouping>,
}

impl HinSchema {
    pub fn new(
        node_types: Vec<String>,
        edge_types: Vec<EdgeType>,
        target_type: &str,
        labels: LabelSpace,
    ) -> Result<Self, GraphError> {
        let mut seen = HashSet::new();
        for t in &node_types {
            if !seen.insert(t.as_str()) {
                return Err(GraphError::Schema(format!(
                    "node type `{t}` declared twice"
                )));
            }
        }
        let target = node_types
            .iter()
            .position(|t| t == target_type)
            .ok_or_else(|| {
                GraphError::Schema(format!("target type `{target_type}` is not declared"))
            })?;
        let mut edge_names = HashSet::new();
        for e in &edge_types {
            if !edge_names.insert(e.name.as_str()) {
                return Err(GraphError::Schema(format!(
                    "edge type `{}` declared twice",
                    e.name
                )));
            }
            for end in [&e.source, &e.destination] {
                if !node_types.contains(end) {
                    return Err(GraphError::Schema(format!(
                        "edge type `{}` references undeclared node type `{end}`",
                        e.name
                    )));
                }
            }
        }
        if labels.class_names.is_empty() {
            return Err(GraphError::Schema("at least one class is required".into()));
        }
        let mut class_set = HashSet::new();
        for c in &labels.class_names {
            if !class_set.insert(c.as_str()) {
                return Err(GraphError::Schema(format!("class `{c}` declared twice")));
            }
        }
        if let Some(g) = &labels.grouping {
            if g.positive == g.negative {
                return Err(GraphError::Schema(
                    "grouping needs two distinct groups".into(),
                ));
            }
            for c in &labels.class_names {
                match g.classes.get(c) {
                    Some(v) if *v == g.positive || *v == g.negative => {}
                    Some(v) => {
                        return Err(GraphError::Schema(format!(
                            "class `{c}` grouped into unknown group `{v}`"
                        )))
                    }
                    None => {
                        return Err(GraphError::Schema(format!(
                            "grouping does not cover class `{c}`"
                        )))
                    }
                }
            }
            if let Some(extra) = g.classes.keys().find(|k| !class_set.contains(k.as_str())) {
                return Err(GraphError::Schema(format!(
                    "grouping names unknown class `{extra}`"
                )));
            }
        }
        Ok(Self {
            node_types,
            edge_types,
            target,
            labels,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, GraphError> {
        let file: SchemaFile =
            toml::from_str(text).map_err(|e| GraphError::Schema(e.to_string()))?;
        Self::new(
            file.node_types,
            file.edge_types,
            &file.target_type,
            LabelSpace {
                class_names: file.classes,
                grouping: file.grouping,
            },
        )
    }

    pub fn to_toml(&self) -> String {
        let file = SchemaFile {
            node_types: self.node_types.clone(),
            target_type: self.target_type().to_string(),
            classes: self.labels.class_names.clone(),
            edge_types: self.edge_types.clone(),
            grouping: self.labels.grouping.clone(),
        };
        toml::to_string(&file).expect("schema serializes")
    }

    pub fn node_types(&self) -> &[String] {
        &self.node_types
    }

    pub fn edge_types(&self) -> &[EdgeType] {
        &self.edge_types
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn target_type(&self) -> &str {
        &self.node_types[self.target]
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn type_index(&self, name: &str) -> Result<usize, GraphError> {
        self.node_types
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| GraphError::Schema(format!("unknown node type `{name}`")))
    }

    pub fn edge_type_index(&self, name: &str) -> Result<usize, GraphError> {
        self.edge_types
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| GraphError::Schema(format!("unknown edge type `{name}`")))
    }
}
