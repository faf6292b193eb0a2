//! Fixtures shared by the benchmarks.

use hgat_core::features::{encode_graph, FeatureConfig, FeatureSet, VocabConfig};
use hgat_core::graph::HinGraph;
use hgat_core::model::Task;
use hgat_core::synth::{generate, SynthSpec};
use hgat_core::train::{target_labels, LabeledSet};

/// A synthetic news graph with `articles` articles and proportional
/// creator and subject counts.
pub fn news_graph(articles: usize) -> HinGraph {
    let spec = SynthSpec {
        articles,
        creators: (articles / 4).max(1),
        subjects: (articles / 20).max(6),
        seed: 7,
        ..SynthSpec::default()
    };
    generate(&spec).expect("valid spec").graph
}

pub fn encode(graph: &HinGraph) -> FeatureSet {
    let config = FeatureConfig {
        vocab: VocabConfig {
            min_df: 1,
            ..VocabConfig::default()
        },
    };
    encode_graph(graph, &config).expect("encodable")
}

/// Every labeled article.
pub fn labeled(graph: &HinGraph) -> LabeledSet {
    let labels = target_labels(graph, Task::Multiclass).expect("fine labels");
    let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    let positions: Vec<usize> = (0..idx.len()).collect();
    LabeledSet::select(&labels, &idx, &positions)
}
