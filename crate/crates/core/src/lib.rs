//! Hierarchical graph attention over heterogeneous information networks:
//! graph loading, TF-IDF features, a small reverse-mode autodiff engine,
//! the two-level attention model, training and evaluation metrics.

pub mod atomic;
pub mod features;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod ndiff;
pub mod synth;
pub mod train;

pub use features::{
    encode_graph, FeatureConfig, FeatureError, FeatureSet, VocabConfig, Vocabulary,
};
pub use graph::{load_graph, write_graph, GraphError, HinGraph, HinSchema, LabelSpace, NodeRef};
pub use metrics::{
    binary_metrics, confusion, group_to_binary, macro_metrics, BinaryMetrics, ConfusionMatrix,
    MacroMetrics, MetricsError, MetricsReport,
};
pub use model::{
    forward, init_params, predict, ForwardOutput, HgatConfig, HgatParams, ModelError, Prediction,
    SchemaMode, Task,
};
pub use ndiff::{Activation, Tensor};
pub use synth::{generate, write_synthetic, Manifest, SynthError, SynthSpec, Synthetic};
pub use train::{
    evaluate, fit, load_checkpoint, make_splits, save_checkpoint, Checkpoint, Evaluation,
    FitOptions, FitOutcome, LabeledSet, RunInfo, SplitPlan, TrainConfig, TrainError,
};
