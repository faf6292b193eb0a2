use hgat_core::features::{encode_graph, FeatureConfig, VocabConfig};
use hgat_core::graph::load_graph;
use hgat_core::model::{HgatConfig, SchemaMode, Task};
use hgat_core::synth::{generate, write_synthetic, SynthSpec, EDGES_FILE, NODES_FILE, SCHEMA_FILE};
use hgat_core::train::{
    evaluate, fit, load_checkpoint, make_splits, save_checkpoint, target_labels, Checkpoint,
    FitOptions, LabeledSet, RunInfo, TrainConfig,
};

#[test]
fn politifact_shaped_summary_counts() {
    let synth = generate(&SynthSpec::politifact_shaped(3)).unwrap();
    let s = synth.graph.summarize();
    let nodes: Vec<usize> = s.node_counts.iter().map(|(_, n)| *n).collect();
    let links: Vec<usize> = s.edge_counts.iter().map(|(_, n)| *n).collect();
    assert_eq!(nodes, vec![14_055, 3_634, 152]);
    assert_eq!(links, vec![14_055, 48_756]);
    assert_eq!(s.labeled_targets, 14_052);
    let text = s.to_string();
    for n in ["14055", "3634", "152", "48756"] {
        assert!(text.contains(n), "{n} missing from\n{text}");
    }
}

#[test]
fn files_to_checkpoint_and_back() {
    let dir = tempfile::tempdir().unwrap();
    let synth = generate(&SynthSpec {
        seed: 4,
        ..SynthSpec::default()
    })
    .unwrap();
    write_synthetic(&synth, dir.path()).unwrap();
    let graph = load_graph(
        &dir.path().join(SCHEMA_FILE),
        &dir.path().join(NODES_FILE),
        &dir.path().join(EDGES_FILE),
    )
    .unwrap();
    assert_eq!(graph.summarize(), synth.graph.summarize());

    let feature_config = FeatureConfig {
        vocab: VocabConfig {
            min_df: 1,
            ..VocabConfig::default()
        },
    };
    let features = encode_graph(&graph, &feature_config).unwrap();
    let labels = target_labels(&graph, Task::Binary).unwrap();
    let labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    let plan = make_splits(labeled.len(), 0.8, 2).unwrap();
    let train = LabeledSet::select(&labels, &labeled, &plan.train());
    let val = LabeledSet::select(&labels, &labeled, &plan.val());
    let options = FitOptions {
        model: HgatConfig::new(Task::Binary, 2),
        train: TrainConfig {
            max_epochs: 20,
            ..TrainConfig::default()
        },
        schema: SchemaMode::Learned,
        init_seed: 5,
        train_seed: 6,
    };
    let out = fit(&graph, &features, &train, &val, &options).unwrap();
    let ckpt = Checkpoint {
        config: options.model.clone(),
        params: out.params.clone(),
        fingerprints: features.fingerprints(),
        best_val_loss: out.best_val_loss,
        epoch: out.best_epoch,
        run: RunInfo {
            theta: Some(0.8),
            features: feature_config,
            ..RunInfo::default()
        },
    };
    let path = dir.path().join("model.hgat");
    save_checkpoint(&path, &ckpt).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, ckpt);
    loaded.check_features(&features).unwrap();

    let eval = evaluate(
        &graph,
        &features,
        &loaded.params,
        &loaded.config,
        &val,
        SchemaMode::Learned,
    )
    .unwrap();
    assert_eq!(eval.loss, out.best_val_loss);
}
