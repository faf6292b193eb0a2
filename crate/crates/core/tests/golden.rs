//! Forward output of a fixed 8-node graph compared with a stored file.
//! Run with `HGAT_BLESS=1` to rewrite the file after an intended change.

use std::fmt::Write as _;
use std::path::PathBuf;

use hgat_core::model::{forward, init_params, HgatConfig, SchemaMode, Task};
use hgat_core::synth::{random_hin, RandomHinSpec};

fn render() -> String {
    let (graph, features) = random_hin(&RandomHinSpec::default(), 0);
    let config = HgatConfig::new(Task::Multiclass, 3);
    let params = init_params(&config, features.type_names(), &features.dims(), 0).unwrap();
    let targets: Vec<usize> = (0..graph.node_count(graph.schema().target())).collect();
    let mut out = String::new();
    for mode in [SchemaMode::Learned, SchemaMode::Uniform] {
        let fwd = forward(&graph, &features, &params, &config, &targets, mode).unwrap();
        for (i, t) in fwd.trace.targets.iter().enumerate() {
            let logits: Vec<String> = fwd.logits.row(i).iter().map(|v| format!("{v:e}")).collect();
            let beta: Vec<String> = t.beta.iter().map(|v| format!("{v:e}")).collect();
            writeln!(
                out,
                "{mode:?}\t{}\t{}\t{}",
                t.node,
                logits.join(" "),
                beta.join(" ")
            )
            .unwrap();
        }
    }
    out
}

fn parse(line: &str) -> (String, Vec<f64>) {
    let mut cols = line.split('\t');
    let key = format!("{}\t{}", cols.next().unwrap(), cols.next().unwrap());
    let nums = cols
        .flat_map(|c| c.split(' '))
        .map(|v| v.parse().unwrap())
        .collect();
    (key, nums)
}

#[test]
fn eight_node_forward_matches_golden_file() {
    let path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/eight_node_forward.tsv");
    let got = render();
    if std::env::var_os("HGAT_BLESS").is_some() {
        std::fs::write(&path, &got).unwrap();
        return;
    }
    let want =
        std::fs::read_to_string(&path).expect("golden file exists (bless with HGAT_BLESS=1)");
    assert_eq!(got.lines().count(), want.lines().count());
    for (g, w) in got.lines().zip(want.lines()) {
        let (gk, gv) = parse(g);
        let (wk, wv) = parse(w);
        assert_eq!(gk, wk);
        assert_eq!(gv.len(), wv.len());
        for (a, b) in gv.iter().zip(&wv) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{gk}: {a} vs {b}");
        }
    }
}
