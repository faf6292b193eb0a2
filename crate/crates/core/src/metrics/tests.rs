use super::*;
use crate::synth::{generate, verdict_labels, SynthSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-class precision/recall/F1 by scanning example pairs.
fn brute_force(truth: &[usize], pred: &[usize], classes: usize) -> Vec<(f64, f64, f64)> {
    (0..classes)
        .map(|c| {
            let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
            for (&t, &p) in truth.iter().zip(pred) {
                if t == c && p == c {
                    tp += 1.0;
                } else if p == c {
                    fp += 1.0;
                } else if t == c {
                    fn_ += 1.0;
                }
            }
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            (precision, recall, f1)
        })
        .collect()
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> (Vec<usize>, Vec<usize>) {
    let truth = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let pred = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (truth, pred)
}

#[test]
fn confusion_examples() {
    let cm = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
    assert_eq!(cm.counts(), &[vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
    let cm = confusion(&[2], &[0], 3).unwrap();
    assert_eq!(cm.get(2, 0), 1);
    assert_eq!(cm.total(), 1);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (t, p) = random_labels(&mut rng, 50, 4);
    let cm = confusion(&t, &p, 4).unwrap();
    for a in 0..4 {
        for b in 0..4 {
            let n = t
                .iter()
                .zip(&p)
                .filter(|&(&x, &y)| x == a && y == b)
                .count() as u64;
            assert_eq!(cm.get(a, b), n);
        }
    }
    assert_eq!(cm.total(), 50);

    assert_eq!(
        confusion(&[0, 3], &[0, 0], 3),
        Err(MetricsError::Range {
            label: 3,
            classes: 3
        })
    );
    assert!(matches!(
        confusion(&[0], &[0, 1], 3),
        Err(MetricsError::Length { .. })
    ));
}

#[test]
fn binary_hand_cases() {
    // rows: true Real, true Fake
    let cm = ConfusionMatrix::from_counts(vec![vec![6, 1], vec![1, 2]]).unwrap();
    let m = binary_metrics(&cm).unwrap();
    assert!((m.precision - 2.0 / 3.0).abs() <= 1e-15);
    assert!((m.recall - 2.0 / 3.0).abs() <= 1e-15);
    assert!((m.f1 - 2.0 / 3.0).abs() <= 1e-15);
    assert!((m.accuracy - 0.8).abs() <= 1e-15);
    assert!(m.zero_division.is_empty());

    // precision 2/3 with recall 1/2 needs a second false negative
    let cm = ConfusionMatrix::from_counts(vec![vec![6, 1], vec![2, 2]]).unwrap();
    let m = binary_metrics(&cm).unwrap();
    assert!((m.precision - 2.0 / 3.0).abs() <= 1e-15);
    assert!((m.recall - 0.5).abs() <= 1e-15);
    assert!((m.f1 - 4.0 / 7.0).abs() <= 1e-15);
    assert!((m.accuracy - 8.0 / 11.0).abs() <= 1e-15);
}

#[test]
fn binary_edge_cases() {
    let perfect = binary_metrics(&confusion(&[0, 1, 1, 0], &[0, 1, 1, 0], 2).unwrap()).unwrap();
    assert_eq!(
        (
            perfect.accuracy,
            perfect.precision,
            perfect.recall,
            perfect.f1
        ),
        (1.0, 1.0, 1.0, 1.0)
    );

    let none_predicted = binary_metrics(&confusion(&[1, 1, 0], &[0, 0, 0], 2).unwrap()).unwrap();
    assert_eq!(
        (
            none_predicted.precision,
            none_predicted.recall,
            none_predicted.f1
        ),
        (0.0, 0.0, 0.0)
    );
    assert_eq!(none_predicted.zero_division, vec!["precision".to_string()]);

    let three = ConfusionMatrix::zeros(3);
    assert!(matches!(
        binary_metrics(&three),
        Err(MetricsError::Shape { expected: 2, .. })
    ));
    assert!(ConfusionMatrix::from_counts(vec![vec![1, 2], vec![3]]).is_err());
}

#[test]
fn macro_examples() {
    let labels: Vec<usize> = (0..30).map(|i| i % 6).collect();
    let m = macro_metrics(&confusion(&labels, &labels, 6).unwrap()).unwrap();
    assert_eq!(
        (m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1),
        (1.0, 1.0, 1.0, 1.0)
    );

    // class 5 is never predicted
    let pred: Vec<usize> = labels.iter().map(|&l| if l == 5 { 0 } else { l }).collect();
    let m = macro_metrics(&confusion(&labels, &pred, 6).unwrap()).unwrap();
    assert_eq!(m.per_class[5].f1, 0.0);
    assert!(m.zero_division.contains(&"precision[5]".to_string()));
    let mean = m.per_class.iter().map(|c| c.f1).sum::<f64>() / 6.0;
    assert_eq!(m.macro_f1, mean);
}

#[test]
fn random_matrices_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for round in 0..20 {
        let classes = if round % 2 == 0 { 2 } else { 6 };
        let n = rng.random_range(1..200);
        let (t, p) = random_labels(&mut rng, n, classes);
        let cm = confusion(&t, &p, classes).unwrap();
        let want = brute_force(&t, &p, classes);
        let acc = t.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / n as f64;
        let m = macro_metrics(&cm).unwrap();
        assert!((m.accuracy - acc).abs() <= 1e-12);
        for c in 0..classes {
            let got = m.per_class[c];
            assert!((got.precision - want[c].0).abs() <= 1e-12);
            assert!((got.recall - want[c].1).abs() <= 1e-12);
            assert!((got.f1 - want[c].2).abs() <= 1e-12);
        }
        let k = classes as f64;
        assert!((m.macro_precision - want.iter().map(|w| w.0).sum::<f64>() / k).abs() <= 1e-12);
        assert!((m.macro_recall - want.iter().map(|w| w.1).sum::<f64>() / k).abs() <= 1e-12);
        assert!((m.macro_f1 - want.iter().map(|w| w.2).sum::<f64>() / k).abs() <= 1e-12);
        if classes == 2 {
            let b = binary_metrics(&cm).unwrap();
            assert!((b.precision - want[1].0).abs() <= 1e-12);
            assert!((b.recall - want[1].1).abs() <= 1e-12);
            assert!((b.f1 - want[1].2).abs() <= 1e-12);
        }
    }
}

#[test]
fn verdicts_group_into_fake_and_real() {
    let labels = verdict_labels();
    let idx = |name: &str| labels.index_of(name).unwrap();
    assert_eq!(
        group_to_binary(&[idx("Mostly False")], &labels).unwrap(),
        vec![1]
    );
    assert_eq!(
        group_to_binary(&[idx("Half True")], &labels).unwrap(),
        vec![0]
    );
    let grouped = group_to_binary(&(0..6).collect::<Vec<_>>(), &labels).unwrap();
    assert_eq!(grouped, vec![1, 1, 1, 0, 0, 0]);
    assert_eq!(
        group_to_binary(&[6], &labels),
        Err(MetricsError::Unmapped(6))
    );
}

#[test]
fn politifact_shaped_grouping_counts() {
    let synth = generate(&SynthSpec::politifact_shaped(0)).unwrap();
    let graph = &synth.graph;
    let target = graph.schema().target();
    let fine: Vec<usize> = graph
        .nodes_of(target)
        .iter()
        .filter_map(|n| n.label)
        .collect();
    let grouped = group_to_binary(&fine, graph.labels()).unwrap();
    let fake = grouped.iter().filter(|&&g| g == 1).count();
    // The six per-verdict counts sum to 6,462 fake and 7,590 real; the
    // quoted fake total of 6,465 is 3 more than its own breakdown.
    assert_eq!(fake, 6_462);
    assert_eq!(grouped.len() - fake, 7_590);
}

#[test]
fn report_round_trips_with_fixed_keys() {
    let cm = ConfusionMatrix::from_counts(vec![vec![6, 1], vec![1, 2]]).unwrap();
    let names = vec!["Real".to_string(), "Fake".to_string()];
    let r = MetricsReport::new("binary", "test", 0.25, &names, &cm).unwrap();
    let text = r.to_text();
    for key in [
        "accuracy",
        "precision",
        "recall",
        "f1",
        "macro_precision",
        "macro_recall",
        "macro_f1",
    ] {
        assert!(
            text.lines().any(|l| l.starts_with(&format!("{key} = "))),
            "{key} missing:\n{text}"
        );
    }
    assert!(text.contains("[confusion]"));
    assert_eq!(MetricsReport::from_text(&text).unwrap(), r);

    let six: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
    let r = MetricsReport::new("multiclass", "val", 1.0, &six, &ConfusionMatrix::zeros(6)).unwrap();
    assert!(r.precision.is_none() && !r.to_text().contains("\nprecision = "));
}

fn matrix() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (2usize..7).prop_flat_map(|k| prop::collection::vec(prop::collection::vec(0u64..20, k), k))
}

proptest! {
    #[test]
    fn accuracy_is_trace_over_total(counts in matrix()) {
        let cm = ConfusionMatrix::from_counts(counts.clone()).unwrap();
        let total: u64 = counts.iter().flatten().sum();
        let trace: u64 = (0..counts.len()).map(|i| counts[i][i]).sum();
        let want = if total == 0 { 0.0 } else { trace as f64 / total as f64 };
        prop_assert_eq!(cm.accuracy(), want);
    }

    #[test]
    fn macro_metrics_ignore_class_order(counts in matrix(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let cm = ConfusionMatrix::from_counts(counts).unwrap();
        let mut perm: Vec<usize> = (0..cm.classes()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = macro_metrics(&cm).unwrap();
        let b = macro_metrics(&cm.relabel(&perm).unwrap()).unwrap();
        prop_assert!((a.macro_precision - b.macro_precision).abs() <= 1e-12);
        prop_assert!((a.macro_recall - b.macro_recall).abs() <= 1e-12);
        prop_assert!((a.macro_f1 - b.macro_f1).abs() <= 1e-12);
        prop_assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn collapsed_matrix_matches_grouped_labels(
        pairs in prop::collection::vec((0usize..6, 0usize..6), 1..120)
    ) {
        let labels = verdict_labels();
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let groups = group_to_binary(&(0..6).collect::<Vec<_>>(), &labels).unwrap();
        let collapsed = confusion(&t, &p, 6).unwrap().collapse(&groups, 2).unwrap();
        let direct = confusion(
            &group_to_binary(&t, &labels).unwrap(),
            &group_to_binary(&p, &labels).unwrap(),
            2,
        ).unwrap();
        prop_assert_eq!(&collapsed, &direct);
        prop_assert_eq!(binary_metrics(&collapsed).unwrap(), binary_metrics(&direct).unwrap());
    }
}
