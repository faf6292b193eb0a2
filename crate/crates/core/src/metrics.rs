//! Confusion matrices and the accuracy / precision / recall / F1 family.
//!
//! Binary metrics treat class 1 as positive. A metric whose denominator is
//! zero is reported as 0 and its name is listed in `zero_division`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::LabelSpace;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{truth} true labels but {predicted} predictions")]
    Length { truth: usize, predicted: usize },
    #[error("label {label} out of range for {classes} classes")]
    Range { label: usize, classes: usize },
    #[error("expected a {expected}x{expected} matrix, found {rows}x{cols}")]
    Shape {
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("class index {0} has no binary grouping")]
    Unmapped(usize),
}

/// Rows are true classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let n = counts.len();
        if let Some(row) = counts.iter().find(|r| r.len() != n) {
            return Err(MetricsError::Shape {
                rows: n,
                cols: row.len(),
                expected: n,
            });
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total()).unwrap_or(0.0)
    }

    /// Merges classes: class `i` becomes `groups[i]`.
    pub fn collapse(&self, groups: &[usize], classes: usize) -> Result<Self, MetricsError> {
        if groups.len() != self.classes() {
            return Err(MetricsError::Length {
                truth: self.classes(),
                predicted: groups.len(),
            });
        }
        if let Some(&label) = groups.iter().find(|&&g| g >= classes) {
            return Err(MetricsError::Range { label, classes });
        }
        let mut out = ConfusionMatrix::zeros(classes);
        for (t, row) in self.counts.iter().enumerate() {
            for (p, &c) in row.iter().enumerate() {
                out.counts[groups[t]][groups[p]] += c;
            }
        }
        Ok(out)
    }

    /// Class `i` is renamed `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self, MetricsError> {
        let mut seen = vec![false; self.classes()];
        for &p in perm {
            if p >= seen.len() || std::mem::replace(&mut seen[p], true) {
                return Err(MetricsError::Range {
                    label: p,
                    classes: self.classes(),
                });
            }
        }
        self.collapse(perm, self.classes())
    }

    fn one_vs_rest(&self, class: usize) -> (u64, u64, u64) {
        let tp = self.counts[class][class];
        let predicted: u64 = self.counts.iter().map(|r| r[class]).sum();
        let actual: u64 = self.counts[class].iter().sum();
        (tp, predicted - tp, actual - tp)
    }
}

pub fn confusion(
    truth: &[usize],
    predicted: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::Length {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label >= classes {
                return Err(MetricsError::Range { label, classes });
            }
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Precision, recall and F1 of one class against the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

impl ClassMetrics {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        ClassMetrics {
            precision: precision.unwrap_or(0.0),
            recall: recall.unwrap_or(0.0),
            f1: f1.unwrap_or(0.0),
            precision_undefined: precision.is_none(),
            recall_undefined: recall.is_none(),
            f1_undefined: f1.is_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Names of metrics that hit a zero denominator.
    pub zero_division: Vec<String>,
}

pub fn binary_metrics(cm: &ConfusionMatrix) -> Result<BinaryMetrics, MetricsError> {
    if cm.classes() != 2 {
        return Err(MetricsError::Shape {
            rows: cm.classes(),
            cols: cm.classes(),
            expected: 2,
        });
    }
    let (tp, fp, fn_) = cm.one_vs_rest(1);
    let m = ClassMetrics::from_counts(tp, fp, fn_);
    let mut zero_division = Vec::new();
    for (undefined, name) in [
        (m.precision_undefined, "precision"),
        (m.recall_undefined, "recall"),
        (m.f1_undefined, "f1"),
    ] {
        if undefined {
            zero_division.push(name.to_string());
        }
    }
    Ok(BinaryMetrics {
        accuracy: cm.accuracy(),
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        zero_division,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Mean of the per-class F1 scores.
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub zero_division: Vec<String>,
}

pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MacroMetrics, MetricsError> {
    let k = cm.classes();
    if k == 0 {
        return Err(MetricsError::Shape {
            rows: 0,
            cols: 0,
            expected: 1,
        });
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let (tp, fp, fn_) = cm.one_vs_rest(c);
            ClassMetrics::from_counts(tp, fp, fn_)
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    let mut zero_division = Vec::new();
    for (c, m) in per_class.iter().enumerate() {
        for (undefined, name) in [
            (m.precision_undefined, "precision"),
            (m.recall_undefined, "recall"),
            (m.f1_undefined, "f1"),
        ] {
            if undefined {
                zero_division.push(format!("{name}[{c}]"));
            }
        }
    }
    Ok(MacroMetrics {
        accuracy: cm.accuracy(),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
        zero_division,
    })
}

/// Maps fine class indices to 0 (negative group) or 1 (positive group).
pub fn group_to_binary(fine: &[usize], labels: &LabelSpace) -> Result<Vec<usize>, MetricsError> {
    fine.iter()
        .map(|&l| labels.binary_index(l).ok_or(MetricsError::Unmapped(l)))
        .collect()
}

/// Everything written to a metrics report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub fold: String,
    pub examples: u64,
    pub loss: f64,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f1: Option<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub zero_division: Vec<String>,
    pub confusion: ConfusionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    /// Row and column order.
    pub classes: Vec<String>,
    /// `counts[true][predicted]`
    pub counts: Vec<Vec<u64>>,
}

impl MetricsReport {
    /// Binary reports carry precision/recall/F1 of class 1; every report
    /// carries the macro averages.
    pub fn new(
        task: &str,
        fold: &str,
        loss: f64,
        class_names: &[String],
        cm: &ConfusionMatrix,
    ) -> Result<Self, MetricsError> {
        if class_names.len() != cm.classes() {
            return Err(MetricsError::Length {
                truth: cm.classes(),
                predicted: class_names.len(),
            });
        }
        let macros = macro_metrics(cm)?;
        let binary = (cm.classes() == 2)
            .then(|| binary_metrics(cm))
            .transpose()?;
        let mut zero_division = macros.zero_division.clone();
        if let Some(b) = &binary {
            zero_division.extend(b.zero_division.iter().cloned());
        }
        Ok(MetricsReport {
            task: task.to_string(),
            fold: fold.to_string(),
            examples: cm.total(),
            loss,
            accuracy: cm.accuracy(),
            precision: binary.as_ref().map(|b| b.precision),
            recall: binary.as_ref().map(|b| b.recall),
            f1: binary.as_ref().map(|b| b.f1),
            macro_precision: macros.macro_precision,
            macro_recall: macros.macro_recall,
            macro_f1: macros.macro_f1,
            zero_division,
            confusion: ConfusionReport {
                classes: class_names.to_vec(),
                counts: cm.counts().to_vec(),
            },
        })
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("metrics report serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[cfg(test)]
mod tests;
