use serde::{Deserialize, Serialize};

use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: Scalar,
    pub recall: Scalar,
    pub f1: Scalar,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub accuracy: Scalar,
    pub weighted_f1: Scalar,
    pub per_class: Vec<ClassMetrics>,
}

pub fn accuracy(gold: &[usize], pred: &[usize]) -> Scalar {
    assert_eq!(gold.len(), pred.len(), "gold and predicted lengths differ");
    assert!(!gold.is_empty(), "accuracy of an empty set");
    let hits = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    hits as Scalar / gold.len() as Scalar
}

/// Per-class precision, recall, F1 and support. A class with no predictions
/// has precision 0; a class with precision + recall = 0 has F1 0.
pub fn per_class(gold: &[usize], pred: &[usize], labels: &[&str]) -> Vec<ClassMetrics> {
    assert_eq!(gold.len(), pred.len(), "gold and predicted lengths differ");
    let k = labels.len();
    let (mut tp, mut predicted, mut support) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for (&g, &p) in gold.iter().zip(pred) {
        assert!(g < k && p < k, "label code out of range");
        support[g] += 1;
        predicted[p] += 1;
        if g == p {
            tp[g] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as Scalar / b as Scalar };
    (0..k)
        .map(|c| {
            let precision = ratio(tp[c], predicted[c]);
            let recall = ratio(tp[c], support[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: labels[c].to_string(),
                precision,
                recall,
                f1,
                support: support[c],
            }
        })
        .collect()
}

/// Support-weighted mean of per-class F1.
pub fn weighted_f1(gold: &[usize], pred: &[usize], num_classes: usize) -> Scalar {
    let names = vec![""; num_classes];
    weighted_from(&per_class(gold, pred, &names), gold.len())
}

fn weighted_from(classes: &[ClassMetrics], n: usize) -> Scalar {
    assert!(n > 0, "weighted F1 of an empty set");
    classes.iter().map(|c| c.support as Scalar / n as Scalar * c.f1).sum()
}

pub fn task_metrics(gold: &[usize], pred: &[usize], labels: &[&str]) -> TaskMetrics {
    let per_class = per_class(gold, pred, labels);
    TaskMetrics {
        accuracy: accuracy(gold, pred),
        weighted_f1: weighted_from(&per_class, gold.len()),
        per_class,
    }
}
