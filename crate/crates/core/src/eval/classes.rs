use serde::Serialize;

use super::{aligned, csv_field, pct};
use crate::data::FraudClass;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub name: String,
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
    /// Percent; `None` when the class has no support.
    pub recall: Option<f64>,
    /// Percent; `None` when the class is never predicted.
    pub precision: Option<f64>,
    /// Share of evaluation items carrying this label, percent.
    pub positive_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassReport {
    pub total: usize,
    pub classes: Vec<ClassMetrics>,
}

/// Row label of class `c`: the fraud taxonomy for 9-class heads,
/// Normal/Fraud for binary ones.
pub fn class_name(c: usize, n_classes: usize) -> String {
    match (n_classes, c) {
        (_, 0) => "Normal".into(),
        (2, 1) => "Fraud".into(),
        (9, c) => FraudClass::ALL[c - 1].name().into(),
        (_, c) => format!("Class {c}"),
    }
}

pub fn per_class_metrics(
    preds: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<ClassReport> {
    if preds.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Validation("no predictions to evaluate".into()));
    }
    if let Some(&bad) = preds.iter().chain(labels).find(|&&c| c >= n_classes) {
        return Err(Error::Validation(format!(
            "class {bad} outside 0..{n_classes}"
        )));
    }
    let mut support = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    let mut tp = vec![0usize; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        support[l] += 1;
        predicted[p] += 1;
        if p == l {
            tp[l] += 1;
        }
    }
    let total = labels.len();
    let ratio = |num: usize, den: usize| (den > 0).then(|| 100.0 * num as f64 / den as f64);
    let classes = (0..n_classes)
        .map(|c| ClassMetrics {
            class: c,
            name: class_name(c, n_classes),
            support: support[c],
            predicted: predicted[c],
            true_positives: tp[c],
            recall: ratio(tp[c], support[c]),
            precision: ratio(tp[c], predicted[c]),
            positive_ratio: 100.0 * support[c] as f64 / total as f64,
        })
        .collect();
    Ok(ClassReport { total, classes })
}

const HEADER: [&str; 4] = [
    "Label",
    "Recall (%)",
    "Precision (%)",
    "Eval Positive Ratio (%)",
];

impl ClassReport {
    fn cells(&self) -> Vec<Vec<String>> {
        self.classes
            .iter()
            .map(|c| {
                vec![
                    c.name.clone(),
                    pct(c.recall, 1),
                    pct(c.precision, 1),
                    pct(Some(c.positive_ratio), 2),
                ]
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        aligned(&HEADER, &self.cells())
    }

    pub fn to_csv(&self) -> String {
        let mut out = HEADER.join(",") + "\n";
        for r in self.cells() {
            out.push_str(&r.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let l = [0, 1, 2, 1, 0];
        let r = per_class_metrics(&l, &l, 3).unwrap();
        for c in &r.classes {
            assert_eq!(c.recall, Some(100.0));
            assert_eq!(c.precision, Some(100.0));
        }
    }

    #[test]
    fn all_normal_predictions() {
        let mut labels = vec![0; 10];
        labels[4] = 1;
        let r = per_class_metrics(&[0; 10], &labels, 2).unwrap();
        assert_eq!(r.classes[0].recall, Some(100.0));
        assert_eq!(r.classes[1].recall, Some(0.0));
        assert_eq!(r.classes[1].precision, None);
        assert_eq!(r.classes[0].precision, Some(90.0));
        assert!(r.to_text().contains('—'));
    }

    #[test]
    fn three_class_by_hand() {
        // Confusion (rows = label, cols = pred):
        //   0: [3 1 0]   1: [1 2 1]   2: [0 1 3]
        let labels = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2];
        let preds = [0, 0, 0, 1, 0, 1, 1, 2, 1, 2, 2, 2];
        let r = per_class_metrics(&preds, &labels, 3).unwrap();
        let near = |a: Option<f64>, b: f64| (a.unwrap() - b).abs() < 1e-12;
        assert!(near(r.classes[0].recall, 75.0));
        assert!(near(r.classes[0].precision, 75.0));
        assert!(near(r.classes[1].recall, 50.0));
        assert!(near(r.classes[1].precision, 50.0));
        assert!(near(r.classes[2].recall, 75.0));
        assert!(near(r.classes[2].precision, 75.0));
        let total: f64 = r.classes.iter().map(|c| c.positive_ratio).sum();
        assert!((total - 100.0).abs() < 1e-9);
    }

    #[test]
    fn mismatch_and_range_errors() {
        assert!(per_class_metrics(&[0], &[0, 1], 2).is_err());
        assert!(per_class_metrics(&[], &[], 2).is_err());
        assert!(per_class_metrics(&[3], &[0], 2).is_err());
    }

    #[test]
    fn taxonomy_names_and_csv() {
        assert_eq!(class_name(8, 9), "Dating Fraud");
        assert_eq!(class_name(1, 2), "Fraud");
        let r = per_class_metrics(&[0, 1], &[0, 1], 9).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("Label,Recall (%),Precision (%),Eval Positive Ratio (%)\n"));
        assert_eq!(csv.lines().count(), 10);
        assert!(csv.contains("Free Gift Fraud,100.0,100.0,50.00"));
    }
}
