use std::fmt::Write as _;

use crate::error::Result;
use crate::model::{argmax_rows, Model};
use crate::tensor::Tensor;

use super::Sample;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { counts: vec![vec![0; classes]; classes] }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Self {
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.counts[t][p] += 1;
        }
        m
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    /// Row-normalised percentages; empty rows stay at zero.
    pub fn percentages(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter().map(|&c| if s == 0 { 0.0 } else { 100.0 * c as f64 / s as f64 }).collect()
            })
            .collect()
    }

    /// Comma-separated grid with a header row and a leading label column.
    pub fn counts_csv(&self, labels: &[&str]) -> String {
        grid_csv(labels, &self.counts, |c| c.to_string())
    }

    pub fn percent_csv(&self, labels: &[&str]) -> String {
        grid_csv(labels, &self.percentages(), |p| format!("{p:.2}"))
    }
}

fn grid_csv<T>(labels: &[&str], rows: &[Vec<T>], fmt: impl Fn(&T) -> String) -> String {
    let mut out = String::from("true\\pred");
    for l in labels {
        let _ = write!(out, ",{l}");
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(rows) {
        out.push_str(l);
        for v in row {
            let _ = write!(out, ",{}", fmt(v));
        }
        out.push('\n');
    }
    out
}

/// Eval-mode predictions over `samples`, batched.
pub fn evaluate(model: &Model, samples: &[Sample], batch_size: usize) -> Result<ConfusionMatrix> {
    let classes = model.config.num_classes;
    let mut truth = Vec::with_capacity(samples.len());
    let mut predicted = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Tensor> = chunk.iter().map(|s| &s.features).collect();
        let x = Tensor::stack(&refs)?;
        predicted.extend(argmax_rows(&model.probabilities(&x)?));
        truth.extend(chunk.iter().map(|s| s.label));
    }
    Ok(ConfusionMatrix::from_predictions(&truth, &predicted, classes))
}
