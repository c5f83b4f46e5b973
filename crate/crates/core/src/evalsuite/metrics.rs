use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ndtensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum MetricKind {
    #[default]
    Top1,
    MeanPerClass,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Top1 => "top1",
            MetricKind::MeanPerClass => "mean_per_class",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "top1" => Ok(MetricKind::Top1),
            "mean_per_class" => Ok(MetricKind::MeanPerClass),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<usize>> {
    let (n, k) = match logits.shape() {
        [n, k] if *k > 0 => (*n, *k),
        s => return Err(Error::shape("argmax_rows", format!("expected N×K logits, got {s:?}"))),
    };
    Ok((0..n)
        .map(|i| {
            let row = &logits.data()[i * k..(i + 1) * k];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

fn check_labels(predictions: &[usize], labels: &[usize]) -> Result<()> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::shape(
            "accuracy",
            format!("{} predictions for {} labels", predictions.len(), labels.len()),
        ));
    }
    Ok(())
}

pub fn top1_from_predictions(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_labels(predictions, labels)?;
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn top1_accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    top1_from_predictions(&argmax_rows(logits)?, labels)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanPerClass {
    pub accuracy: f64,
    /// Classes in `0..K` with no evaluated samples, left out of the mean.
    pub excluded: usize,
}

pub fn mean_per_class_from_predictions(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<MeanPerClass> {
    check_labels(predictions, labels)?;
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= n_classes {
            return Err(Error::LabelOutOfRange { label: l, classes: n_classes });
        }
        totals[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    let present: Vec<f64> = hits
        .iter()
        .zip(&totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&h, &t)| h as f64 / t as f64)
        .collect();
    Ok(MeanPerClass {
        accuracy: present.iter().sum::<f64>() / present.len() as f64,
        excluded: n_classes - present.len(),
    })
}

pub fn mean_per_class_accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize], n_classes: usize) -> Result<MeanPerClass> {
    mean_per_class_from_predictions(&argmax_rows(logits)?, labels, n_classes)
}

/// The metric `kind` for predictions against labels.
pub fn score(kind: MetricKind, predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    match kind {
        MetricKind::Top1 => top1_from_predictions(predictions, labels),
        MetricKind::MeanPerClass => Ok(mean_per_class_from_predictions(predictions, labels, n_classes)?.accuracy),
    }
}
