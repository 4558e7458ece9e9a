//! Classification metrics with sarcastic (y = 1) as the positive class.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::ModelParams;
use crate::store::Dataset;

pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[u8], actual: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// Set when precision or recall had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let mut zero_division = false;
        let mut ratio = |num: usize, den: usize| {
            if den == 0 {
                zero_division = true;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let accuracy = ratio(c.tp + c.tn, c.total());
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            accuracy,
            precision,
            recall,
            f1,
            confusion: c,
            zero_division,
        }
    }

    pub fn from_probs(probs: &[f64], labels: &[u8]) -> Self {
        let predicted: Vec<u8> = probs.iter().map(|&p| predict_label(p)).collect();
        Metrics::from_confusion(Confusion::from_predictions(&predicted, labels))
    }
}

pub fn predict_label(prob: f64) -> u8 {
    u8::from(prob >= DECISION_THRESHOLD)
}

/// Thresholded predictions of `params` on every record of `ds`.
pub fn evaluate(params: &ModelParams, ds: &Dataset) -> Result<Metrics> {
    let probs = ds
        .records
        .iter()
        .map(|r| params.predict(r))
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics::from_probs(&probs, &ds.labels()))
}

/// Arithmetic means of the headline metrics over several runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MeanMetrics {
    pub fn of(runs: &[Metrics]) -> Self {
        let n = runs.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
        MeanMetrics {
            accuracy: avg(|m| m.accuracy),
            precision: avg(|m| m.precision),
            recall: avg(|m| m.recall),
            f1: avg(|m| m.f1),
        }
    }
}
