use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::StanceLabel;
use crate::error::{Error, Result};

/// Macro-averaged precision, recall and F1 plus exact-match accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl MetricReport {
    /// Element-wise mean of several reports.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let sum = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricReport {
            precision: sum(|r| r.precision),
            recall: sum(|r| r.recall),
            f1: sum(|r| r.f1),
            accuracy: sum(|r| r.accuracy),
        })
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics over class indices.
///
/// Averages run over the classes that occur in either the predictions or the
/// gold labels. A class that is never predicted has precision 0, and F1 is 0
/// whenever precision and recall are both 0.
pub fn classification_metrics_indexed(predictions: &[usize], golds: &[usize]) -> Result<MetricReport> {
    if predictions.len() != golds.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    let classes: BTreeSet<usize> = predictions.iter().chain(golds).copied().collect();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for &c in &classes {
        let tp = predictions
            .iter()
            .zip(golds)
            .filter(|&(&p, &g)| p == c && g == c)
            .count();
        let predicted = predictions.iter().filter(|&&p| p == c).count();
        let actual = golds.iter().filter(|&&g| g == c).count();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        p_sum += precision;
        r_sum += recall;
        f_sum += f1;
    }
    let n = classes.len() as f64;
    let correct = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(MetricReport {
        precision: p_sum / n,
        recall: r_sum / n,
        f1: f_sum / n,
        accuracy: ratio(correct, golds.len()),
    })
}

pub fn classification_metrics(predictions: &[StanceLabel], golds: &[StanceLabel]) -> Result<MetricReport> {
    let p: Vec<usize> = predictions.iter().map(|l| l.index()).collect();
    let g: Vec<usize> = golds.iter().map(|l| l.index()).collect();
    classification_metrics_indexed(&p, &g)
}
