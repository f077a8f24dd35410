use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_labels(pred: &[usize], gt: &[usize], classes: usize) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::Shape(format!("{} predictions for {} labels", pred.len(), gt.len())));
        }
        let mut m = Self::new(classes);
        for (&p, &g) in pred.iter().zip(gt) {
            if p >= classes || g >= classes {
                return Err(Error::InvalidArgument(format!("class id out of range 0..{classes}: ({g}, {p})")));
            }
            m.counts[g * classes + p] += 1;
        }
        Ok(m)
    }

    #[inline]
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.classes).filter(|&g| g != c).map(|g| self.get(g, c)).sum()
    }

    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.classes).filter(|&p| p != c).map(|p| self.get(c, p)).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    /// Whether the class occurs in the ground truth or the predictions.
    pub present: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub oa: f64,
    pub classes: Vec<ClassMetrics>,
    pub avg_precision: f64,
    pub avg_recall: f64,
    pub avg_f1: f64,
    pub avg_iou: f64,
}

#[inline]
fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Per-class tp/fp/fn scores from tp, fp, fn counts.
pub fn class_scores(tp: u64, fp: u64, fn_: u64) -> ClassMetrics {
    let (tp, fp, fn_) = (tp as f64, fp as f64, fn_ as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    ClassMetrics {
        precision,
        recall,
        f1: ratio(2.0 * precision * recall, precision + recall),
        iou: ratio(tp, tp + fp + fn_),
        present: tp + fp + fn_ > 0.0,
    }
}

/// OA and per-class scores; averages skip classes absent from both the
/// ground truth and the predictions.
pub fn metrics(m: &Confusion) -> Result<Metrics> {
    let total = m.total();
    if total == 0 {
        return Err(Error::InvalidArgument("empty confusion matrix".into()));
    }
    let classes: Vec<ClassMetrics> = (0..m.classes).map(|c| class_scores(m.tp(c), m.fp(c), m.fn_(c))).collect();
    let present: Vec<&ClassMetrics> = classes.iter().filter(|c| c.present).collect();
    let n = present.len() as f64;
    let avg = |f: fn(&ClassMetrics) -> f64| present.iter().map(|c| f(c)).sum::<f64>() / n;
    Ok(Metrics {
        oa: (0..m.classes).map(|c| m.tp(c)).sum::<u64>() as f64 / total as f64,
        avg_precision: avg(|c| c.precision),
        avg_recall: avg(|c| c.recall),
        avg_f1: avg(|c| c.f1),
        avg_iou: avg(|c| c.iou),
        classes,
    })
}
