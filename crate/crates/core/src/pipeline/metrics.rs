use serde::Serialize;

use crate::error::{Error, Result};

/// Class-by-class counts; rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Data("confusion matrix must be square".into()));
        }
        Ok(Self {
            num_classes: n,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.num_classes + pred] += 1;
    }

    pub fn add_all(&mut self, truth: &[usize], pred: &[usize]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::Data(format!(
                "{} labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let c = self.num_classes;
        if let Some(bad) = truth.iter().chain(pred).find(|&&x| x >= c) {
            return Err(Error::Data(format!("class {bad} out of range for {c} classes")));
        }
        truth.iter().zip(pred).for_each(|(&t, &p)| self.add(t, p));
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::Data("cannot merge confusion matrices of different size".into()));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.num_classes.max(1))
    }
}

/// IoU per class (`None` when the class is absent from both truth and
/// prediction), their mean over present classes, and overall accuracy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub miou: f64,
    pub oa: f64,
    pub per_class_iou: Vec<Option<f64>>,
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let c = cm.num_classes();
    let mut trace = 0u64;
    let mut per_class_iou = Vec::with_capacity(c);
    for k in 0..c {
        let tp = cm.get(k, k);
        trace += tp;
        let row: u64 = (0..c).map(|j| cm.get(k, j)).sum();
        let col: u64 = (0..c).map(|i| cm.get(i, k)).sum();
        let union = row + col - tp;
        per_class_iou.push((union > 0).then(|| tp as f64 / union as f64));
    }
    let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    let miou = present.iter().sum::<f64>() / present.len() as f64;
    Ok(Metrics {
        miou,
        oa: trace as f64 / total as f64,
        per_class_iou,
    })
}
