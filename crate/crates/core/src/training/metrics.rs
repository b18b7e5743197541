use crate::error::{Error, Result};
use crate::labels::LabelMap;

/// Confusion counts over non-ignored pixels; `counts[truth * classes + pred]`.
/// Predictions outside `0..classes` count against the true class only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
    pub stray: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
            stray: vec![0; classes],
        }
    }

    /// Adds every pixel whose truth is a valid class; pixels with the ignore
    /// index (or any truth outside `0..classes`) are skipped.
    pub fn add(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        if pred.shape() != truth.shape() {
            return Err(Error::shape(
                "confusion",
                format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape()),
            ));
        }
        let k = self.classes;
        for (&p, &t) in pred.data().iter().zip(truth.data()) {
            let (p, t) = (p as usize, t as usize);
            if t >= k {
                continue;
            }
            if p < k {
                self.counts[t * k + p] += 1;
            } else {
                self.stray[t] += 1;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.stray.iter().sum::<u64>()
    }

    pub fn pixel_accuracy(&self) -> Option<f64> {
        let total = self.total();
        let correct: u64 = (0..self.classes).map(|c| self.counts[c * self.classes + c]).sum();
        (total > 0).then(|| correct as f64 / total as f64)
    }

    /// `TP / (TP + FP + FN)` per class; `None` for classes absent from both
    /// prediction and truth.
    pub fn iou(&self) -> Vec<Option<f64>> {
        let k = self.classes;
        (0..k)
            .map(|c| {
                let tp = self.counts[c * k + c];
                let fn_: u64 = (0..k).map(|p| self.counts[c * k + p]).sum::<u64>() - tp + self.stray[c];
                let fp: u64 = (0..k).map(|t| self.counts[t * k + c]).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    pub fn mean_iou(&self) -> Option<f64> {
        let present: Vec<f64> = self.iou().into_iter().flatten().collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiouReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

pub fn miou(pred: &LabelMap, truth: &LabelMap, classes: usize) -> Result<MiouReport> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.add(pred, truth)?;
    Ok(MiouReport {
        per_class: cm.iou(),
        mean: cm.mean_iou(),
    })
}

pub fn pixel_accuracy(pred: &LabelMap, truth: &LabelMap, classes: usize) -> Result<Option<f64>> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.add(pred, truth)?;
    Ok(cm.pixel_accuracy())
}
