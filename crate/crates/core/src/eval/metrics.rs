use alloc::format;

use crate::error::{Error, Result};
use crate::grid::{LabelMap, CLASS_DEFECT, NUM_CLASSES};

/// Pixel counts: entry `[j][i]` is the number of pixels of true class `j` predicted as `i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        Self { counts }
    }

    /// Pixels of true class `i`.
    pub fn truth_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Pixels predicted as class `i`.
    pub fn predicted_total(&self, i: usize) -> u64 {
        self.counts.iter().map(|row| row[i]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self
            .counts
            .iter_mut()
            .flatten()
            .zip(other.counts.iter().flatten())
        {
            *a += b;
        }
    }

    pub fn metrics(&self) -> Result<MetricsReport> {
        metrics(self)
    }
}

/// Tallies `predicted` against `truth`.
pub fn confusion(predicted: &LabelMap, truth: &LabelMap) -> Result<ConfusionMatrix> {
    if predicted.dims() != truth.dims() {
        let (ph, pw) = predicted.dims();
        let (th, tw) = truth.dims();
        return Err(Error::Other(format!(
            "prediction is {ph}x{pw} but truth is {th}x{tw}"
        )));
    }
    predicted.validate()?;
    truth.validate()?;
    let mut cm = ConfusionMatrix::new();
    for (&p, &t) in predicted.data().iter().zip(truth.data()) {
        cm.counts[t as usize][p as usize] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub pixel_accuracy: f64,
    pub mean_pixel_accuracy: f64,
    pub mean_iou: f64,
    /// Accuracy on the defect class; `None` when no defect pixel was present.
    pub defect_class_accuracy: Option<f64>,
    pub class_accuracy: [Option<f64>; NUM_CLASSES],
    pub class_iou: [Option<f64>; NUM_CLASSES],
}

/// Pixel accuracy, mean pixel accuracy and mean IoU. Classes absent from the truth
/// are left out of the means.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyConfusion);
    }
    let diag: u64 = (0..NUM_CLASSES).map(|i| cm.counts[i][i]).sum();
    let mut class_accuracy = [None; NUM_CLASSES];
    let mut class_iou = [None; NUM_CLASSES];
    for i in 0..NUM_CLASSES {
        let t = cm.truth_total(i);
        if t == 0 {
            continue;
        }
        let p = cm.counts[i][i] as f64;
        class_accuracy[i] = Some(p / t as f64);
        class_iou[i] = Some(p / (t + cm.predicted_total(i) - cm.counts[i][i]) as f64);
    }
    let mean = |v: &[Option<f64>]| {
        let present: alloc::vec::Vec<f64> = v.iter().flatten().copied().collect();
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(MetricsReport {
        pixel_accuracy: diag as f64 / total as f64,
        mean_pixel_accuracy: mean(&class_accuracy),
        mean_iou: mean(&class_iou),
        defect_class_accuracy: class_accuracy[CLASS_DEFECT as usize],
        class_accuracy,
        class_iou,
    })
}
