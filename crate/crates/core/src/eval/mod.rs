//! Segmentation metrics, rotation-ensemble inference and cross-validation.

mod ensemble;
mod metrics;
mod xval;

use alloc::vec::Vec;

pub use ensemble::{ensemble_predict, ensemble_proba, rotated_probabilities, Combine};
pub use metrics::{confusion, metrics, ConfusionMatrix, MetricsReport};
pub use xval::{cross_validate, fold_partition, CrossValReport, FoldResult, MetricSummary};

use crate::error::Result;
use crate::grid::{LabelMap, NUM_CLASSES};
use crate::model::{predict_classes, Model};
use crate::pipeline::PreparedSample;
use crate::scalar::Scalar;
use crate::train::weighted_cross_entropy;

/// Options for scoring a model on a prepared set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub class_weights: [f64; NUM_CLASSES],
    pub mask_background_loss: bool,
    pub angles: Vec<u32>,
    pub combine: Combine,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            class_weights: [100.0, 100.0, 2000.0],
            mask_background_loss: false,
            angles: alloc::vec![0],
            combine: Combine::Mean,
        }
    }
}

/// Pooled and per-wafer results of [`evaluate`].
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    /// Mean weighted loss over wafers.
    pub loss: f64,
    pub confusion: ConfusionMatrix,
    pub per_wafer: Vec<ConfusionMatrix>,
    pub predictions: Vec<LabelMap>,
}

impl EvalSummary {
    pub fn report(&self) -> Result<MetricsReport> {
        self.confusion.metrics()
    }
}

/// Runs inference over `samples`, pooling confusion counts across wafers.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    samples: &[PreparedSample<T>],
    options: &EvalOptions,
) -> Result<EvalSummary> {
    let mut pooled = ConfusionMatrix::new();
    let mut per_wafer = Vec::with_capacity(samples.len());
    let mut predictions = Vec::with_capacity(samples.len());
    let mut loss = 0.0;
    for s in samples {
        let probs = ensemble_proba(model, &s.image, &options.angles)?;
        loss += weighted_cross_entropy(
            &probs,
            &s.one_hot,
            &options.class_weights,
            options.mask_background_loss,
        )?
        .loss;
        let predicted = match options.combine {
            Combine::Mean => predict_classes(&probs).remove(0),
            Combine::Vote => {
                ensemble_predict(model, &s.image, &options.angles, Combine::Vote)?.remove(0)
            }
        };
        let cm = confusion(&predicted, &s.labels)?;
        pooled.merge(&cm);
        per_wafer.push(cm);
        predictions.push(predicted);
    }
    let loss = if samples.is_empty() {
        0.0
    } else {
        loss / samples.len() as f64
    };
    Ok(EvalSummary {
        loss,
        confusion: pooled,
        per_wafer,
        predictions,
    })
}
