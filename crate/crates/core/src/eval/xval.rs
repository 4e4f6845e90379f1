use alloc::format;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate, ConfusionMatrix, MetricsReport};
use crate::error::{Error, Result};
use crate::model::{build_model, ModelConfig, WeightSource};
use crate::pipeline::{prepare_eval_set, prepare_training_set, PreprocessConfig};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::train::{EpochRecord, TrainConfig, TrainObserver, Trainer};
use crate::wafergen::WaferSample;

/// Splits sample indices into `folds` disjoint validation folds of near-equal size.
///
/// With `stratify`, cluster samples are dealt round-robin first and the remaining
/// samples continue the rotation, so each fold gets an even share of both.
pub fn fold_partition(
    cluster: &[bool],
    folds: usize,
    stratify: bool,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || cluster.len() < folds {
        return Err(Error::Config(format!(
            "{} samples cannot form {folds} folds (need folds >= 2)",
            cluster.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = if stratify {
        let (c, p): (Vec<usize>, Vec<usize>) = (0..cluster.len()).partition(|&i| cluster[i]);
        if !c.is_empty() && c.len() < folds {
            return Err(Error::Stratification(format!(
                "{} cluster wafers cannot be spread over {folds} folds",
                c.len()
            )));
        }
        alloc::vec![c, p]
    } else {
        alloc::vec![(0..cluster.len()).collect()]
    };
    let mut out = alloc::vec![Vec::new(); folds];
    let mut next = 0;
    for mut g in groups {
        g.shuffle(&mut rng);
        for i in g {
            out[next].push(i);
            next = (next + 1) % folds;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub validation: Vec<usize>,
    pub confusion: ConfusionMatrix,
    pub report: MetricsReport,
    pub history: Vec<EpochRecord>,
}

/// Mean and sample standard deviation of one metric over folds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    /// Folds that contributed a value.
    pub count: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                count: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            count: n,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossValReport {
    pub folds: Vec<FoldResult>,
    pub pixel_accuracy: MetricSummary,
    pub mean_pixel_accuracy: MetricSummary,
    pub mean_iou: MetricSummary,
    pub defect_class_accuracy: MetricSummary,
}

/// Trains a fresh model per fold and scores it on the held-out wafers.
///
/// Fold `k` builds its model from `derive_seed(master_seed, k)` and trains with the
/// same derived seed.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate<T: Scalar>(
    samples: &[WaferSample],
    folds: usize,
    stratify: bool,
    master_seed: u64,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    preprocess: &PreprocessConfig,
    import: Option<&WeightSource<T>>,
    observer: &mut dyn FnMut(usize) -> alloc::boxed::Box<dyn TrainObserver<T>>,
) -> Result<CrossValReport> {
    let flags: Vec<bool> = samples.iter().map(WaferSample::is_cluster).collect();
    let partition = fold_partition(&flags, folds, stratify, master_seed)?;
    let mut results = Vec::with_capacity(folds);
    for (k, val_idx) in partition.into_iter().enumerate() {
        let mut train = Vec::with_capacity(samples.len() - val_idx.len());
        let mut val = Vec::with_capacity(val_idx.len());
        for (i, s) in samples.iter().enumerate() {
            if val_idx.binary_search(&i).is_ok() {
                val.push(s.clone());
            } else {
                train.push(s.clone());
            }
        }
        let train_set = prepare_training_set::<T>(&train, preprocess)?;
        let val_set = prepare_eval_set::<T>(&val, preprocess)?;
        let seed = derive_seed(master_seed, k as u64);
        let model = build_model(model_config, seed, import)?;
        let config = TrainConfig {
            seed,
            ..train_config.clone()
        };
        let mut trainer = Trainer::new(model, config.clone())?;
        let mut obs = observer(k);
        trainer.fit(&train_set, &val_set, obs.as_mut())?;
        let summary = evaluate(trainer.model(), &val_set, &config.eval_options())?;
        let (_, _, history) = trainer.into_parts();
        results.push(FoldResult {
            fold: k,
            validation: val_idx,
            report: summary.report()?,
            confusion: summary.confusion,
            history,
        });
    }
    let collect = |f: fn(&MetricsReport) -> Option<f64>| -> MetricSummary {
        MetricSummary::of(
            &results
                .iter()
                .filter_map(|r| f(&r.report))
                .collect::<Vec<_>>(),
        )
    };
    Ok(CrossValReport {
        pixel_accuracy: collect(|r| Some(r.pixel_accuracy)),
        mean_pixel_accuracy: collect(|r| Some(r.mean_pixel_accuracy)),
        mean_iou: collect(|r| Some(r.mean_iou)),
        defect_class_accuracy: collect(|r| r.defect_class_accuracy),
        folds: results,
    })
}
