//! Subcommand implementations. Each takes a resolved [`RunConfig`] and writes its
//! results below the configured output directory.

use std::path::Path;

use anyhow::{bail, Context, Result};
use chipseg_core::eval::{ConfusionMatrix, MetricsReport};
use chipseg_core::model::WeightSource;
use chipseg_core::wafergen::Split;
use chipseg_core::{InitMode, Model, ModelConfig, WaferSample};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::wafer_file::DatasetDir;

pub mod ablate;
pub mod eval;
pub mod generate;
pub mod predict;
pub mod train;
pub mod xval;

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    crate::fsio::write_atomic(path, text.as_bytes())
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// `train`, `val` or `all`.
pub(crate) fn parse_split(name: &str) -> Result<Option<Split>> {
    match name {
        "all" => Ok(None),
        other => Ok(Some(other.parse::<Split>()?)),
    }
}

pub(crate) fn load_samples(
    cfg: &RunConfig,
    split: Option<Split>,
) -> Result<(DatasetDir, Vec<WaferSample>)> {
    let dir = DatasetDir::open(cfg.require(&cfg.data, "data")?)?;
    let samples = dir.load(split)?.into_iter().map(|(_, s)| s).collect();
    Ok((dir, samples))
}

/// Model keys given explicitly must agree with the checkpoint's own config.
pub(crate) fn check_model_keys(cfg: &RunConfig, stored: &ModelConfig) -> Result<()> {
    let checks = [
        ("variant", cfg.model.variant != stored.variant),
        ("skips", cfg.model.skip_count != stored.skip_count),
        (
            "residual",
            cfg.model.residual_shortcuts != stored.residual_shortcuts,
        ),
        (
            "decoder-width",
            cfg.model.decoder_width != stored.decoder_width,
        ),
        (
            "width-divisor",
            cfg.model.width_divisor != stored.width_divisor,
        ),
    ];
    for (key, differs) in checks {
        if cfg.is_explicit(key) && differs {
            let mut stored_cfg = RunConfig {
                model: stored.clone(),
                ..RunConfig::default()
            };
            stored_cfg.model.init_mode = cfg.model.init_mode;
            bail!(
                "model config mismatch: `{key}` is {} but the checkpoint was trained with {}",
                cfg.get(key),
                stored_cfg.get(key)
            );
        }
    }
    Ok(())
}

pub(crate) fn load_model(cfg: &RunConfig, path: &Path) -> Result<Model<f32>> {
    let ck = checkpoint::load(path)?;
    check_model_keys(cfg, &ck.config).with_context(|| format!("loading {}", path.display()))?;
    ck.model()
        .with_context(|| format!("loading {}", path.display()))
}

/// Encoder weights for the import init modes.
pub(crate) fn import_source(cfg: &RunConfig, init: InitMode) -> Result<Option<WeightSource<f32>>> {
    if init == InitMode::He {
        return Ok(None);
    }
    let path = cfg.require(&cfg.import, "import")?;
    Ok(Some(checkpoint::load(path)?.weight_source()))
}

pub(crate) fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

pub(crate) fn metric_fields(r: &MetricsReport) -> String {
    format!(
        "{:.6}\t{:.6}\t{:.6}\t{}",
        r.pixel_accuracy,
        r.mean_pixel_accuracy,
        r.mean_iou,
        opt(r.defect_class_accuracy)
    )
}

pub(crate) fn confusion_field(cm: &ConfusionMatrix) -> String {
    crate::history::confusion_text(cm)
}

/// Multi-line confusion matrix with row and column labels.
pub(crate) fn confusion_table(cm: &ConfusionMatrix) -> String {
    let names = ["background", "in-spec", "defect"];
    let mut s = format!("{:>12}", "truth\\pred");
    for n in names {
        s += &format!("{n:>12}");
    }
    s.push('\n');
    for (i, row) in cm.counts.iter().enumerate() {
        s += &format!("{:>12}", names[i]);
        for v in row {
            s += &format!("{v:>12}");
        }
        s.push('\n');
    }
    s
}

pub(crate) fn report_text(r: &MetricsReport) -> String {
    let names = ["background", "in-spec", "defect"];
    let mut s = format!(
        "pixel accuracy       {:.6}\nmean pixel accuracy  {:.6}\nmean IoU             {:.6}\ndefect class acc.    {}\n",
        r.pixel_accuracy,
        r.mean_pixel_accuracy,
        r.mean_iou,
        opt(r.defect_class_accuracy)
    );
    for (i, n) in names.iter().enumerate() {
        s += &format!(
            "class {n:<12} acc {}  iou {}\n",
            opt(r.class_accuracy[i]),
            opt(r.class_iou[i])
        );
    }
    s
}
