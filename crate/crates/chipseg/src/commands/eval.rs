use std::path::PathBuf;

use anyhow::{Context, Result};
use chipseg_core::eval::{evaluate, EvalOptions, EvalSummary, MetricsReport};
use chipseg_core::pipeline::prepare_eval_set;
use chipseg_core::wafergen::ManifestEntry;

use super::{
    confusion_field, confusion_table, create_dir, load_model, metric_fields, parse_split,
    report_text, write_text,
};
use crate::config::RunConfig;
use crate::wafer_file::DatasetDir;
use crate::{fsio, render};

pub const REPORT: &str = "report.txt";
pub const METRICS: &str = "metrics.tsv";
pub const METRICS_HEADER: &str = "wafer\tseed\tcluster\tpa\tmpa\tmiou\tdca\tconfusion";

pub struct EvalOutput {
    pub dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub summary: EvalSummary,
    pub report: MetricsReport,
}

pub(crate) fn eval_options(cfg: &RunConfig) -> EvalOptions {
    EvalOptions {
        angles: cfg.ensemble.clone(),
        combine: cfg.combine,
        ..cfg.train.eval_options()
    }
}

/// Scores a checkpoint on one split of a dataset directory.
pub fn run(cfg: &RunConfig) -> Result<EvalOutput> {
    cfg.preprocess.validate()?;
    let ck_path = cfg.require(&cfg.checkpoint, "checkpoint")?;
    let model = load_model(cfg, ck_path)?;
    let data = DatasetDir::open(cfg.require(&cfg.data, "data")?)?;
    let loaded = data.load(parse_split(&cfg.eval_split)?)?;
    let (entries, samples): (Vec<ManifestEntry>, Vec<_>) = loaded.into_iter().unzip();
    let prepared = prepare_eval_set::<f32>(&samples, &cfg.preprocess)?;
    let summary = evaluate(&model, &prepared, &eval_options(cfg)).context("evaluating")?;
    let report = summary.report()?;

    let dir = cfg.output_dir("eval");
    create_dir(&dir)?;
    let mut tsv = format!("{METRICS_HEADER}\n");
    for (i, e) in entries.iter().enumerate() {
        let (cm, pred, truth) = (
            &summary.per_wafer[i],
            &summary.predictions[i],
            &prepared[i].labels,
        );
        tsv += &format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.index,
            e.seed,
            e.cluster as u8,
            metric_fields(&cm.metrics()?),
            confusion_field(cm)
        );
        if cfg.images {
            let stem = format!("wafer_{:04}", e.index);
            let images = dir.join("images");
            fsio::write_atomic(
                &images.join(format!("{stem}_pred.ppm")),
                &render::classes_ppm(pred),
            )?;
            fsio::write_atomic(
                &images.join(format!("{stem}_truth.ppm")),
                &render::classes_ppm(truth),
            )?;
            fsio::write_atomic(
                &images.join(format!("{stem}_diff.ppm")),
                &render::difference_ppm(pred, truth),
            )?;
        }
    }
    tsv += &format!(
        "all\t-\t-\t{}\t{}\n",
        metric_fields(&report),
        confusion_field(&summary.confusion)
    );
    write_text(&dir.join(METRICS), &tsv)?;

    let angles: Vec<String> = cfg.ensemble.iter().map(u32::to_string).collect();
    let text = format!(
        "checkpoint  {}\ndataset     {}\nsplit       {} ({} wafers)\nensemble    {} ({})\nloss        {:.6}\n\n{}\nconfusion (pixels)\n{}",
        ck_path.display(),
        data.dir.display(),
        cfg.eval_split,
        entries.len(),
        angles.join(","),
        cfg.combine,
        summary.loss,
        report_text(&report),
        confusion_table(&summary.confusion)
    );
    write_text(&dir.join(REPORT), &text)?;
    eprint!("{}", report_text(&report));
    Ok(EvalOutput {
        dir,
        entries,
        summary,
        report,
    })
}
