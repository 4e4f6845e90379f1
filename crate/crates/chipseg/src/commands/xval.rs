use std::path::PathBuf;

use anyhow::Result;
use chipseg_core::eval::{cross_validate, CrossValReport, MetricSummary};
use chipseg_core::train::{EpochRecord, TrainObserver, Trainer};

use super::{confusion_field, create_dir, import_source, load_samples, metric_fields, write_text};
use crate::config::RunConfig;
use crate::history;

pub const FOLDS: &str = "folds.tsv";
pub const SUMMARY: &str = "summary.txt";

pub struct XvalOutput {
    pub dir: PathBuf,
    pub report: CrossValReport,
}

struct FoldProgress(usize);

impl TrainObserver<f32> for FoldProgress {
    fn on_epoch(&mut self, _: &Trainer<f32>, r: &EpochRecord) -> chipseg_core::Result<()> {
        eprintln!(
            "fold {} epoch {:>4}  loss {:.4}",
            self.0, r.epoch, r.train_loss
        );
        Ok(())
    }
}

fn summary_line(name: &str, m: &MetricSummary) -> String {
    format!("{name:<22}{:.6} +- {:.6}\n", m.mean, m.std)
}

/// K-fold cross-validation over every wafer of `data`, ignoring its split column.
pub fn run(cfg: &RunConfig) -> Result<XvalOutput> {
    cfg.validate()?;
    let (_, samples) = load_samples(cfg, None)?;
    let import = import_source(cfg, cfg.model.init_mode)?;
    let report = cross_validate::<f32>(
        &samples,
        cfg.folds,
        cfg.stratify,
        cfg.seed,
        &cfg.model,
        &cfg.train_config(),
        &cfg.preprocess,
        import.as_ref(),
        &mut |k| Box::new(FoldProgress(k)),
    )?;
    let dir = cfg.output_dir("xval");
    create_dir(&dir)?;
    write_text(&dir.join("run.cfg"), &cfg.to_text())?;
    let mut tsv = String::from("fold\twafers\tpa\tmpa\tmiou\tdca\tconfusion\tvalidation\n");
    for f in &report.folds {
        let members: Vec<String> = f.validation.iter().map(usize::to_string).collect();
        tsv += &format!(
            "{}\t{}\t{}\t{}\t{}\n",
            f.fold,
            f.validation.len(),
            metric_fields(&f.report),
            confusion_field(&f.confusion),
            members.join(",")
        );
        let fold_dir = dir.join(format!("fold_{}", f.fold));
        create_dir(&fold_dir)?;
        write_text(&fold_dir.join("history.tsv"), &history::render(&f.history))?;
        write_text(&fold_dir.join("report.txt"), &super::report_text(&f.report))?;
    }
    write_text(&dir.join(FOLDS), &tsv)?;
    let summary = format!(
        "{} folds over {} wafers (stratified: {})\n{}{}{}{}",
        report.folds.len(),
        samples.len(),
        cfg.stratify,
        summary_line("pixel accuracy", &report.pixel_accuracy),
        summary_line("mean pixel accuracy", &report.mean_pixel_accuracy),
        summary_line("mean IoU", &report.mean_iou),
        summary_line("defect class acc.", &report.defect_class_accuracy),
    );
    write_text(&dir.join(SUMMARY), &summary)?;
    eprint!("{summary}");
    Ok(XvalOutput { dir, report })
}
