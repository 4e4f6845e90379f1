use std::path::PathBuf;

use anyhow::{Context, Result};
use chipseg_core::eval::{confusion, ensemble_predict};
use chipseg_core::pipeline::prepare_eval_set;
use chipseg_core::LabelMap;

use super::{create_dir, load_model, metric_fields, write_text};
use crate::config::RunConfig;
use crate::wafer_file::{self, DatasetDir};
use crate::{fsio, render};

pub const PREDICTIONS: &str = "predictions.tsv";

pub struct Prediction {
    pub name: String,
    pub labels: LabelMap,
}

pub struct PredictOutput {
    pub dir: PathBuf,
    pub predictions: Vec<Prediction>,
}

/// Class maps for a wafer file, or for every wafer of a dataset directory.
pub fn run(cfg: &RunConfig) -> Result<PredictOutput> {
    cfg.preprocess.validate()?;
    let model = load_model(cfg, cfg.require(&cfg.checkpoint, "checkpoint")?)?;
    let input = cfg.require(&cfg.input, "input")?;
    let inputs: Vec<(String, _)> = if input.is_dir() {
        let data = DatasetDir::open(input)?;
        data.load(None)?
            .into_iter()
            .map(|(e, s)| (format!("wafer_{:04}", e.index), s))
            .collect()
    } else {
        let stem = input
            .file_stem()
            .map_or_else(|| "wafer".into(), |s| s.to_string_lossy().into_owned());
        vec![(stem, wafer_file::read(input)?)]
    };
    let dir = cfg.output_dir("predict");
    create_dir(&dir)?;
    let mut tsv = String::from("wafer\tpa\tmpa\tmiou\tdca\n");
    let mut predictions = Vec::with_capacity(inputs.len());
    for (name, sample) in inputs {
        let prepared = prepare_eval_set::<f32>(std::slice::from_ref(&sample), &cfg.preprocess)
            .with_context(|| format!("preparing {name}"))?
            .remove(0);
        let labels =
            ensemble_predict(&model, &prepared.image, &cfg.ensemble, cfg.combine)?.remove(0);
        let report = confusion(&labels, &prepared.labels)?.metrics()?;
        tsv += &format!("{name}\t{}\n", metric_fields(&report));
        fsio::write_atomic(
            &dir.join(format!("{name}_pred.pgm")),
            &render::labels_pgm(&labels),
        )?;
        if cfg.images {
            fsio::write_atomic(
                &dir.join(format!("{name}_pred.ppm")),
                &render::classes_ppm(&labels),
            )?;
            fsio::write_atomic(
                &dir.join(format!("{name}_diff.ppm")),
                &render::difference_ppm(&labels, &prepared.labels),
            )?;
        }
        predictions.push(Prediction { name, labels });
    }
    write_text(&dir.join(PREDICTIONS), &tsv)?;
    eprintln!(
        "wrote {} predictions to {}",
        predictions.len(),
        dir.display()
    );
    Ok(PredictOutput { dir, predictions })
}
