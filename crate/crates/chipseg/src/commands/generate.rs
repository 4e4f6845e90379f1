use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use chipseg_core::seed::derive_seed;
use chipseg_core::wafergen::{Dataset, ManifestEntry, Split, WaferGenConfig};
use chipseg_core::{generate_dataset, generate_wafer};

use super::{create_dir, write_text};
use crate::config::RunConfig;
use crate::{fsio, render, wafer_file};

pub struct GenerateOutput {
    pub dir: PathBuf,
    pub dataset: Dataset,
}

/// A lone wafer cannot be split; it goes to the training portion.
fn single(cfg: &RunConfig) -> Result<Dataset> {
    let seed = derive_seed(cfg.seed, 0);
    let cluster = cfg.cluster_fraction >= 0.5;
    let cluster_count = if cluster {
        cfg.wafer.cluster_count.max(1)
    } else {
        0
    };
    let sample = generate_wafer(&WaferGenConfig {
        seed,
        cluster_count,
        ..cfg.wafer.clone()
    })?;
    let entry = ManifestEntry {
        index: 0,
        seed,
        cluster,
        split: Split::Train,
    };
    Ok(Dataset {
        samples: vec![sample],
        manifest: vec![entry],
    })
}

/// Writes one container file per wafer, `manifest.tsv` and the resolved config.
pub fn run(cfg: &RunConfig) -> Result<GenerateOutput> {
    cfg.wafer.validate()?;
    let val_count = match cfg.split {
        Some((train, val)) => {
            if train + val != cfg.count {
                bail!("split {train}:{val} does not add up to count {}", cfg.count);
            }
            Some(val)
        }
        None => None,
    };
    let dataset = if cfg.count == 1 {
        single(cfg)?
    } else {
        generate_dataset(
            &cfg.wafer,
            cfg.count,
            cfg.cluster_fraction,
            cfg.seed,
            val_count,
        )
        .context("generating dataset")?
    };
    let dir = cfg.output_dir("generate");
    create_dir(&dir)?;
    for (entry, sample) in dataset.manifest.iter().zip(&dataset.samples) {
        wafer_file::write(&dir.join(wafer_file::file_name(entry.index)), sample)?;
        if cfg.images {
            let stem = format!("wafer_{:04}", entry.index);
            fsio::write_atomic(
                &dir.join("images").join(format!("{stem}.pgm")),
                &render::brightness_pgm(&sample.image),
            )?;
            fsio::write_atomic(
                &dir.join("images").join(format!("{stem}_labels.ppm")),
                &render::classes_ppm(&sample.labels),
            )?;
        }
    }
    write_text(
        &dir.join(wafer_file::MANIFEST),
        &wafer_file::manifest_text(&dataset.manifest),
    )?;
    write_text(&dir.join("generate.cfg"), &cfg.to_text())?;
    eprintln!(
        "generated {} wafers ({} train, {} val, {} with clusters) in {}",
        dataset.len(),
        dataset.split(Split::Train).len(),
        dataset.split(Split::Validation).len(),
        dataset.manifest.iter().filter(|m| m.cluster).count(),
        dir.display()
    );
    Ok(GenerateOutput { dir, dataset })
}
