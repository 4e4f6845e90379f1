use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use chipseg_core::pipeline::{prepare_eval_set, prepare_training_set};
use chipseg_core::train::{EpochRecord, TrainObserver, Trainer};
use chipseg_core::wafergen::Split;
use chipseg_core::{build_model, Model};

use super::{check_model_keys, create_dir, import_source, load_samples, opt, write_text};
use crate::config::RunConfig;
use crate::{checkpoint, history};

pub const FINAL_CHECKPOINT: &str = "checkpoint.ckpt";
pub const HISTORY: &str = "history.tsv";
pub const RUN_CONFIG: &str = "run.cfg";

pub fn periodic_name(epoch: usize) -> String {
    format!("checkpoint_epoch_{epoch:04}.ckpt")
}

pub struct TrainOutput {
    pub dir: PathBuf,
    pub model: Model<f32>,
    pub history: Vec<EpochRecord>,
}

struct Progress<'a> {
    dir: &'a Path,
    every: usize,
    started: Instant,
}

impl TrainObserver<f32> for Progress<'_> {
    fn on_epoch(&mut self, trainer: &Trainer<f32>, r: &EpochRecord) -> chipseg_core::Result<()> {
        let m = r.metrics.as_ref();
        eprintln!(
            "epoch {:>4}  lr {:.3e}  loss {:.4}  val {}  pa {}  dca {}  {:.0}s",
            r.epoch,
            r.lr,
            r.train_loss,
            opt(r.val_loss),
            opt(m.map(|m| m.pixel_accuracy)),
            opt(m.and_then(|m| m.defect_class_accuracy)),
            self.started.elapsed().as_secs_f64()
        );
        let io = |e: anyhow::Error| chipseg_core::Error::Other(format!("{e:#}"));
        write_text(&self.dir.join(HISTORY), &history::render(trainer.history())).map_err(io)?;
        if self.every > 0 && r.epoch % self.every == 0 {
            let state = (trainer.optimizer(), trainer.history());
            checkpoint::save(
                &self.dir.join(periodic_name(r.epoch)),
                trainer.model(),
                r.epoch,
                Some(state),
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

/// Trains on the `train` split of `data`, validating on its `val` split.
pub fn run(cfg: &RunConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let (_, train_raw) = load_samples(cfg, Some(Split::Train))?;
    let (_, val_raw) = load_samples(cfg, Some(Split::Validation))?;
    let train_set = prepare_training_set::<f32>(&train_raw, &cfg.preprocess)
        .context("preparing training set")?;
    let val_set =
        prepare_eval_set::<f32>(&val_raw, &cfg.preprocess).context("preparing validation set")?;
    let config = cfg.train_config();
    let mut trainer = match &cfg.resume {
        Some(path) => {
            let ck = checkpoint::load(path)?;
            check_model_keys(cfg, &ck.config)
                .with_context(|| format!("resuming from {}", path.display()))?;
            let model = ck.model()?;
            let state = ck.train_state.ok_or_else(|| {
                anyhow!("{} holds no optimizer state to resume from", path.display())
            })?;
            Trainer::resume(model, state.optimizer, ck.epoch, state.history, config)?
        }
        None => {
            let import = import_source(cfg, cfg.model.init_mode)?;
            let model = build_model::<f32>(&cfg.model, cfg.seed, import.as_ref())?;
            Trainer::new(model, config)?
        }
    };
    let dir = cfg.output_dir("train");
    create_dir(&dir)?;
    write_text(&dir.join(RUN_CONFIG), &cfg.to_text())?;
    eprintln!(
        "training {} on {} wafers ({} after augmentation), validating on {}",
        cfg.model.variant,
        train_raw.len(),
        train_set.len(),
        val_set.len()
    );
    let mut progress = Progress {
        dir: &dir,
        every: cfg.checkpoint_every,
        started: Instant::now(),
    };
    trainer.fit(&train_set, &val_set, &mut progress)?;
    checkpoint::save(
        &dir.join(FINAL_CHECKPOINT),
        trainer.model(),
        trainer.epochs_done(),
        Some((trainer.optimizer(), trainer.history())),
    )?;
    write_text(&dir.join(HISTORY), &history::render(trainer.history()))?;
    let (model, _, history) = trainer.into_parts();
    Ok(TrainOutput {
        dir,
        model,
        history,
    })
}
