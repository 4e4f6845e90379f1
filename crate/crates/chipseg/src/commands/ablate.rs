use std::path::PathBuf;

use anyhow::Result;
use chipseg_core::eval::{evaluate, MetricsReport};
use chipseg_core::pipeline::{prepare_eval_set, prepare_training_set, PreparedSample};
use chipseg_core::train::{train, TrainConfig};
use chipseg_core::wafergen::Split;
use chipseg_core::{build_model, InitMode, ModelConfig, Variant};

use super::eval::eval_options;
use super::{create_dir, import_source, load_samples, metric_fields, write_text};
use crate::config::RunConfig;
use crate::{history, kv};

pub const TABLE: &str = "ablation.tsv";
pub const TABLE_HEADER: &str = "group\tvariant\tinit\tskips\tweights\tstatus\tpa\tmpa\tmiou\tdca";
pub const SKIP_COUNTS: [usize; 3] = [0, 3, 5];
/// Defect-class weights; `None` trains with uniform weights.
pub const DEFECT_WEIGHTS: [Option<f64>; 4] = [None, Some(500.0), Some(2000.0), Some(15000.0)];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub group: &'static str,
    pub model: ModelConfig,
    pub weights: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub run: AblationRun,
    /// `ok`, or why the run produced no numbers.
    pub status: String,
    pub report: Option<MetricsReport>,
}

pub struct AblateOutput {
    pub dir: PathBuf,
    pub rows: Vec<AblationRow>,
}

fn weights_for(defect: Option<f64>) -> [f64; 3] {
    defect.map_or([1.0, 1.0, 1.0], |w| [100.0, 100.0, w])
}

/// The runs of the selected groups, in table order.
pub fn plan(cfg: &RunConfig) -> Vec<AblationRun> {
    let mut runs = Vec::new();
    for group in &cfg.ablate {
        match group.as_str() {
            "arch" => {
                for variant in Variant::ALL {
                    for init in InitMode::ALL {
                        let model = ModelConfig {
                            variant,
                            skip_count: variant.decoder_stages(),
                            init_mode: init,
                            ..cfg.model.clone()
                        };
                        runs.push(AblationRun {
                            group: "arch",
                            model,
                            weights: cfg.train.class_weights,
                        });
                    }
                }
            }
            "skips" => {
                for skip_count in SKIP_COUNTS {
                    let model = ModelConfig {
                        skip_count,
                        ..cfg.model.clone()
                    };
                    runs.push(AblationRun {
                        group: "skips",
                        model,
                        weights: cfg.train.class_weights,
                    });
                }
            }
            "weights" => {
                for w in DEFECT_WEIGHTS {
                    runs.push(AblationRun {
                        group: "weights",
                        model: cfg.model.clone(),
                        weights: weights_for(w),
                    });
                }
            }
            other => unreachable!("group `{other}` passed config validation"),
        }
    }
    runs
}

fn run_name(i: usize, r: &AblationRun) -> String {
    format!(
        "{i:02}_{}_{}_{}_s{}",
        r.group, r.model.variant, r.model.init_mode, r.model.skip_count
    )
}

fn execute(
    cfg: &RunConfig,
    run: &AblationRun,
    train_set: &[PreparedSample<f32>],
    val_set: &[PreparedSample<f32>],
) -> Result<(MetricsReport, Vec<chipseg_core::train::EpochRecord>)> {
    run.model.validate()?;
    let import = import_source(cfg, run.model.init_mode)?;
    let model = build_model::<f32>(&run.model, cfg.seed, import.as_ref())?;
    let config = TrainConfig {
        class_weights: run.weights,
        ..cfg.train_config()
    };
    let (model, history) = train(model, train_set, val_set, &config, &mut ())?;
    let summary = evaluate(&model, val_set, &eval_options(cfg))?;
    Ok((summary.report()?, history))
}

fn render(rows: &[AblationRow]) -> String {
    let mut s = format!("{TABLE_HEADER}\n");
    for row in rows {
        let r = &row.run;
        let numbers = row
            .report
            .as_ref()
            .map_or_else(|| "-\t-\t-\t-".into(), metric_fields);
        s += &format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.group,
            r.model.variant,
            r.model.init_mode,
            r.model.skip_count,
            kv::render_list(&r.weights),
            row.status,
            numbers
        );
    }
    s
}

/// Trains and scores every run of the selected groups; the table is rewritten after each run.
pub fn run(cfg: &RunConfig) -> Result<AblateOutput> {
    cfg.validate()?;
    let (_, train_raw) = load_samples(cfg, Some(Split::Train))?;
    let (_, val_raw) = load_samples(cfg, Some(Split::Validation))?;
    let train_set = prepare_training_set::<f32>(&train_raw, &cfg.preprocess)?;
    let val_set = prepare_eval_set::<f32>(&val_raw, &cfg.preprocess)?;
    let dir = cfg.output_dir("ablate");
    create_dir(&dir)?;
    write_text(&dir.join("run.cfg"), &cfg.to_text())?;
    let runs = plan(cfg);
    let mut rows = Vec::with_capacity(runs.len());
    for (i, run) in runs.into_iter().enumerate() {
        let name = run_name(i, &run);
        let row = if run.model.init_mode != InitMode::He && cfg.import.is_none() {
            AblationRow {
                run,
                status: "skipped: no --import weights".into(),
                report: None,
            }
        } else {
            match execute(cfg, &run, &train_set, &val_set) {
                Ok((report, hist)) => {
                    write_text(
                        &dir.join(format!("{name}.history.tsv")),
                        &history::render(&hist),
                    )?;
                    AblationRow {
                        run,
                        status: "ok".into(),
                        report: Some(report),
                    }
                }
                Err(e) => AblationRow {
                    run,
                    status: format!("error: {e:#}").replace('\t', " "),
                    report: None,
                },
            }
        };
        eprintln!("{name}: {}", row.status);
        rows.push(row);
        write_text(&dir.join(TABLE), &render(&rows))?;
    }
    Ok(AblateOutput { dir, rows })
}
