//! Training history as tab separated records, one per epoch.

use anyhow::{bail, Context, Result};
use chipseg_core::eval::ConfusionMatrix;
use chipseg_core::train::EpochRecord;

use crate::kv;

pub const HEADER: &str = "epoch\tlr\ttrain_loss\tval_loss\tpa\tmpa\tmiou\tdca\tconfusion";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

pub fn confusion_text(cm: &ConfusionMatrix) -> String {
    cm.counts
        .iter()
        .map(|row| kv::render_list(row))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_confusion(s: &str) -> Result<ConfusionMatrix> {
    let rows: Vec<&str> = s.split(';').collect();
    if rows.len() != 3 {
        bail!("confusion `{s}` must have 3 rows");
    }
    let mut cm = ConfusionMatrix::new();
    for (j, row) in rows.iter().enumerate() {
        let v: Vec<u64> = kv::parse_list(row)?;
        cm.counts[j] = v
            .try_into()
            .map_err(|_| anyhow::anyhow!("confusion row `{row}` must have 3 entries"))?;
    }
    Ok(cm)
}

pub fn line(r: &EpochRecord) -> String {
    let m = r.metrics.as_ref();
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.epoch,
        r.lr,
        r.train_loss,
        opt(r.val_loss),
        opt(m.map(|m| m.pixel_accuracy)),
        opt(m.map(|m| m.mean_pixel_accuracy)),
        opt(m.map(|m| m.mean_iou)),
        opt(m.and_then(|m| m.defect_class_accuracy)),
        r.confusion
            .as_ref()
            .map_or_else(|| "-".into(), confusion_text),
    )
}

pub fn render(records: &[EpochRecord]) -> String {
    let mut s = format!("{HEADER}\n");
    for r in records {
        s += &line(r);
        s.push('\n');
    }
    s
}

/// Parses [`render`] output. Metrics are recomputed from the stored confusion counts.
pub fn parse(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        bail!("history: unexpected header");
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 9 {
                bail!("history line {}: {} fields, expected 9", n + 2, f.len());
            }
            let val_loss = if f[3] == "-" {
                None
            } else {
                Some(kv::parse_num(f[3])?)
            };
            let confusion = if f[8] == "-" {
                None
            } else {
                Some(parse_confusion(f[8])?)
            };
            Ok(EpochRecord {
                epoch: kv::parse_num(f[0])?,
                lr: kv::parse_num(f[1])?,
                train_loss: kv::parse_num(f[2])?,
                val_loss,
                metrics: confusion.map(|c| c.metrics()).transpose()?,
                confusion,
            })
        })
        .collect::<Result<_>>()
        .context("parsing history")
}
