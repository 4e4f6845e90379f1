//! `.wfr` wafer container and the dataset manifest.
//!
//! Layout (little endian): magic `WFR1`, u16 version, u32 height, u32 width,
//! height*width f32 brightness values row-major, height*width u8 labels, then a
//! u32-length-prefixed UTF-8 `key = value` metadata block.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chipseg_core::wafergen::{DefectGeometry, ManifestEntry, Split, WaferGenConfig, WaferMeta};
use chipseg_core::{Image, LabelMap, WaferSample};

use crate::config::RunConfig;
use crate::fsio::{self, Reader, Writer};
use crate::kv;

pub const MAGIC: &[u8; 4] = b"WFR1";
pub const VERSION: u16 = 1;
pub const MANIFEST: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "index\tfile\tseed\tcluster\tsplit";

/// Generator keys stored in the metadata block, shared with the run config.
const WAFER_KEYS: &[&str] = &[
    "height",
    "width",
    "disc-margin",
    "brightness-field",
    "brightness-amplitude",
    "markers",
    "single-rate",
    "linear-count",
    "void-count",
    "cluster-count",
    "cluster-shape",
    "void-inflation",
    "embedding",
    "noise-sigma",
    "min-contrast",
];

fn pixels(p: &[u32]) -> String {
    p.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
}

fn meta_text(meta: &WaferMeta) -> String {
    let run = RunConfig {
        wafer: meta.config.clone(),
        ..RunConfig::default()
    };
    let mut pairs: Vec<(String, String)> = WAFER_KEYS
        .iter()
        .map(|k| (k.to_string(), run.get(k)))
        .collect();
    pairs.push(("seed".into(), meta.config.seed.to_string()));
    pairs.push(("rotation".into(), meta.rotation.to_string()));
    for d in &meta.defects {
        pairs.push((
            "defect".into(),
            format!(
                "{} label:{} visible:{}",
                d.kind,
                pixels(&d.label),
                pixels(&d.visible)
            ),
        ));
    }
    kv::render(&pairs)
}

fn parse_defect(v: &str) -> Result<DefectGeometry> {
    let mut parts = v.split(' ');
    let kind = parts.next().unwrap_or_default().parse()?;
    let mut field = |name: &str| -> Result<Vec<u32>> {
        let p = parts
            .next()
            .and_then(|p| p.strip_prefix(name))
            .with_context(|| format!("defect missing `{name}`"))?;
        kv::parse_list(p)
    };
    Ok(DefectGeometry {
        kind,
        label: field("label:")?,
        visible: field("visible:")?,
    })
}

fn parse_meta(text: &str) -> Result<WaferMeta> {
    let mut run = RunConfig::default();
    let mut seed = 0;
    let mut rotation = 0;
    let mut defects = Vec::new();
    for (k, v) in kv::parse(text)? {
        match k.as_str() {
            "seed" => seed = kv::parse_num(&v)?,
            "rotation" => rotation = kv::parse_num(&v)?,
            "defect" => defects.push(parse_defect(&v)?),
            _ => run.set(&k, &v)?,
        }
    }
    Ok(WaferMeta {
        config: WaferGenConfig { seed, ..run.wafer },
        defects,
        rotation,
    })
}

pub fn encode(sample: &WaferSample) -> Vec<u8> {
    let (h, w) = sample.labels.dims();
    let mut out = Writer::default();
    out.bytes(MAGIC);
    out.u16(VERSION);
    out.u32(h as u32);
    out.u32(w as u32);
    out.f32s(sample.image.data());
    out.bytes(sample.labels.data());
    out.text(&meta_text(&sample.meta));
    out.buf
}

pub fn decode(bytes: &[u8], what: &str) -> Result<WaferSample> {
    let mut r = Reader::new(bytes, what);
    if r.take(4)? != MAGIC {
        bail!("{what}: not a wafer file (bad magic)");
    }
    let version = r.u16()?;
    if version != VERSION {
        bail!("{what}: unsupported wafer file version {version}");
    }
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let n = h.checked_mul(w).context("grid size overflow")?;
    let image = Image::from_vec(h, w, r.f32s(n)?)?;
    let labels = LabelMap::from_vec(h, w, r.take(n)?.to_vec())?;
    labels.validate().with_context(|| what.to_string())?;
    let meta = parse_meta(&r.text()?).with_context(|| format!("{what}: metadata"))?;
    r.finish()?;
    Ok(WaferSample {
        image,
        labels,
        meta,
    })
}

pub fn write(path: &Path, sample: &WaferSample) -> Result<()> {
    fsio::write_atomic(path, &encode(sample))
}

pub fn read(path: &Path) -> Result<WaferSample> {
    decode(&fsio::read(path)?, &path.display().to_string())
}

pub fn file_name(index: usize) -> String {
    format!("wafer_{index:04}.wfr")
}

pub fn manifest_text(entries: &[ManifestEntry]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        s += &format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.index,
            file_name(e.index),
            e.seed,
            e.cluster as u8,
            e.split
        );
    }
    s
}

/// A dataset directory as listed by its manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetDir {
    pub dir: PathBuf,
    pub entries: Vec<(ManifestEntry, String)>,
}

impl DatasetDir {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            bail!("{}: unexpected header", path.display());
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                bail!(
                    "{}: line {} has {} fields, expected 5",
                    path.display(),
                    n + 2,
                    f.len()
                );
            }
            let entry = ManifestEntry {
                index: kv::parse_num(f[0])?,
                seed: kv::parse_num(f[2])?,
                cluster: f[3] == "1",
                split: f[4].parse::<Split>()?,
            };
            entries.push((entry, f[1].to_string()));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            entries,
        })
    }

    /// Samples of one split (or all when `split` is `None`), in manifest order.
    pub fn load(&self, split: Option<Split>) -> Result<Vec<(ManifestEntry, WaferSample)>> {
        self.entries
            .iter()
            .filter(|(e, _)| split.is_none_or(|s| e.split == s))
            .map(|(e, f)| Ok((*e, read(&self.dir.join(f))?)))
            .collect()
    }
}
