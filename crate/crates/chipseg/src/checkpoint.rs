//! Binary checkpoints: model layout, parameters and optional optimizer state.
//!
//! Layout (little endian): magic `CSCK`, u16 version, model config text, u64 completed
//! epochs, u32 tensor count, then per tensor its name, four u32 dims and f32 data.
//! A trailing u8 flag marks training state: u64 Adam step, f64 learning rate, per
//! tensor a presence byte with first and second moments, and the history text.
//! Texts are u32-length-prefixed UTF-8.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chipseg_core::model::WeightSource;
use chipseg_core::train::{EpochRecord, OptimizerState};
use chipseg_core::{Model, ModelConfig, ParamKind, ParamStore, Shape, Tensor};

use crate::config::RunConfig;
use crate::fsio::{self, Reader, Writer};
use crate::{history, kv};

pub const MAGIC: &[u8; 4] = b"CSCK";
pub const VERSION: u16 = 1;
const MODEL_KEYS: &[&str] = &[
    "variant",
    "skips",
    "residual",
    "init",
    "decoder-width",
    "width-divisor",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub optimizer: OptimizerState<f32>,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: usize,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub train_state: Option<TrainState>,
}

pub fn model_config_text(config: &ModelConfig) -> String {
    let run = RunConfig {
        model: config.clone(),
        ..RunConfig::default()
    };
    let mut pairs: Vec<(String, String)> = MODEL_KEYS
        .iter()
        .map(|k| (k.to_string(), run.get(k)))
        .collect();
    pairs.push(("classes".into(), config.num_classes.to_string()));
    kv::render(&pairs)
}

pub fn parse_model_config(text: &str) -> Result<ModelConfig> {
    let mut run = RunConfig::default();
    let mut classes = None;
    for (k, v) in kv::parse(text)? {
        if k == "classes" {
            classes = Some(kv::parse_num(&v)?);
        } else if MODEL_KEYS.contains(&k.as_str()) {
            run.set(&k, &v)?;
        } else {
            bail!("unexpected model key `{k}`");
        }
    }
    Ok(ModelConfig {
        num_classes: classes.unwrap_or(run.model.num_classes),
        ..run.model
    })
}

fn write_tensor(out: &mut Writer, t: &Tensor<f32>) {
    let s = t.shape();
    for d in [s.n, s.c, s.h, s.w] {
        out.u32(d as u32);
    }
    out.f32s(t.data());
}

fn read_tensor(r: &mut Reader<'_>) -> Result<Tensor<f32>> {
    let d = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|v| v as usize);
    let shape = Shape::new(d[0], d[1], d[2], d[3]);
    Ok(Tensor::from_vec(shape, r.f32s(shape.len())?)?)
}

pub fn encode(
    model: &Model<f32>,
    epoch: usize,
    state: Option<(&OptimizerState<f32>, &[EpochRecord])>,
) -> Vec<u8> {
    let mut out = Writer::default();
    out.bytes(MAGIC);
    out.u16(VERSION);
    out.text(&model_config_text(model.config()));
    out.u64(epoch as u64);
    out.u32(model.params().len() as u32);
    for (_, p) in model.params().iter() {
        out.text(&p.name);
        write_tensor(&mut out, &p.value);
    }
    match state {
        None => out.u8(0),
        Some((opt, records)) => {
            out.u8(1);
            out.u64(opt.step);
            out.f64(opt.lr);
            for (m, v) in opt.first.iter().zip(&opt.second) {
                let present = !m.data().is_empty();
                out.u8(present as u8);
                if present {
                    write_tensor(&mut out, m);
                    write_tensor(&mut out, v);
                }
            }
            out.text(&history::render(records));
        }
    }
    out.buf
}

pub fn decode(bytes: &[u8], what: &str) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, what);
    if r.take(4)? != MAGIC {
        bail!("{what}: not a checkpoint (bad magic)");
    }
    let version = r.u16()?;
    if version != VERSION {
        bail!("{what}: unsupported checkpoint version {version}");
    }
    let config = parse_model_config(&r.text()?).with_context(|| format!("{what}: model config"))?;
    let epoch = r.u64()? as usize;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.text()?;
        tensors.push((name, read_tensor(&mut r)?));
    }
    let train_state = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let lr = r.f64()?;
            let mut first = Vec::with_capacity(count);
            let mut second = Vec::with_capacity(count);
            for _ in 0..count {
                if r.u8()? == 1 {
                    first.push(read_tensor(&mut r)?);
                    second.push(read_tensor(&mut r)?);
                } else {
                    first.push(Tensor::zeros(Shape::channels(0)));
                    second.push(Tensor::zeros(Shape::channels(0)));
                }
            }
            let history = history::parse(&r.text()?)?;
            Some(TrainState {
                optimizer: OptimizerState {
                    first,
                    second,
                    step,
                    lr,
                },
                history,
            })
        }
        flag => bail!("{what}: bad training-state flag {flag}"),
    };
    r.finish()?;
    Ok(Checkpoint {
        config,
        epoch,
        tensors,
        train_state,
    })
}

pub fn save(
    path: &Path,
    model: &Model<f32>,
    epoch: usize,
    state: Option<(&OptimizerState<f32>, &[EpochRecord])>,
) -> Result<()> {
    fsio::write_atomic(path, &encode(model, epoch, state))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fsio::read(path)?, &path.display().to_string())
}

impl Checkpoint {
    /// Rebuilds the model; fails if names or shapes disagree with the stored config.
    pub fn model(&self) -> Result<Model<f32>> {
        let mut store = ParamStore::new();
        for (name, t) in &self.tensors {
            // Kinds are reassigned from the layout by `from_params`.
            store.push(name.clone(), ParamKind::ConvWeight, t.clone());
        }
        Model::from_params(&self.config, store)
            .context("checkpoint does not match its model config")
    }

    pub fn weight_source(&self) -> WeightSource<f32> {
        self.tensors.iter().cloned().collect::<BTreeMap<_, _>>()
    }
}
