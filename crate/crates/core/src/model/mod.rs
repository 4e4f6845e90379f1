//! The fully convolutional segmentation network: a VGG-style encoder with optional
//! residual shortcuts, and a bilinear-resize decoder with lateral skip connections.

mod config;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use config::{InitMode, ModelConfig, StackSpec, Variant};

use crate::autograd::{StatUpdate, Tape, Var};
use crate::error::{Error, Result};
use crate::grid::LabelMap;
use crate::ops::{pooled_len, update_running, BnCache, Mode};
use crate::params::{BnLayer, ConvLayer, ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Externally supplied tensors keyed by parameter name, e.g. `conv1_1.weight`.
pub type WeightSource<T> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Debug, PartialEq)]
struct EncoderBlock {
    name: String,
    conv: ConvLayer,
    bn: BnLayer,
}

#[derive(Clone, Debug, PartialEq)]
enum Shortcut {
    Identity,
    Projection(ConvLayer),
}

#[derive(Clone, Debug, PartialEq)]
struct EncoderStack {
    name: &'static str,
    blocks: Vec<EncoderBlock>,
    shortcut: Option<Shortcut>,
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderStage {
    name: String,
    /// Encoder stack whose spatial size this stage restores.
    target: usize,
    conv: ConvLayer,
    skip: Option<ConvLayer>,
}

#[derive(Clone, Debug, PartialEq)]
struct Head {
    score: ConvLayer,
    skip: Option<ConvLayer>,
}

/// Spatial layout of one named stage in a forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageTrace {
    pub name: String,
    pub shape: Shape,
}

/// Handles produced by [`Model::forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    pub probs: Var,
    pub trace: Vec<StageTrace>,
}

enum Init<'a> {
    He(&'a mut ChaCha8Rng),
    Zeros,
}

struct Builder<'a, T: Scalar> {
    params: ParamStore<T>,
    init: Init<'a>,
}

impl<T: Scalar> Builder<'_, T> {
    fn conv(&mut self, name: &str, out_c: usize, in_c: usize, k: usize, bias: bool) -> ConvLayer {
        let shape = Shape::new(out_c, in_c, k, k);
        let weight = match &mut self.init {
            Init::He(rng) => {
                let std = (2.0 / (in_c * k * k) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                let data = (0..shape.len())
                    .map(|_| T::from_f64(normal.sample(*rng)))
                    .collect();
                Tensor::from_vec(shape, data).expect("shape length")
            }
            Init::Zeros => Tensor::zeros(shape),
        };
        let weight = self
            .params
            .push(format!("{name}.weight"), ParamKind::ConvWeight, weight);
        let bias = bias.then(|| {
            self.params.push(
                format!("{name}.bias"),
                ParamKind::ConvBias,
                Tensor::zeros(Shape::channels(out_c)),
            )
        });
        ConvLayer {
            weight,
            bias,
            padding: k / 2,
        }
    }

    fn bn(&mut self, name: &str, c: usize) -> BnLayer {
        let s = Shape::channels(c);
        let gamma = self.params.push(
            format!("{name}.bn.gamma"),
            ParamKind::BnGamma,
            Tensor::full(s, T::one()),
        );
        let beta = self.params.push(
            format!("{name}.bn.beta"),
            ParamKind::BnBeta,
            Tensor::zeros(s),
        );
        let rm = self.params.push(
            format!("{name}.bn.running_mean"),
            ParamKind::RunningMean,
            Tensor::zeros(s),
        );
        let rv = self.params.push(
            format!("{name}.bn.running_var"),
            ParamKind::RunningVar,
            Tensor::full(s, T::one()),
        );
        BnLayer::with_defaults(gamma, beta, rm, rv)
    }
}

/// An instantiated network variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    encoder: Vec<EncoderStack>,
    decoder: Vec<DecoderStage>,
    head: Head,
}

/// Builds and initializes a model. `import` is required for the import init modes.
pub fn build_model<T: Scalar>(
    config: &ModelConfig,
    seed: u64,
    import: Option<&WeightSource<T>>,
) -> Result<Model<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::assemble(config, Init::He(&mut rng))?;
    let layers = config.init_mode.imported_layers();
    if layers > 0 {
        let source = import.ok_or_else(|| {
            Error::Config(format!(
                "init mode {} needs external weights to import",
                config.init_mode
            ))
        })?;
        model.import_encoder(source, layers)?;
    }
    Ok(model)
}

impl<T: Scalar> Model<T> {
    fn assemble(config: &ModelConfig, init: Init<'_>) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            params: ParamStore::new(),
            init,
        };
        let specs = config.stacks();
        let mut encoder = Vec::with_capacity(specs.len());
        let mut in_c = 1;
        let mut stack_channels = Vec::with_capacity(specs.len());
        for (si, spec) in specs.iter().enumerate() {
            let stack_in = in_c;
            let mut blocks = Vec::with_capacity(spec.convs.len());
            for (bi, &(filters, k)) in spec.convs.iter().enumerate() {
                let name = format!("conv{}_{}", si + 1, bi + 1);
                let conv = b.conv(&name, filters, in_c, k, false);
                let bn = b.bn(&name, filters);
                blocks.push(EncoderBlock { name, conv, bn });
                in_c = filters;
            }
            let shortcut = (config.residual_shortcuts && spec.residual).then(|| {
                if stack_in == in_c {
                    Shortcut::Identity
                } else {
                    Shortcut::Projection(b.conv(
                        &format!("{}.shortcut", spec.name),
                        in_c,
                        stack_in,
                        1,
                        true,
                    ))
                }
            });
            stack_channels.push(in_c);
            encoder.push(EncoderStack {
                name: spec.name,
                blocks,
                shortcut,
            });
        }

        let stages = config.variant.decoder_stages();
        let width = config.decoder_width;
        let mut decoder = Vec::with_capacity(stages);
        let mut head_skip = None;
        let mut d_in = in_c;
        for i in 0..stages {
            let target = stages - 1 - i;
            let name = format!("trans{}", 5 - target);
            let conv = b.conv(&name, width, d_in, 3, true);
            let skip_name = format!("skip{}_{}", target + 1, specs[target].convs.len());
            let wants_skip = i < config.skip_count;
            let skip = if target == 0 {
                if wants_skip {
                    head_skip = Some(skip_name);
                }
                None
            } else {
                wants_skip.then(|| b.conv(&skip_name, width, stack_channels[target], 3, true))
            };
            decoder.push(DecoderStage {
                name,
                target,
                conv,
                skip,
            });
            d_in = width;
        }
        let score = b.conv("score", config.num_classes, width, 3, true);
        let skip = head_skip.map(|n| b.conv(&n, config.num_classes, stack_channels[0], 3, true));
        Ok(Self {
            config: config.clone(),
            params: b.params,
            encoder,
            decoder,
            head: Head { score, skip },
        })
    }

    /// A model with the layout of `config` and every tensor taken from `params`.
    /// Names, order and shapes must match exactly.
    pub fn from_params(config: &ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut model = Self::assemble(config, Init::Zeros)?;
        if model.params.len() != params.len() {
            return Err(Error::Config(format!(
                "model {} has {} parameter tensors, got {}",
                config.label(),
                model.params.len(),
                params.len()
            )));
        }
        for ((_, want), (_, got)) in model.params.iter().zip(params.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Config(format!(
                    "parameter `{}` {} does not match expected `{}` {}",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        let kinds: Vec<ParamKind> = model.params.iter().map(|(_, p)| p.kind).collect();
        let mut rebuilt = ParamStore::new();
        for ((_, p), kind) in params.iter().zip(kinds) {
            rebuilt.push(p.name.clone(), kind, p.value.clone());
        }
        model.params = rebuilt;
        Ok(model)
    }

    /// Copies external weights into the first `layers` encoder convolutions.
    ///
    /// A first-layer kernel trained on 3-channel images is collapsed to one input
    /// channel by summing its input slices.
    pub fn import_encoder(&mut self, source: &WeightSource<T>, layers: usize) -> Result<()> {
        let blocks: Vec<EncoderBlock> = self
            .encoder
            .iter()
            .flat_map(|s| s.blocks.iter().cloned())
            .collect();
        if layers > blocks.len() {
            return Err(Error::Import {
                layer: format!("#{layers}"),
                reason: format!("model has only {} encoder convolutions", blocks.len()),
            });
        }
        for block in &blocks[..layers] {
            let key = format!("{}.weight", block.name);
            let src = source.get(&key).ok_or_else(|| Error::Import {
                layer: block.name.clone(),
                reason: format!("`{key}` missing"),
            })?;
            let want = self.params.get(block.conv.weight).shape();
            let got = src.shape();
            let value = if got == want {
                src.clone()
            } else if got.c == 3 && want.c == 1 && (got.n, got.h, got.w) == (want.n, want.h, want.w)
            {
                Tensor::from_fn(want, |o, _, y, x| {
                    src.at(o, 0, y, x) + src.at(o, 1, y, x) + src.at(o, 2, y, x)
                })
            } else {
                return Err(Error::Import {
                    layer: block.name.clone(),
                    reason: format!("shape {got}, expected {want}"),
                });
            };
            *self.params.get_mut(block.conv.weight) = value;
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// Smallest input side accepted.
    pub fn min_input_size(&self) -> usize {
        1 << (self.encoder.len() - 1)
    }

    /// Spatial size of every encoder stack for an `h x w` input.
    pub fn stage_sizes(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut sizes = Vec::with_capacity(self.encoder.len());
        let (mut h, mut w) = (h, w);
        for i in 0..self.encoder.len() {
            if i > 0 {
                (h, w) = (pooled_len(h), pooled_len(w));
            }
            sizes.push((h, w));
        }
        sizes
    }

    /// Names of the encoder convolutions in forward order.
    pub fn encoder_layers(&self) -> Vec<String> {
        self.encoder
            .iter()
            .flat_map(|s| s.blocks.iter().map(|b| b.name.clone()))
            .collect()
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.c != 1 {
            return Err(Error::Channels {
                op: "model input",
                expected: 1,
                actual: shape.c,
            });
        }
        let min = self.min_input_size();
        if shape.h < min || shape.w < min {
            return Err(Error::InputTooSmall {
                height: shape.h,
                width: shape.w,
                min,
                pools: self.encoder.len() - 1,
            });
        }
        Ok(())
    }

    fn conv_bn_relu(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        block: &EncoderBlock,
        mode: Mode,
        relu: bool,
    ) -> Result<Var> {
        let c = tape.conv2d(&self.params, x, block.conv)?;
        let n = tape.batch_norm(&self.params, c, block.bn, mode)?;
        tape.release(c);
        if !relu {
            return Ok(n);
        }
        let r = tape.relu(n);
        tape.release(n);
        Ok(r)
    }

    /// Records the full network on `tape`. `input` must be `(N, 1, H, W)`.
    ///
    /// Training-mode batch statistics are collected on the tape; apply them with
    /// [`apply_stat_updates`](Self::apply_stat_updates).
    pub fn forward(&self, tape: &mut Tape<T>, input: Var, mode: Mode) -> Result<ForwardOutput> {
        self.check_input(tape.value(input).shape())?;
        let mut trace = Vec::new();
        let mut outputs: Vec<Var> = Vec::with_capacity(self.encoder.len());
        let mut h = input;
        for (si, stack) in self.encoder.iter().enumerate() {
            if si > 0 {
                h = tape.maxpool2(h);
            }
            let stack_in = h;
            let last = stack.blocks.len() - 1;
            for (bi, block) in stack.blocks.iter().enumerate() {
                let fuse = bi == last && stack.shortcut.is_some();
                let next = self.conv_bn_relu(tape, h, block, mode, !fuse)?;
                if bi > 0 {
                    tape.release(h);
                }
                h = next;
            }
            if let Some(shortcut) = &stack.shortcut {
                let bypass = match shortcut {
                    Shortcut::Identity => stack_in,
                    Shortcut::Projection(conv) => tape.conv2d(&self.params, stack_in, *conv)?,
                };
                let sum = tape.add(h, bypass)?;
                tape.release(h);
                if bypass != stack_in {
                    tape.release(bypass);
                }
                h = tape.relu(sum);
                tape.release(sum);
            }
            if si > 0 {
                tape.release(stack_in);
            }
            trace.push(StageTrace {
                name: format!("{}_x", stack.name),
                shape: tape.value(h).shape(),
            });
            outputs.push(h);
        }

        let last_stage = self.decoder.len() - 1;
        let mut d = *outputs.last().expect("encoder has stacks");
        let mut logits = None;
        for (i, stage) in self.decoder.iter().enumerate() {
            let s = tape.value(outputs[stage.target]).shape();
            let r = tape.resize(d, s.h, s.w)?;
            let c = tape.conv2d(&self.params, r, stage.conv)?;
            tape.release(r);
            if i == last_stage {
                let a = tape.relu(c);
                tape.release(c);
                trace.push(StageTrace {
                    name: stage.name.clone(),
                    shape: tape.value(a).shape(),
                });
                let mut z = tape.conv2d(&self.params, a, self.head.score)?;
                tape.release(a);
                if let Some(skip) = self.head.skip {
                    let sz = tape.conv2d(&self.params, outputs[0], skip)?;
                    let sum = tape.add(z, sz)?;
                    tape.release(z);
                    tape.release(sz);
                    z = sum;
                }
                logits = Some(z);
            } else {
                let pre = match stage.skip {
                    Some(skip) => {
                        let sz = tape.conv2d(&self.params, outputs[stage.target], skip)?;
                        let sum = tape.add(c, sz)?;
                        tape.release(c);
                        tape.release(sz);
                        sum
                    }
                    None => c,
                };
                let a = tape.relu(pre);
                tape.release(pre);
                trace.push(StageTrace {
                    name: stage.name.clone(),
                    shape: tape.value(a).shape(),
                });
                if i > 0 {
                    tape.release(d);
                }
                d = a;
            }
        }
        let logits = logits.expect("decoder has a final stage");
        let probs = tape.softmax(logits);
        trace.push(StageTrace {
            name: "probs".into(),
            shape: tape.value(probs).shape(),
        });
        Ok(ForwardOutput {
            logits,
            probs,
            trace,
        })
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate]) {
        for u in updates {
            let cache = BnCache::<T> {
                xhat: Tensor::zeros(Shape::new(0, 0, 0, 0)),
                inv_std: Vec::new(),
                mean: u.mean.clone(),
                var: u.var.clone(),
                count: u.count,
                mode: Mode::Training,
            };
            let mut rm = core::mem::replace(
                self.params.get_mut(u.layer.running_mean),
                Tensor::zeros(Shape::channels(0)),
            );
            let rv = self.params.get_mut(u.layer.running_var);
            update_running(&mut rm, rv, &cache, u.layer.momentum);
            *self.params.get_mut(u.layer.running_mean) = rm;
        }
    }

    /// Inference-mode class probabilities `(N, classes, H, W)`.
    pub fn predict_proba(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let x = tape.leaf(image.clone(), false);
        let out = self.forward(&mut tape, x, Mode::Inference)?;
        Ok(tape.take_value(out.probs).expect("probabilities retained"))
    }

    /// Shapes of every stage for an `(1, 1, h, w)` input, computed by a forward pass.
    pub fn trace_shapes(&self, h: usize, w: usize) -> Result<Vec<StageTrace>> {
        let mut tape = Tape::inference();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 1, h, w)), false);
        Ok(self.forward(&mut tape, x, Mode::Inference)?.trace)
    }
}

/// Per-pixel argmax over channels; ties go to the lowest class index.
pub fn predict_classes<T: Scalar>(probs: &Tensor<T>) -> Vec<LabelMap> {
    let s = probs.shape();
    let plane = s.plane();
    (0..s.n)
        .map(|n| {
            let item = probs.item(n);
            let labels = (0..plane)
                .map(|p| {
                    let mut best = 0;
                    for c in 1..s.c {
                        if item[c * plane + p] > item[best * plane + p] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMap::from_vec(s.h, s.w, labels).expect("plane length")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            width_divisor: 32,
            decoder_width: 4,
            ..ModelConfig::new(variant)
        }
    }

    #[test]
    fn vaughan_last_stack() {
        let specs = Variant::Vaughan.stacks();
        assert_eq!(specs[5].convs, alloc::vec![(512, 3), (64, 1)]);
        let m = build_model::<f32>(&tiny(Variant::Vaughan), 1, None).unwrap();
        assert!(m.params().find("conv6_2.weight").is_some());
        assert!(m.params().find("conv6_3.weight").is_none());
        assert!(m.params().find("trans1.weight").is_some());
    }

    #[test]
    fn broomstick_has_no_sixth_stack_or_first_stage() {
        let m = build_model::<f32>(&tiny(Variant::Broomstick), 1, None).unwrap();
        assert!(m
            .params()
            .iter()
            .all(|(_, p)| !p.name.starts_with("conv6") && !p.name.starts_with("trans1")));
        let cfg = ModelConfig {
            skip_count: 5,
            ..tiny(Variant::Broomstick)
        };
        assert!(build_model::<f32>(&cfg, 1, None).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_model::<f32>(&tiny(Variant::Standard), 9, None).unwrap();
        let b = build_model::<f32>(&tiny(Variant::Standard), 9, None).unwrap();
        assert_eq!(a, b);
        let c = build_model::<f32>(&tiny(Variant::Standard), 10, None).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn predict_classes_tie_break() {
        let t = Tensor::<f32>::from_vec(
            Shape::new(1, 3, 1, 2),
            alloc::vec![0.1, 0.4, 0.2, 0.4, 0.7, 0.2],
        )
        .unwrap();
        assert_eq!(predict_classes(&t)[0].data(), &[2, 0]);
    }

    #[test]
    fn input_validation() {
        let m = build_model::<f32>(&tiny(Variant::Vaughan), 1, None).unwrap();
        assert!(matches!(
            m.trace_shapes(31, 64),
            Err(Error::InputTooSmall { .. })
        ));
        let mut tape = Tape::inference();
        let x = tape.leaf(Tensor::<f32>::zeros(Shape::new(1, 2, 32, 32)), false);
        assert!(matches!(
            m.forward(&mut tape, x, Mode::Inference),
            Err(Error::Channels { .. })
        ));
    }

    #[test]
    fn import_requires_source_and_collapses_rgb() {
        let cfg = ModelConfig {
            init_mode: InitMode::Import4,
            ..tiny(Variant::Vaughan)
        };
        assert!(build_model::<f32>(&cfg, 1, None).is_err());
        let skeleton = build_model::<f32>(&tiny(Variant::Vaughan), 1, None).unwrap();
        let mut src = WeightSource::new();
        for name in skeleton.encoder_layers().iter().take(4) {
            let id = skeleton.params().find(&format!("{name}.weight")).unwrap();
            let mut s = skeleton.params().get(id).shape();
            if name == "conv1_1" {
                s.c = 3;
            }
            src.insert(format!("{name}.weight"), Tensor::full(s, 0.5));
        }
        let m = build_model::<f32>(&cfg, 1, Some(&src)).unwrap();
        let w = m.params().get(m.params().find("conv1_1.weight").unwrap());
        assert!(w.data().iter().all(|&v| v == 1.5));
        let w = m.params().get(m.params().find("conv2_2.weight").unwrap());
        assert!(w.data().iter().all(|&v| v == 0.5));

        src.remove("conv2_1.weight");
        let err = build_model::<f32>(&cfg, 1, Some(&src)).unwrap_err();
        assert!(matches!(err, Error::Import { ref layer, .. } if layer == "conv2_1"));
    }
}
