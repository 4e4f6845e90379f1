//! Resolved run configuration: every tunable of every command under one flat key space.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chipseg_core::eval::Combine;
use chipseg_core::pipeline::PreprocessConfig;
use chipseg_core::train::TrainConfig;
use chipseg_core::wafergen::WaferGenConfig;
use chipseg_core::{InitMode, ModelConfig, Variant};

use crate::kv;

/// Environment variable naming the default parent directory of command outputs.
pub const OUTPUT_ROOT_ENV: &str = "CHIPSEG_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub wafer: WaferGenConfig,
    pub count: usize,
    pub cluster_fraction: f64,
    /// Train/validation sizes; `None` uses the production ratio.
    pub split: Option<(usize, usize)>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub checkpoint_every: usize,
    pub ensemble: Vec<u32>,
    pub combine: Combine,
    /// Which manifest split `eval` scores: `train`, `val` or `all`.
    pub eval_split: String,
    pub folds: usize,
    pub stratify: bool,
    /// Experiment groups run by `ablate`.
    pub ablate: Vec<String>,
    pub images: bool,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub import: Option<PathBuf>,
    pub input: Option<PathBuf>,
    /// Keys set through `set`, from the command line or a config file.
    pub explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            wafer: WaferGenConfig::default(),
            count: 145,
            cluster_fraction: 0.37,
            split: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            preprocess: PreprocessConfig::default(),
            checkpoint_every: 10,
            ensemble: vec![0],
            combine: Combine::Mean,
            eval_split: "val".into(),
            folds: 4,
            stratify: true,
            ablate: ABLATION_GROUPS.iter().map(|g| g.to_string()).collect(),
            images: true,
            data: None,
            out: None,
            checkpoint: None,
            resume: None,
            import: None,
            input: None,
            explicit: BTreeSet::new(),
        }
    }
}

pub const ABLATION_GROUPS: [&str; 3] = ["arch", "skips", "weights"];

/// Every accepted key with a one-line description, in file order.
pub const KEYS: &[(&str, &str)] = &[
    (
        "seed",
        "master seed for data generation, initialization and shuffling",
    ),
    ("height", "wafer grid height in chips"),
    ("width", "wafer grid width in chips"),
    (
        "disc-margin",
        "gap between disc and image border, fraction of the radius",
    ),
    ("brightness-field", "uniform | radial | linear | blotchy"),
    (
        "brightness-amplitude",
        "largest relative brightness drop of the field",
    ),
    ("markers", "alignment markers per wafer"),
    ("single-rate", "per-chip probability of an isolated defect"),
    ("linear-count", "linear defects per wafer"),
    ("void-count", "voids per wafer"),
    ("cluster-count", "defect clusters on a cluster wafer"),
    ("cluster-shape", "blob | elongated | ring"),
    (
        "void-inflation",
        "void label extent relative to its visible extent",
    ),
    ("embedding", "darken the full labelled void area"),
    ("noise-sigma", "additive Gaussian noise"),
    ("min-contrast", "minimum darkening of a defect chip"),
    ("count", "wafers to generate"),
    (
        "cluster-fraction",
        "share of wafers carrying a defect cluster",
    ),
    ("split", "train:val sizes, or `auto` for 106:39 proportions"),
    ("variant", "standard | vaughan | broomstick"),
    ("skips", "number of skip connections, innermost first"),
    ("residual", "residual shortcuts in stacks 3 to 5"),
    ("init", "he | import4 | import10"),
    ("decoder-width", "channels of every decoder stage"),
    (
        "width-divisor",
        "divide encoder filter counts (1 = full width)",
    ),
    (
        "weights",
        "class weights background,in-spec,defect, or `none`",
    ),
    ("lr", "initial learning rate"),
    ("lr-decay", "learning-rate factor per epoch"),
    ("weight-decay", "L2 factor on convolution weights"),
    ("epochs", "training epochs"),
    ("batch-size", "wafers per update"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("adam-eps", "Adam epsilon"),
    ("eval-every", "validate every N epochs"),
    ("mask-background", "leave background pixels out of the loss"),
    (
        "checkpoint-every",
        "write a checkpoint every N epochs (0 = final only)",
    ),
    ("mean-value", "scalar subtracted after normalization"),
    ("normalize", "standardize each image"),
    ("rotations", "training rotations, e.g. 90,180,270 or none"),
    (
        "pad-square",
        "pad non-square wafers so every rotation is valid",
    ),
    ("ensemble", "prediction angles, e.g. 0,90,180,270"),
    ("combine", "mean | vote"),
    ("eval-split", "train | val | all"),
    ("folds", "cross-validation folds"),
    ("stratify", "balance cluster wafers across folds"),
    ("ablate", "ablation groups: arch, skips, weights"),
    ("images", "write prediction and difference images"),
    ("data", "dataset directory"),
    ("out", "output directory"),
    ("checkpoint", "checkpoint file to evaluate or predict with"),
    ("resume", "checkpoint to continue training from"),
    (
        "import",
        "checkpoint supplying encoder weights for import4/import10",
    ),
    ("input", "wafer file or dataset directory to predict"),
];

fn path_value(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or_else(|| "none".into(), |p| p.display().to_string())
}

fn parse_path(v: &str) -> Option<PathBuf> {
    (v != "none" && !v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Applies one setting; `key` may use `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('_', "-");
        let v = value.trim();
        let r: Result<()> = (|| {
            match key.as_str() {
                "seed" => self.seed = kv::parse_num(v)?,
                "height" => self.wafer.height = kv::parse_num(v)?,
                "width" => self.wafer.width = kv::parse_num(v)?,
                "disc-margin" => self.wafer.disc_margin_frac = kv::parse_num(v)?,
                "brightness-field" => self.wafer.brightness_field = v.parse()?,
                "brightness-amplitude" => self.wafer.brightness_amplitude = kv::parse_num(v)?,
                "markers" => self.wafer.marker_count = kv::parse_num(v)?,
                "single-rate" => self.wafer.single_defect_rate = kv::parse_num(v)?,
                "linear-count" => self.wafer.linear_defect_count = kv::parse_num(v)?,
                "void-count" => self.wafer.void_count = kv::parse_num(v)?,
                "cluster-count" => self.wafer.cluster_count = kv::parse_num(v)?,
                "cluster-shape" => self.wafer.cluster_shape = v.parse()?,
                "void-inflation" => self.wafer.void_label_inflation = kv::parse_num(v)?,
                "embedding" => self.wafer.ultrasonic_embedding = kv::parse_bool(v)?,
                "noise-sigma" => self.wafer.noise_sigma = kv::parse_num(v)?,
                "min-contrast" => self.wafer.min_contrast = kv::parse_num(v)?,
                "count" => self.count = kv::parse_num(v)?,
                "cluster-fraction" => self.cluster_fraction = kv::parse_num(v)?,
                "split" => {
                    self.split = if v == "auto" {
                        None
                    } else {
                        let (a, b) = v
                            .split_once(':')
                            .ok_or_else(|| anyhow!("expected `train:val` or `auto`"))?;
                        Some((kv::parse_num(a)?, kv::parse_num(b)?))
                    }
                }
                "variant" => {
                    let variant: Variant = v.parse()?;
                    let skips_were_max =
                        self.model.skip_count == self.model.variant.decoder_stages();
                    self.model.variant = variant;
                    if skips_were_max || self.model.skip_count > variant.decoder_stages() {
                        self.model.skip_count = variant.decoder_stages();
                    }
                }
                "skips" => self.model.skip_count = kv::parse_num(v)?,
                "residual" => self.model.residual_shortcuts = kv::parse_bool(v)?,
                "init" => self.model.init_mode = v.parse::<InitMode>()?,
                "decoder-width" => self.model.decoder_width = kv::parse_num(v)?,
                "width-divisor" => self.model.width_divisor = kv::parse_num(v)?,
                "weights" => {
                    self.train.class_weights = if v == "none" {
                        [1.0; 3]
                    } else {
                        let w: Vec<f64> = kv::parse_list(v)?;
                        w.try_into()
                            .map_err(|_| anyhow!("expected three comma separated weights"))?
                    }
                }
                "lr" => self.train.lr0 = kv::parse_num(v)?,
                "lr-decay" => self.train.lr_decay = kv::parse_num(v)?,
                "weight-decay" => self.train.weight_decay = kv::parse_num(v)?,
                "epochs" => self.train.epochs = kv::parse_num(v)?,
                "batch-size" => self.train.batch_size = kv::parse_num(v)?,
                "beta1" => self.train.beta1 = kv::parse_num(v)?,
                "beta2" => self.train.beta2 = kv::parse_num(v)?,
                "adam-eps" => self.train.adam_epsilon = kv::parse_num(v)?,
                "eval-every" => self.train.eval_every = kv::parse_num(v)?,
                "mask-background" => self.train.mask_background_loss = kv::parse_bool(v)?,
                "checkpoint-every" => self.checkpoint_every = kv::parse_num(v)?,
                "mean-value" => self.preprocess.mean_value = kv::parse_num(v)?,
                "normalize" => self.preprocess.normalize = kv::parse_bool(v)?,
                "rotations" => self.preprocess.rotations = kv::parse_list(v)?,
                "pad-square" => self.preprocess.pad_to_square = kv::parse_bool(v)?,
                "ensemble" => self.ensemble = kv::parse_list(v)?,
                "combine" => self.combine = v.parse()?,
                "eval-split" => match v {
                    "train" | "val" | "all" => self.eval_split = v.into(),
                    _ => bail!("expected train, val or all"),
                },
                "folds" => self.folds = kv::parse_num(v)?,
                "stratify" => self.stratify = kv::parse_bool(v)?,
                "ablate" => {
                    let groups: Vec<String> = kv::parse_list(v)?;
                    if let Some(g) = groups
                        .iter()
                        .find(|g| !ABLATION_GROUPS.contains(&g.as_str()))
                    {
                        bail!(
                            "unknown group `{g}`, expected one of {}",
                            ABLATION_GROUPS.join(", ")
                        );
                    }
                    self.ablate = groups;
                }
                "images" => self.images = kv::parse_bool(v)?,
                "data" => self.data = parse_path(v),
                "out" => self.out = parse_path(v),
                "checkpoint" => self.checkpoint = parse_path(v),
                "resume" => self.resume = parse_path(v),
                "import" => self.import = parse_path(v),
                "input" => self.input = parse_path(v),
                _ => bail!("unknown key (see `chipseg help <command>` for the list)"),
            }
            Ok(())
        })();
        r.with_context(|| format!("invalid value `{v}` for `{key}`"))?;
        self.explicit.insert(key);
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn get(&self, key: &str) -> String {
        let w = &self.wafer;
        let t = &self.train;
        match key {
            "seed" => self.seed.to_string(),
            "height" => w.height.to_string(),
            "width" => w.width.to_string(),
            "disc-margin" => w.disc_margin_frac.to_string(),
            "brightness-field" => w.brightness_field.to_string(),
            "brightness-amplitude" => w.brightness_amplitude.to_string(),
            "markers" => w.marker_count.to_string(),
            "single-rate" => w.single_defect_rate.to_string(),
            "linear-count" => w.linear_defect_count.to_string(),
            "void-count" => w.void_count.to_string(),
            "cluster-count" => w.cluster_count.to_string(),
            "cluster-shape" => w.cluster_shape.to_string(),
            "void-inflation" => w.void_label_inflation.to_string(),
            "embedding" => w.ultrasonic_embedding.to_string(),
            "noise-sigma" => w.noise_sigma.to_string(),
            "min-contrast" => w.min_contrast.to_string(),
            "count" => self.count.to_string(),
            "cluster-fraction" => self.cluster_fraction.to_string(),
            "split" => self
                .split
                .map_or_else(|| "auto".into(), |(a, b)| format!("{a}:{b}")),
            "variant" => self.model.variant.to_string(),
            "skips" => self.model.skip_count.to_string(),
            "residual" => self.model.residual_shortcuts.to_string(),
            "init" => self.model.init_mode.to_string(),
            "decoder-width" => self.model.decoder_width.to_string(),
            "width-divisor" => self.model.width_divisor.to_string(),
            "weights" => kv::render_list(&t.class_weights),
            "lr" => t.lr0.to_string(),
            "lr-decay" => t.lr_decay.to_string(),
            "weight-decay" => t.weight_decay.to_string(),
            "epochs" => t.epochs.to_string(),
            "batch-size" => t.batch_size.to_string(),
            "beta1" => t.beta1.to_string(),
            "beta2" => t.beta2.to_string(),
            "adam-eps" => t.adam_epsilon.to_string(),
            "eval-every" => t.eval_every.to_string(),
            "mask-background" => t.mask_background_loss.to_string(),
            "checkpoint-every" => self.checkpoint_every.to_string(),
            "mean-value" => self.preprocess.mean_value.to_string(),
            "normalize" => self.preprocess.normalize.to_string(),
            "rotations" => kv::render_list(&self.preprocess.rotations),
            "pad-square" => self.preprocess.pad_to_square.to_string(),
            "ensemble" => kv::render_list(&self.ensemble),
            "combine" => self.combine.to_string(),
            "eval-split" => self.eval_split.clone(),
            "folds" => self.folds.to_string(),
            "stratify" => self.stratify.to_string(),
            "ablate" => kv::render_list(&self.ablate),
            "images" => self.images.to_string(),
            "data" => path_value(&self.data),
            "out" => path_value(&self.out),
            "checkpoint" => path_value(&self.checkpoint),
            "resume" => path_value(&self.resume),
            "import" => path_value(&self.import),
            "input" => path_value(&self.input),
            _ => unreachable!("key table and getter out of sync: {key}"),
        }
    }

    pub fn to_text(&self) -> String {
        let pairs: Vec<(String, String)> = KEYS
            .iter()
            .map(|(k, _)| (k.to_string(), self.get(k)))
            .collect();
        kv::render(&pairs)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in kv::parse(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)
            .with_context(|| format!("in config {}", path.display()))?;
        Ok(cfg)
    }

    /// Builds a config from `--key value` pairs; a `--config FILE` pair is applied first.
    pub fn from_args(args: &[String]) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut it = args.iter();
        while let Some(a) = it.next() {
            let Some(key) = a.strip_prefix("--") else {
                bail!("unexpected argument `{a}`; settings are given as `--key value`");
            };
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| anyhow!("`--{key}` needs a value"))?;
                    (key.to_string(), v.clone())
                }
            };
            pairs.push((key, value));
        }
        let mut cfg = match pairs.iter().find(|(k, _)| k == "config") {
            Some((_, path)) => Self::load(Path::new(path))?,
            None => Self::default(),
        };
        for (k, v) in pairs.iter().filter(|(k, _)| k != "config") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Checks the model, training, generator and preprocessing sections.
    pub fn validate(&self) -> Result<()> {
        self.wafer.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.preprocess.validate()?;
        Ok(())
    }

    /// `out`, or `$CHIPSEG_OUTPUT_ROOT/<command>`, or `runs/<command>`.
    pub fn output_dir(&self, command: &str) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        let root =
            std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(command)
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
        path.as_ref()
            .ok_or_else(|| anyhow!("`--{key}` is required for this command"))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn key_help() -> String {
        let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let defaults = Self::default();
        KEYS.iter()
            .map(|(k, d)| format!("  --{k:<width$}  {d} [{}]\n", defaults.get(k)))
            .collect()
    }
}
