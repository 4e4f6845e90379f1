//! Preprocessing and augmentation of wafer samples for the network.

use alloc::format;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{quarter_turns, rotate_coord, Image, LabelMap, CLASS_BACKGROUND};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};
use crate::wafergen::{DefectGeometry, WaferSample};

/// Mean of the three ImageNet channel means of VGG 16 on a `[0, 1]` scale. Summing the
/// three first-layer input slices of an imported model turns the per-channel mean
/// subtraction into subtraction of this single value.
pub const VGG_COLLAPSED_MEAN: f64 = (103.939 + 116.779 + 123.68) / 3.0 / 255.0;

const NORM_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    /// Scalar subtracted after normalization.
    pub mean_value: f64,
    /// Standardize each image to zero mean and unit variance.
    pub normalize: bool,
    /// Extra right-angle rotations added to the training set.
    pub rotations: Vec<u32>,
    /// Pad non-square grids (bottom/right, label 0) so every rotation is valid.
    pub pad_to_square: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            mean_value: 0.0,
            normalize: true,
            rotations: alloc::vec![90, 180, 270],
            pad_to_square: false,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        for &a in &self.rotations {
            if quarter_turns(a)? == 0 {
                return Err(Error::Config(format!(
                    "rotation {a} is not one of 90, 180, 270"
                )));
            }
        }
        Ok(())
    }
}

/// What preprocessing did to an image, so it can be undone for display.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    pub mean_value: f64,
    pub normalized: bool,
}

impl NormStats {
    /// Maps a preprocessed tensor back to brightness values.
    pub fn restore<T: Scalar>(&self, t: &Tensor<T>) -> Result<Image> {
        let s = t.shape();
        let data = t
            .plane(0, 0)
            .iter()
            .map(|&v| {
                let x = v.as_f64() + self.mean_value;
                (if self.normalized {
                    x * self.std + self.mean
                } else {
                    x
                }) as f32
            })
            .collect();
        Image::from_vec(s.h, s.w, data)
    }
}

/// Network-ready sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample<T: Scalar = f32> {
    /// `(1, 1, H, W)` input.
    pub image: Tensor<T>,
    pub labels: LabelMap,
    /// `(1, 3, H, W)` one-hot target.
    pub one_hot: Tensor<T>,
    pub stats: NormStats,
    pub is_cluster: bool,
}

/// Normalizes the image and one-hot encodes the labels. Input brightness must lie
/// in `[0, 1]`, which also rejects images that were already preprocessed.
pub fn preprocess<T: Scalar>(
    sample: &WaferSample,
    config: &PreprocessConfig,
) -> Result<PreparedSample<T>> {
    let img = &sample.image;
    if let Some(i) = img.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Other(format!(
            "image value {} at pixel {i} is outside [0, 1]; was the sample already preprocessed?",
            img.data()[i]
        )));
    }
    let n = img.data().len() as f64;
    let mean = img.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = img
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = (var + NORM_EPSILON).sqrt();
    let stats = NormStats {
        mean,
        std,
        mean_value: config.mean_value,
        normalized: config.normalize,
    };
    let shape = Shape::new(1, 1, img.height(), img.width());
    let image = Tensor::from_fn(shape, |_, _, r, c| {
        let v = img.get(r, c) as f64;
        let v = if config.normalize {
            (v - mean) / std
        } else {
            v
        };
        T::from_f64(v - config.mean_value)
    });
    Ok(PreparedSample {
        image,
        labels: sample.labels.clone(),
        one_hot: sample.labels.one_hot()?,
        stats,
        is_cluster: sample.is_cluster(),
    })
}

fn remap_geometry(defects: &[DefectGeometry], f: impl Fn(u32) -> u32) -> Vec<DefectGeometry> {
    defects
        .iter()
        .map(|d| {
            let mut label: Vec<u32> = d.label.iter().map(|&p| f(p)).collect();
            let mut visible: Vec<u32> = d.visible.iter().map(|&p| f(p)).collect();
            label.sort_unstable();
            visible.sort_unstable();
            DefectGeometry {
                kind: d.kind,
                label,
                visible,
            }
        })
        .collect()
}

/// Rotates image, labels and stored geometry clockwise by `angle` degrees.
pub fn rotate_sample(sample: &WaferSample, angle: u32) -> Result<WaferSample> {
    let (h, w) = sample.labels.dims();
    let image = sample.image.rotated(angle)?;
    let labels = sample.labels.rotated(angle)?;
    let ow = labels.width();
    let mut meta = sample.meta.clone();
    meta.defects = remap_geometry(&sample.meta.defects, |p| {
        let (r, c) = rotate_coord(p as usize / w, p as usize % w, h, w, angle)
            .expect("angle already checked");
        (r * ow + c) as u32
    });
    meta.rotation = (meta.rotation + angle) % 360;
    Ok(WaferSample {
        image,
        labels,
        meta,
    })
}

/// Pads a non-square sample at the bottom/right with dark background.
pub fn pad_to_square(sample: &WaferSample) -> WaferSample {
    let w = sample.labels.width();
    let side = sample.labels.height().max(w);
    let mut meta = sample.meta.clone();
    meta.defects = remap_geometry(&sample.meta.defects, |p| {
        ((p as usize / w) * side + p as usize % w) as u32
    });
    WaferSample {
        image: sample.image.padded_square(0.0),
        labels: sample.labels.padded_square(CLASS_BACKGROUND),
        meta,
    }
}

/// Each sample followed by its rotations: `n * (1 + rotations.len())` outputs.
pub fn augment_rotations(samples: &[WaferSample], rotations: &[u32]) -> Result<Vec<WaferSample>> {
    let mut out = Vec::with_capacity(samples.len() * (1 + rotations.len()));
    for s in samples {
        out.push(s.clone());
        for &a in rotations {
            out.push(rotate_sample(s, a)?);
        }
    }
    Ok(out)
}

/// Deterministic permutation of `0..len` for one epoch.
pub fn shuffle_epoch(len: usize, epoch_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    order
}

/// Pads (if configured), augments and preprocesses a training set.
pub fn prepare_training_set<T: Scalar>(
    samples: &[WaferSample],
    config: &PreprocessConfig,
) -> Result<Vec<PreparedSample<T>>> {
    config.validate()?;
    let base: Vec<WaferSample> = if config.pad_to_square {
        samples.iter().map(pad_to_square).collect()
    } else {
        samples.to_vec()
    };
    augment_rotations(&base, &config.rotations)?
        .iter()
        .map(|s| preprocess(s, config))
        .collect()
}

/// Pads (if configured) and preprocesses an evaluation set without augmentation.
pub fn prepare_eval_set<T: Scalar>(
    samples: &[WaferSample],
    config: &PreprocessConfig,
) -> Result<Vec<PreparedSample<T>>> {
    samples
        .iter()
        .map(|s| {
            if config.pad_to_square {
                preprocess(&pad_to_square(s), config)
            } else {
                preprocess(s, config)
            }
        })
        .collect()
}
