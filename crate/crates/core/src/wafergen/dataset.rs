use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{generate_wafer, WaferGenConfig, WaferSample};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Validation share of the production split (39 of 145 wafers).
pub const DEFAULT_VAL_FRACTION: (usize, usize) = (39, 145);

const ROLE_STREAM: u64 = u64::MAX;
const SPLIT_STREAM: u64 = u64::MAX - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" | "validation" => Ok(Self::Validation),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub cluster: bool,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<WaferSample>,
    pub manifest: Vec<ManifestEntry>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&WaferSample> {
        self.manifest
            .iter()
            .filter(|m| m.split == split)
            .map(|m| &self.samples[m.index])
            .collect()
    }

    /// Owned copies of the training and validation portions.
    pub fn into_splits(self) -> (Vec<WaferSample>, Vec<WaferSample>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (sample, entry) in self.samples.into_iter().zip(&self.manifest) {
            match entry.split {
                Split::Train => train.push(sample),
                Split::Validation => val.push(sample),
            }
        }
        (train, val)
    }
}

fn round_div(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

/// Generates `count` wafers whose cluster wafers are spread over both splits in
/// proportion. `val_count` defaults to the 39/145 production ratio.
pub fn generate_dataset(
    template: &WaferGenConfig,
    count: usize,
    cluster_fraction: f64,
    master_seed: u64,
    val_count: Option<usize>,
) -> Result<Dataset> {
    if count < 2 {
        return Err(Error::Stratification(format!(
            "a dataset needs at least 2 wafers, got {count}"
        )));
    }
    if !(0.0..=1.0).contains(&cluster_fraction) {
        return Err(Error::Stratification(format!(
            "cluster fraction {cluster_fraction} is outside [0, 1]"
        )));
    }
    let val_count = val_count
        .unwrap_or_else(|| round_div(count * DEFAULT_VAL_FRACTION.0, DEFAULT_VAL_FRACTION.1))
        .clamp(1, count - 1);
    let train_count = count - val_count;
    let n_cluster = (count as f64 * cluster_fraction).round() as usize;
    let val_cluster = round_div(n_cluster * val_count, count);
    let train_cluster = n_cluster - val_cluster;
    if cluster_fraction > 0.0 && (val_cluster == 0 || train_cluster == 0) {
        return Err(Error::Stratification(format!(
            "cluster fraction {cluster_fraction} of {count} wafers gives {n_cluster} cluster wafers, \
             which cannot be spread over {train_count} training and {val_count} validation wafers"
        )));
    }
    if val_cluster > val_count || train_cluster > train_count {
        return Err(Error::Stratification(format!(
            "{n_cluster} cluster wafers do not fit a {train_count}/{val_count} split in proportion"
        )));
    }

    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        master_seed,
        ROLE_STREAM,
    )));
    let mut cluster = alloc::vec![false; count];
    for &i in &order[..n_cluster] {
        cluster[i] = true;
    }
    let (mut clusters, mut plain): (Vec<usize>, Vec<usize>) = (0..count).partition(|&i| cluster[i]);
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, SPLIT_STREAM));
    clusters.shuffle(&mut split_rng);
    plain.shuffle(&mut split_rng);
    let mut split = alloc::vec![Split::Train; count];
    for &i in clusters[..val_cluster]
        .iter()
        .chain(&plain[..val_count - val_cluster])
    {
        split[i] = Split::Validation;
    }

    let mut samples = Vec::with_capacity(count);
    let mut manifest = Vec::with_capacity(count);
    for index in 0..count {
        let seed = derive_seed(master_seed, index as u64);
        let cluster_count = if cluster[index] {
            template.cluster_count.max(1)
        } else {
            0
        };
        let config = WaferGenConfig {
            seed,
            cluster_count,
            ..template.clone()
        };
        samples.push(generate_wafer(&config)?);
        manifest.push(ManifestEntry {
            index,
            seed,
            cluster: cluster[index],
            split: split[index],
        });
    }
    Ok(Dataset { samples, manifest })
}
