use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{quarter_turns, rotate_tensor, LabelMap};
use crate::model::{predict_classes, Model};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How per-rotation predictions are merged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Combine {
    /// Average the probability maps, then take the argmax.
    #[default]
    Mean,
    /// Majority vote over per-rotation argmax maps; ties go to the highest mean probability.
    Vote,
}

impl fmt::Display for Combine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Combine::Mean => "mean",
            Combine::Vote => "vote",
        })
    }
}

impl FromStr for Combine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "vote" => Ok(Self::Vote),
            other => Err(Error::Config(format!(
                "unknown ensemble combination `{other}`"
            ))),
        }
    }
}

/// Per-rotation probability maps, each rotated back to the input orientation.
pub fn rotated_probabilities<T: Scalar>(
    model: &Model<T>,
    image: &Tensor<T>,
    angles: &[u32],
) -> Result<Vec<Tensor<T>>> {
    if angles.is_empty() {
        return Err(Error::Config("ensemble needs at least one angle".into()));
    }
    let mut maps = Vec::with_capacity(angles.len());
    for &angle in angles {
        let turns = quarter_turns(angle)?;
        let rotated = rotate_tensor(image, angle)?;
        let probs = model.predict_proba(&rotated)?;
        maps.push(rotate_tensor(&probs, (4 - turns) % 4 * 90)?);
    }
    Ok(maps)
}

/// Mean of the back-rotated probability maps.
pub fn ensemble_proba<T: Scalar>(
    model: &Model<T>,
    image: &Tensor<T>,
    angles: &[u32],
) -> Result<Tensor<T>> {
    let maps = rotated_probabilities(model, image, angles)?;
    let k = T::from_f64(maps.len() as f64);
    let mut sum = maps[0].clone();
    for m in &maps[1..] {
        for (a, &b) in sum.data_mut().iter_mut().zip(m.data()) {
            *a = *a + b;
        }
    }
    Ok(sum.map(|v| v / k))
}

/// Class map for each batch item, combining predictions at the given clockwise angles.
pub fn ensemble_predict<T: Scalar>(
    model: &Model<T>,
    image: &Tensor<T>,
    angles: &[u32],
    combine: Combine,
) -> Result<Vec<LabelMap>> {
    if combine == Combine::Mean || angles.len() == 1 {
        return Ok(predict_classes(&ensemble_proba(model, image, angles)?));
    }
    let maps = rotated_probabilities(model, image, angles)?;
    let votes: Vec<Vec<LabelMap>> = maps.iter().map(predict_classes).collect();
    let s = maps[0].shape();
    let plane = s.plane();
    let mut out = Vec::with_capacity(s.n);
    for n in 0..s.n {
        let mut labels = votes[0][n].clone();
        for p in 0..plane {
            let mut count = alloc::vec![0usize; s.c];
            let mut mass = alloc::vec![0.0f64; s.c];
            for (k, v) in votes.iter().enumerate() {
                count[v[n].data()[p] as usize] += 1;
                for c in 0..s.c {
                    mass[c] += maps[k].item(n)[c * plane + p].as_f64();
                }
            }
            let mut best = 0;
            for c in 1..s.c {
                if count[c] > count[best] || (count[c] == count[best] && mass[c] > mass[best]) {
                    best = c;
                }
            }
            labels.data_mut()[p] = best as u8;
        }
        out.push(labels);
    }
    Ok(out)
}
