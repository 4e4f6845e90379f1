use alloc::format;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Large-scale multiplicative brightness non-uniformity across the wafer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BrightnessField {
    Uniform,
    RadialGradient,
    LinearGradient,
    Blotchy,
}

impl BrightnessField {
    pub fn name(self) -> &'static str {
        match self {
            BrightnessField::Uniform => "uniform",
            BrightnessField::RadialGradient => "radial",
            BrightnessField::LinearGradient => "linear",
            BrightnessField::Blotchy => "blotchy",
        }
    }
}

impl fmt::Display for BrightnessField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BrightnessField {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "radial" | "radialGradient" => Ok(Self::RadialGradient),
            "linear" | "linearGradient" => Ok(Self::LinearGradient),
            "blotchy" => Ok(Self::Blotchy),
            other => Err(Error::Config(format!("unknown brightness field `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClusterShape {
    Blob,
    Elongated,
    Ring,
}

impl ClusterShape {
    pub fn name(self) -> &'static str {
        match self {
            ClusterShape::Blob => "blob",
            ClusterShape::Elongated => "elongated",
            ClusterShape::Ring => "ring",
        }
    }
}

impl fmt::Display for ClusterShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClusterShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blob" => Ok(Self::Blob),
            "elongated" => Ok(Self::Elongated),
            "ring" => Ok(Self::Ring),
            other => Err(Error::Config(format!("unknown cluster shape `{other}`"))),
        }
    }
}

/// Parameters of one synthetic wafer. Sizes are in chips (= pixels).
#[derive(Clone, Debug, PartialEq)]
pub struct WaferGenConfig {
    pub height: usize,
    pub width: usize,
    /// Gap between the disc edge and the image border, as a fraction of the radius.
    pub disc_margin_frac: f64,
    pub brightness_field: BrightnessField,
    /// Largest relative brightness drop produced by the field.
    pub brightness_amplitude: f64,
    pub marker_count: usize,
    /// Per-chip probability of an isolated dark chip.
    pub single_defect_rate: f64,
    pub linear_defect_count: usize,
    pub void_count: usize,
    pub cluster_count: usize,
    pub cluster_shape: ClusterShape,
    /// Label extent of a void relative to its visible extent.
    pub void_label_inflation: f64,
    /// Darken the image over the full labelled void area.
    pub ultrasonic_embedding: bool,
    pub noise_sigma: f64,
    /// Minimum brightness gap between a defect chip and its undamaged value.
    pub min_contrast: f64,
    pub seed: u64,
}

impl Default for WaferGenConfig {
    fn default() -> Self {
        Self {
            height: 112,
            width: 112,
            disc_margin_frac: 0.03,
            brightness_field: BrightnessField::RadialGradient,
            brightness_amplitude: 0.3,
            marker_count: 8,
            single_defect_rate: 0.003,
            linear_defect_count: 2,
            void_count: 2,
            cluster_count: 1,
            cluster_shape: ClusterShape::Blob,
            void_label_inflation: 1.5,
            ultrasonic_embedding: false,
            noise_sigma: 0.02,
            min_contrast: 0.05,
            seed: 0,
        }
    }
}

impl WaferGenConfig {
    /// Full-size grid of the production wafers.
    pub fn production_scale() -> Self {
        Self {
            height: 442,
            width: 440,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("wafer generator: {msg}")));
        if self.height * self.width < 32 * 32 || self.height < 8 || self.width < 8 {
            return bad("grid must cover at least 32x32 chips");
        }
        if !(0.0..0.5).contains(&self.disc_margin_frac) {
            return bad("disc_margin_frac must be in [0, 0.5)");
        }
        if !(0.0..=0.5).contains(&self.brightness_amplitude) {
            return bad("brightness_amplitude must be in [0, 0.5]");
        }
        if !(0.0..1.0).contains(&self.single_defect_rate) {
            return bad("single_defect_rate must be in [0, 1)");
        }
        if !(self.void_label_inflation >= 1.0) || !self.void_label_inflation.is_finite() {
            return bad("void_label_inflation must be >= 1");
        }
        if !(self.noise_sigma >= 0.0) || !(self.min_contrast >= 0.0) || self.min_contrast > 0.3 {
            return bad("noise_sigma must be >= 0 and min_contrast in [0, 0.3]");
        }
        Ok(())
    }
}
