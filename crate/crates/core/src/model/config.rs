use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::NUM_CLASSES;

/// Encoder layouts compared in the architecture study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// VGG 16 encoder with the fully connected layers as 4096/4096/64 convolutions.
    Standard,
    /// Shortened last stack of 512 and 64 filters.
    Vaughan,
    /// No sixth stack and no first upsampling stage.
    Broomstick,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Standard, Variant::Vaughan, Variant::Broomstick];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Vaughan => "vaughan",
            Variant::Broomstick => "broomstick",
        }
    }

    /// Number of decoder stages, equal to the number of poolings.
    pub fn decoder_stages(self) -> usize {
        match self {
            Variant::Broomstick => 4,
            _ => 5,
        }
    }

    /// Encoder stacks as `(filters, kernel)` per convolution, before width division.
    pub fn stacks(self) -> Vec<StackSpec> {
        let k3 = |f: &[usize]| f.iter().map(|&f| (f, 3)).collect::<Vec<_>>();
        let mut stacks = vec![
            StackSpec {
                name: "conv1",
                convs: k3(&[64, 64]),
                residual: false,
            },
            StackSpec {
                name: "conv2",
                convs: k3(&[128, 128]),
                residual: false,
            },
            StackSpec {
                name: "conv3",
                convs: k3(&[256, 256, 256]),
                residual: true,
            },
            StackSpec {
                name: "conv4",
                convs: k3(&[512, 512, 512]),
                residual: true,
            },
        ];
        match self {
            Variant::Standard => {
                stacks.push(StackSpec {
                    name: "conv5",
                    convs: k3(&[512, 512, 512]),
                    residual: true,
                });
                stacks.push(StackSpec {
                    name: "conv6",
                    convs: vec![(4096, 3), (4096, 3), (64, 1)],
                    residual: false,
                });
            }
            Variant::Vaughan => {
                stacks.push(StackSpec {
                    name: "conv5",
                    convs: k3(&[512, 512, 512]),
                    residual: true,
                });
                stacks.push(StackSpec {
                    name: "conv6",
                    convs: vec![(512, 3), (64, 1)],
                    residual: false,
                });
            }
            Variant::Broomstick => {
                stacks.push(StackSpec {
                    name: "conv5",
                    convs: k3(&[512, 512, 64]),
                    residual: true,
                });
            }
        }
        stacks
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" | "1" => Ok(Variant::Standard),
            "vaughan" | "2" => Ok(Variant::Vaughan),
            "broomstick" | "3" => Ok(Variant::Broomstick),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// One encoder stack of `conv -> BN -> ReLU` blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StackSpec {
    pub name: &'static str,
    /// `(filters, kernel size)` per convolution.
    pub convs: Vec<(usize, usize)>,
    /// Whether a residual shortcut may bypass this stack.
    pub residual: bool,
}

/// Weight initialization strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InitMode {
    He,
    /// External weights for the first 4 encoder convolutions.
    Import4,
    /// External weights for the first 10 encoder convolutions.
    Import10,
}

impl InitMode {
    pub const ALL: [InitMode; 3] = [InitMode::Import10, InitMode::Import4, InitMode::He];

    pub fn imported_layers(self) -> usize {
        match self {
            InitMode::He => 0,
            InitMode::Import4 => 4,
            InitMode::Import10 => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InitMode::He => "he",
            InitMode::Import4 => "import4",
            InitMode::Import10 => "import10",
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "he" => Ok(InitMode::He),
            "import4" | "vgg4" => Ok(InitMode::Import4),
            "import10" | "vgg10" => Ok(InitMode::Import10),
            other => Err(Error::Config(format!("unknown init mode `{other}`"))),
        }
    }
}

/// Declarative description of one network.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Skip connections, counted from the innermost decoder stage outward.
    pub skip_count: usize,
    pub residual_shortcuts: bool,
    pub init_mode: InitMode,
    pub num_classes: usize,
    /// Feature maps throughout the upsampling path.
    pub decoder_width: usize,
    /// Divides every encoder filter count (rounding up). 1 keeps the published widths.
    pub width_divisor: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Vaughan,
            skip_count: 5,
            residual_shortcuts: true,
            init_mode: InitMode::He,
            num_classes: NUM_CLASSES,
            decoder_width: 64,
            width_divisor: 1,
        }
    }
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            skip_count: variant.decoder_stages(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let max = self.variant.decoder_stages();
        if self.skip_count > max {
            return Err(Error::Config(format!(
                "skip_count {} exceeds the {max} decoder stages of the {} variant",
                self.skip_count, self.variant
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".to_string()));
        }
        if self.decoder_width == 0 || self.width_divisor == 0 {
            return Err(Error::Config(
                "decoder_width and width_divisor must be positive".to_string(),
            ));
        }
        Ok(())
    }

    /// Encoder stacks with filter counts divided by `width_divisor`.
    pub fn stacks(&self) -> Vec<StackSpec> {
        let mut stacks = self.variant.stacks();
        for s in &mut stacks {
            for (f, _) in &mut s.convs {
                *f = f.div_ceil(self.width_divisor);
            }
        }
        stacks
    }

    /// Short identifier used in reports, e.g. `vaughan-s5-res-he`.
    pub fn label(&self) -> String {
        let mut s = format!(
            "{}-s{}-{}-{}",
            self.variant,
            self.skip_count,
            if self.residual_shortcuts {
                "res"
            } else {
                "plain"
            },
            self.init_mode
        );
        if self.width_divisor != 1 || self.decoder_width != 64 {
            s.push_str(&format!("-w{}d{}", self.width_divisor, self.decoder_width));
        }
        s
    }
}
