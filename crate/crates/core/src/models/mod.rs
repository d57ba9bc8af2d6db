//! Frozen teacher encoder, trainable student, parameters and checkpoints.

mod adam;
mod checkpoint;
pub(crate) mod layers;
mod pyramid;
mod student;
mod teacher;

use crate::seeds::hex_digest;
use crate::{Error, Result};

pub use adam::Adam;
pub use checkpoint::{
    load_student_params, save_student_params, Checkpoint, NamedArray, CHECKPOINT_VERSION,
};
pub use pyramid::FeaturePyramid;
pub use student::{Params, StudentArch, StudentNet, StudentTrace};
pub use teacher::{FeatureExtractor, TeacherNet, INPUT_MEAN, INPUT_STD};

/// Number of pyramid levels shared by teacher and student.
pub const LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Relu,
    LeakyRelu,
    Tanh,
}

impl Nonlinearity {
    pub fn as_str(self) -> &'static str {
        match self {
            Nonlinearity::Relu => "relu",
            Nonlinearity::LeakyRelu => "leaky_relu",
            Nonlinearity::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Nonlinearity::Relu),
            "leaky_relu" => Some(Nonlinearity::LeakyRelu),
            "tanh" => Some(Nonlinearity::Tanh),
            _ => None,
        }
    }
}

/// How the student's bottleneck brings levels 1-2 down to level-3 resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    /// Block averages; keeps only the mean of each cell.
    AvgPool,
    /// Stacks every sub-pixel of a cell as channels, so the fusion convolution
    /// acts as a learned stride-`f` convolution that sees all detail.
    SpaceToDepth,
}

impl Fusion {
    pub fn as_str(self) -> &'static str {
        match self {
            Fusion::AvgPool => "avg_pool",
            Fusion::SpaceToDepth => "space_to_depth",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "avg_pool" => Some(Fusion::AvgPool),
            "space_to_depth" => Some(Fusion::SpaceToDepth),
            _ => None,
        }
    }
}

/// Architecture of the teacher/student pair.
///
/// The teacher is three stride-`s_l / s_{l-1}` 3x3 convolutions, each followed
/// by the nonlinearity; level `l` has `channels[l]` maps at `input_size / strides[l]`.
/// The student brings levels 1-2 to level-3 resolution (see [`Fusion`]),
/// concatenates, and maps the result to a `bottleneck`-channel code with one
/// convolution.
/// The decoder predicts level 3 from the code, then each finer level from the
/// activated coarser prediction with a convolution whose `f * f` output groups
/// become the sub-pixels of the `f`-times larger map (a learned upsampling).
/// No normalization layers, zero-padded "same" convolutions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub input_size: usize,
    pub channels: [usize; LEVELS],
    pub strides: [usize; LEVELS],
    pub nonlinearity: Nonlinearity,
    pub fusion: Fusion,
    pub bottleneck: usize,
    pub bottleneck_kernel: usize,
    /// Kernel of the decoder convolution producing level 1, 2, 3.
    pub decoder_kernels: [usize; LEVELS],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            input_size: 32,
            channels: [16, 32, 64],
            strides: [2, 4, 8],
            nonlinearity: Nonlinearity::LeakyRelu,
            fusion: Fusion::SpaceToDepth,
            bottleneck: 16,
            bottleneck_kernel: 1,
            decoder_kernels: [3, 1, 1],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::config("model.in_channels", "must be positive"));
        }
        if self.channels.contains(&0) || self.bottleneck == 0 {
            return Err(Error::config(
                "model.channels",
                "channel counts must be positive",
            ));
        }
        let mut prev = 1;
        for (l, &s) in self.strides.iter().enumerate() {
            if s <= prev || s % prev != 0 {
                return Err(Error::config(
                    "model.strides",
                    format!(
                        "stride {s} at level {} must be a strict multiple of {prev}",
                        l + 1
                    ),
                ));
            }
            if !self.input_size.is_multiple_of(s) {
                return Err(Error::config(
                    "model.strides",
                    format!("stride {s} does not divide input size {}", self.input_size),
                ));
            }
            prev = s;
        }
        for &k in self
            .decoder_kernels
            .iter()
            .chain(std::iter::once(&self.bottleneck_kernel))
        {
            if k % 2 == 0 {
                return Err(Error::config(
                    "model.kernels",
                    format!("kernel {k} must be odd"),
                ));
            }
        }
        Ok(())
    }

    /// `(C, H, W)` of each pyramid level.
    pub fn level_shapes(&self) -> [(usize, usize, usize); LEVELS] {
        std::array::from_fn(|l| {
            let side = self.input_size / self.strides[l];
            (self.channels[l], side, side)
        })
    }

    pub fn canonical(&self) -> String {
        format!(
            "in_channels={};input_size={};channels={:?};strides={:?};nonlinearity={};fusion={};bottleneck={};bottleneck_kernel={};decoder_kernels={:?}",
            self.in_channels,
            self.input_size,
            self.channels,
            self.strides,
            self.nonlinearity.as_str(),
            self.fusion.as_str(),
            self.bottleneck,
            self.bottleneck_kernel,
            self.decoder_kernels
        )
    }

    pub fn digest(&self) -> String {
        hex_digest(self.canonical().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_level_shapes() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.level_shapes(), [(16, 16, 16), (32, 8, 8), (64, 4, 4)]);
    }

    #[test]
    fn stride_mismatch_is_config_error() {
        let cfg = ModelConfig {
            input_size: 36,
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
        let cfg = ModelConfig {
            strides: [2, 6, 8],
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }
}
