use alloc::format;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Architectural family of a segmentation network.
///
/// `DilatedPyramid` is a strided-conv encoder with a dilated pyramid pooling
/// head and a bilinear-upsampling decoder. `PoolIndex` is a symmetric
/// encoder/decoder where max-pool indices from the encoder drive the
/// decoder's unpooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    DilatedPyramid,
    PoolIndex,
}

impl Family {
    /// Downsampling factor between the input and the backbone feature tap.
    /// Both families reduce twice by 2 before the tap.
    pub fn stride(&self) -> usize {
        match self {
            Family::DilatedPyramid => 4,
            Family::PoolIndex => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneDepth {
    Deep,
    Shallow,
}

/// Declarative description of a segmentation network.
///
/// `feature_tap_channels` is fixed by the architecture (four times
/// `base_channels` at the final backbone stage for both families); the field
/// is kept explicit so configs state the distillation interface and the
/// builder can reject mismatches early.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub backbone_depth: BackboneDepth,
    pub base_channels: usize,
    pub n_classes: usize,
    pub feature_tap_channels: usize,
    pub input_size: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 8 {
            return Err(CoreError::Config(format!(
                "base_channels must be >= 8, got {}",
                self.base_channels
            )));
        }
        if self.n_classes != 2 {
            return Err(CoreError::Config(format!(
                "only binary segmentation is supported (n_classes = 2), got {}",
                self.n_classes
            )));
        }
        if self.feature_tap_channels == 0 {
            return Err(CoreError::Config("feature_tap_channels must be > 0".into()));
        }
        if self.feature_tap_channels != 4 * self.base_channels {
            return Err(CoreError::Config(format!(
                "feature tap of both families is the final backbone stage with \
                 4 * base_channels = {} channels; spec declares {}",
                4 * self.base_channels,
                self.feature_tap_channels
            )));
        }
        if !self.input_size.is_multiple_of(self.family.stride()) {
            return Err(CoreError::Config(format!(
                "input_size {} is not a multiple of the family stride {}",
                self.input_size,
                self.family.stride()
            )));
        }
        Ok(())
    }
}
