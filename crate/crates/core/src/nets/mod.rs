//! Network construction: the generator, the discriminator variants, feature
//! taps for feature matching, and receptive-field analytics.

mod discriminator;
mod generator;
pub mod layers;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use discriminator::Discriminator;
pub use generator::Generator;

/// How a residual block's input and body output combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeOp {
    Concatenate,
}

/// Feature normalization inside the networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Instance,
}

/// Generator architecture. Filter counts double per stride-2 downsample and
/// halve per upsample; skips and residual bodies merge by concatenation.
/// `residual_blocks_per_scale` counts the bottleneck blocks; every other
/// scale carries one residual block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub base_filters: usize,
    pub downsamples: usize,
    pub residual_blocks_per_scale: usize,
    pub merge_op: MergeOp,
    pub norm: NormKind,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            base_filters: 64,
            downsamples: 2,
            residual_blocks_per_scale: 3,
            merge_op: MergeOp::Concatenate,
            norm: NormKind::Instance,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_filters == 0 || self.downsamples == 0 || self.residual_blocks_per_scale == 0 {
            return Err(Error::Validation(
                "generator spec fields must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Discriminator family member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorVariant {
    /// Segmentation-style map output with dilated context blocks (default).
    Dilated,
    /// Local-patch map output.
    Patch,
    /// Single-logit global decision.
    FullyConnected,
}

/// Discriminator architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorSpec {
    pub variant: DiscriminatorVariant,
    pub base_filters: usize,
    /// Number of constant-width dilated blocks (dilated variant only);
    /// rates run 1, 2, 4, ...
    pub dilation_block_depth: usize,
    /// Downsampling factor of the logit map relative to the input.
    pub output_stride: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            variant: DiscriminatorVariant::Dilated,
            base_filters: 128,
            dilation_block_depth: 4,
            output_stride: 4,
        }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_filters == 0 {
            return Err(Error::Validation("base_filters must be positive".into()));
        }
        match self.variant {
            DiscriminatorVariant::Dilated => {
                if self.output_stride != 4 {
                    return Err(Error::Validation(format!(
                        "the dilated layout has two stride-2 stages; output_stride must be 4, got {}",
                        self.output_stride
                    )));
                }
                if self.dilation_block_depth == 0 {
                    return Err(Error::Validation(
                        "dilation_block_depth must be positive".into(),
                    ));
                }
            }
            DiscriminatorVariant::Patch => {
                if self.output_stride != 8 {
                    return Err(Error::Validation(format!(
                        "the patch layout has three stride-2 stages; output_stride must be 8, got {}",
                        self.output_stride
                    )));
                }
            }
            DiscriminatorVariant::FullyConnected => {}
        }
        Ok(())
    }
}

/// Ordered intermediate activations (raw conv outputs, before normalization
/// and the nonlinearity) plus the final logits.
pub struct FeatureTaps {
    pub layers: Vec<Tensor>,
    pub output: Tensor,
}

/// (kernel, stride, dilation) description of one conv layer.
pub type ConvLayer = (usize, usize, usize);

/// Receptive field of a stack of conv layers via the standard recurrence:
/// `r += dilation * (kernel - 1) * jump; jump *= stride`.
pub fn receptive_field_of_layers(layers: &[ConvLayer]) -> usize {
    let mut r = 1usize;
    let mut jump = 1usize;
    for &(kernel, stride, dilation) in layers {
        r += dilation * (kernel - 1) * jump;
        jump *= stride;
    }
    r
}

fn conv_stack(spec: &DiscriminatorSpec) -> Vec<ConvLayer> {
    match spec.variant {
        DiscriminatorVariant::Dilated => {
            let mut layers = vec![(4, 2, 1), (4, 2, 1)];
            for i in 0..spec.dilation_block_depth {
                layers.push((3, 1, 1 << i));
            }
            layers.push((3, 1, 1));
            layers.push((3, 1, 1));
            layers.push((1, 1, 1));
            layers
        }
        DiscriminatorVariant::Patch => {
            vec![(4, 2, 1), (4, 2, 1), (4, 2, 1), (4, 1, 1), (4, 1, 1)]
        }
        DiscriminatorVariant::FullyConnected => {
            vec![(4, 2, 1), (4, 2, 1), (4, 2, 1), (4, 2, 1)]
        }
    }
}

/// Receptive field of one output logit, in input pixels. The fully-connected
/// variant pools globally, so its logit sees the whole image regardless of
/// the conv stack; that is reported as `usize::MAX`.
pub fn receptive_field(spec: &DiscriminatorSpec) -> usize {
    match spec.variant {
        DiscriminatorVariant::FullyConnected => usize::MAX,
        _ => receptive_field_of_layers(&conv_stack(spec)),
    }
}

/// Convenience constructors mirroring the library naming.
pub fn build_generator(
    spec: &GeneratorSpec,
    device: &candle_core::Device,
    dtype: candle_core::DType,
    seed: u64,
) -> Result<Generator> {
    Generator::new(spec, device, dtype, seed)
}

pub fn build_discriminator(
    spec: &DiscriminatorSpec,
    device: &candle_core::Device,
    dtype: candle_core::DType,
    seed: u64,
) -> Result<Discriminator> {
    Discriminator::new(spec, device, dtype, seed)
}
