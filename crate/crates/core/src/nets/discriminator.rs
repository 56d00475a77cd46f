//! Discriminator variants. All of them expose their per-layer raw
//! pre-activation maps (the feature taps) alongside the logits.
//!
//! The dilated variant is the default: a fully-convolutional network whose
//! output is a spatial real/fake logit map, with a run of constant-width
//! dilated blocks for whole-image context and a skip connection around them
//! preserving the local view.

use candle_core::{DType, Device, Tensor};
use std::collections::HashMap;

use super::layers::{leaky_relu, Conv2d, InstanceNorm, Params};
use super::{DiscriminatorSpec, DiscriminatorVariant, FeatureTaps};
use crate::error::{Error, Result};

const LEAK: f64 = 0.2;

struct Stage {
    conv: Conv2d,
    norm: Option<InstanceNorm>,
}

impl Stage {
    fn new(
        p: &mut Params,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        normed: bool,
    ) -> Result<Self> {
        Ok(Stage {
            conv: Conv2d::new(p, &format!("{name}.conv"), in_c, out_c, kernel, stride, padding, dilation)?,
            norm: if normed {
                Some(InstanceNorm::new(p, &format!("{name}.norm"), out_c)?)
            } else {
                None
            },
        })
    }

    /// Returns (tap, activated): the raw conv output and the post-norm,
    /// post-leaky-rectifier features.
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let tap = self.conv.forward(x)?;
        let t = match &self.norm {
            Some(n) => n.forward(&tap)?,
            None => tap.clone(),
        };
        Ok((tap, leaky_relu(&t, LEAK)?))
    }
}

enum Body {
    Dilated {
        down0: Stage,
        down1: Stage,
        dilated: Vec<Stage>,
        fuse0: Stage,
        fuse1: Stage,
        out: Conv2d,
    },
    Patch {
        stages: Vec<Stage>,
        out: Conv2d,
    },
    FullyConnected {
        stages: Vec<Stage>,
        out: Conv2d,
    },
}

pub struct Discriminator {
    spec: DiscriminatorSpec,
    params: Params,
    body: Body,
}

impl Discriminator {
    fn build(spec: &DiscriminatorSpec, mut p: Params) -> Result<Self> {
        spec.validate()?;
        let b = spec.base_filters;
        let body = match spec.variant {
            DiscriminatorVariant::Dilated => {
                let down0 = Stage::new(&mut p, "down0", 3, b, 4, 2, 1, 1, false)?;
                let down1 = Stage::new(&mut p, "down1", b, 2 * b, 4, 2, 1, 1, true)?;
                // Constant width through the dilated run; rates 1, 2, 4, ...
                let mut dilated = Vec::with_capacity(spec.dilation_block_depth);
                for i in 0..spec.dilation_block_depth {
                    let rate = 1usize << i;
                    dilated.push(Stage::new(
                        &mut p,
                        &format!("dilated{i}"),
                        2 * b,
                        2 * b,
                        3,
                        1,
                        rate,
                        rate,
                        true,
                    )?);
                }
                // After the bypass concatenation the width is 4b.
                let fuse0 = Stage::new(&mut p, "fuse0", 4 * b, 2 * b, 3, 1, 1, 1, true)?;
                let fuse1 = Stage::new(&mut p, "fuse1", 2 * b, 2 * b, 3, 1, 1, 1, true)?;
                let out = Conv2d::new(&mut p, "out.conv", 2 * b, 1, 1, 1, 0, 1)?;
                Body::Dilated {
                    down0,
                    down1,
                    dilated,
                    fuse0,
                    fuse1,
                    out,
                }
            }
            DiscriminatorVariant::Patch => {
                let stages = vec![
                    Stage::new(&mut p, "c0", 3, b, 4, 2, 1, 1, false)?,
                    Stage::new(&mut p, "c1", b, 2 * b, 4, 2, 1, 1, true)?,
                    Stage::new(&mut p, "c2", 2 * b, 4 * b, 4, 2, 1, 1, true)?,
                    Stage::new(&mut p, "c3", 4 * b, 8 * b, 4, 1, 1, 1, true)?,
                ];
                let out = Conv2d::new(&mut p, "out.conv", 8 * b, 1, 4, 1, 1, 1)?;
                Body::Patch { stages, out }
            }
            DiscriminatorVariant::FullyConnected => {
                let stages = vec![
                    Stage::new(&mut p, "c0", 3, b, 4, 2, 1, 1, false)?,
                    Stage::new(&mut p, "c1", b, 2 * b, 4, 2, 1, 1, true)?,
                    Stage::new(&mut p, "c2", 2 * b, 4 * b, 4, 2, 1, 1, true)?,
                    Stage::new(&mut p, "c3", 4 * b, 8 * b, 4, 2, 1, 1, true)?,
                ];
                // global average pool, then a linear head expressed as 1x1 conv
                let out = Conv2d::new(&mut p, "out.conv", 8 * b, 1, 1, 1, 0, 1)?;
                Body::FullyConnected { stages, out }
            }
        };
        p.finish()?;
        Ok(Discriminator {
            spec: spec.clone(),
            params: p,
            body,
        })
    }

    pub fn new(spec: &DiscriminatorSpec, device: &Device, dtype: DType, seed: u64) -> Result<Self> {
        Self::build(spec, Params::init(device, dtype, seed))
    }

    pub fn from_tensors(
        spec: &DiscriminatorSpec,
        device: &Device,
        dtype: DType,
        tensors: HashMap<String, Tensor>,
    ) -> Result<Self> {
        Self::build(spec, Params::from_tensors(device, dtype, tensors))
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Logit shape for an H x W input. Spatial map dims for the dilated and
    /// patch variants, `None` for the single-logit fully-connected variant.
    pub fn logit_map_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        match self.spec.variant {
            DiscriminatorVariant::Dilated => Some((h / 4, w / 4)),
            // three stride-2 stages, then two unpadded-by-one size-4 convs
            DiscriminatorVariant::Patch => Some((h / 8 - 2, w / 8 - 2)),
            DiscriminatorVariant::FullyConnected => None,
        }
    }

    /// Runs the network. Logits are a (N, 1, H', W') map for the spatial
    /// variants and an (N, 1) tensor for the fully-connected one. The taps
    /// hold every intermediate layer's raw conv output, in depth order.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, FeatureTaps)> {
        let (_, c, _, _) = x.dims4()?;
        if c != 3 {
            return Err(Error::Shape(format!(
                "discriminator expects 3 channels, got {c}"
            )));
        }
        let mut taps = Vec::new();
        let logits = match &self.body {
            Body::Dilated {
                down0,
                down1,
                dilated,
                fuse0,
                fuse1,
                out,
            } => {
                let (tap, mut t) = down0.forward(x)?;
                taps.push(tap);
                let (tap, local) = down1.forward(&t)?;
                taps.push(tap);
                t = local.clone();
                for stage in dilated {
                    let (tap, next) = stage.forward(&t)?;
                    taps.push(tap);
                    t = next;
                }
                // skip connection around the dilated run keeps local context
                t = Tensor::cat(&[&local, &t], 1)?;
                let (tap, t1) = fuse0.forward(&t)?;
                taps.push(tap);
                let (tap, t2) = fuse1.forward(&t1)?;
                taps.push(tap);
                out.forward(&t2)?
            }
            Body::Patch { stages, out } => {
                let mut t = x.clone();
                for stage in stages {
                    let (tap, next) = stage.forward(&t)?;
                    taps.push(tap);
                    t = next;
                }
                out.forward(&t)?
            }
            Body::FullyConnected { stages, out } => {
                let mut t = x.clone();
                for stage in stages {
                    let (tap, next) = stage.forward(&t)?;
                    taps.push(tap);
                    t = next;
                }
                let pooled = t.mean_keepdim(3)?.mean_keepdim(2)?;
                let (n, _, _, _) = pooled.dims4()?;
                out.forward(&pooled)?.reshape((n, 1))?
            }
        };
        let taps = FeatureTaps {
            layers: taps,
            output: logits.clone(),
        };
        Ok((logits, taps))
    }
}
