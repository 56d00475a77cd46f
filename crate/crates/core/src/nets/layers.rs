//! Parameter registry and the small layer vocabulary the networks are built
//! from.

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::util::rng_for;

/// Weight initialization, seeded per parameter name so registration order
/// does not matter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

/// Owns every `Var` of one network under stable dotted names. Construction
/// either draws fresh weights (std 0.02 normals for convolutions) or takes
/// them from a checkpoint map, validating shapes.
pub struct Params {
    device: Device,
    dtype: DType,
    seed: u64,
    vars: BTreeMap<String, Var>,
    pretrained: Option<HashMap<String, Tensor>>,
}

impl Params {
    pub fn init(device: &Device, dtype: DType, seed: u64) -> Self {
        Params {
            device: device.clone(),
            dtype,
            seed,
            vars: BTreeMap::new(),
            pretrained: None,
        }
    }

    /// Registry that restores weights from `tensors` instead of drawing them.
    pub fn from_tensors(device: &Device, dtype: DType, tensors: HashMap<String, Tensor>) -> Self {
        Params {
            device: device.clone(),
            dtype,
            seed: 0,
            vars: BTreeMap::new(),
            pretrained: Some(tensors),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn take(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if self.vars.contains_key(name) {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        let tensor = match &mut self.pretrained {
            Some(map) => {
                let t = map.remove(name).ok_or_else(|| {
                    Error::Checkpoint(format!("checkpoint is missing parameter {name}"))
                })?;
                if t.dims() != shape {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.dims()
                    )));
                }
                t.to_device(&self.device)?.to_dtype(self.dtype)?
            }
            None => {
                let count: usize = shape.iter().product();
                let data: Vec<f64> = match init {
                    Init::Zeros => vec![0.0; count],
                    Init::Ones => vec![1.0; count],
                    Init::Normal(std) => {
                        let mut rng = rng_for(self.seed, name, 0);
                        (0..count)
                            .map(|_| {
                                let z: f64 = rng.sample(StandardNormal);
                                z * std
                            })
                            .collect()
                    }
                };
                Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?
            }
        };
        let var = Var::from_tensor(&tensor)?;
        self.vars.insert(name.to_string(), var.clone());
        Ok(var)
    }

    /// Fails if a checkpoint carried parameters this architecture never
    /// asked for.
    pub fn finish(&mut self) -> Result<()> {
        if let Some(map) = &self.pretrained {
            if let Some(name) = map.keys().next() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint has unexpected parameter {name}"
                )));
            }
        }
        Ok(())
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    /// Detached snapshots of every parameter, for serialization.
    pub fn tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (name, var) in &self.vars {
            out.insert(name.clone(), var.as_tensor().copy()?);
        }
        Ok(out)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }
}

pub(crate) fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok((x.relu()? - (x.neg()?.relu()? * slope)?)?)
}

/// 2D convolution with bias.
pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
    dilation: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: &mut Params,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Self> {
        Ok(Conv2d {
            weight: p.take(
                &format!("{name}.weight"),
                &[out_c, in_c, kernel, kernel],
                Init::Normal(0.02),
            )?,
            bias: p.take(&format!("{name}.bias"), &[out_c], Init::Zeros)?,
            stride,
            padding,
            dilation,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out = x.conv2d(
            self.weight.as_tensor(),
            self.padding,
            self.stride,
            self.dilation,
            1,
        )?;
        let c = self.bias.elem_count();
        Ok(out.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// Transposed 2D convolution (kernel 4, stride 2, padding 1 doubles the
/// spatial size exactly).
pub struct ConvTranspose2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        p: &mut Params,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Ok(ConvTranspose2d {
            weight: p.take(
                &format!("{name}.weight"),
                &[in_c, out_c, kernel, kernel],
                Init::Normal(0.02),
            )?,
            bias: p.take(&format!("{name}.bias"), &[out_c], Init::Zeros)?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out = x.conv_transpose2d(self.weight.as_tensor(), self.padding, 0, self.stride, 1)?;
        let c = self.bias.elem_count();
        Ok(out.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// Per-sample, per-channel normalization over the spatial dimensions with a
/// learned affine.
pub struct InstanceNorm {
    gamma: Var,
    beta: Var,
    eps: f64,
}

impl InstanceNorm {
    pub fn new(p: &mut Params, name: &str, channels: usize) -> Result<Self> {
        Ok(InstanceNorm {
            gamma: p.take(&format!("{name}.gamma"), &[channels], Init::Ones)?,
            beta: p.take(&format!("{name}.beta"), &[channels], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(3)?.mean_keepdim(2)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(3)?.mean_keepdim(2)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let c = self.gamma.elem_count();
        Ok(normed
            .broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?)
    }
}

/// Residual block whose input and body output merge by channel
/// concatenation, fused back to the input width by a 1x1 convolution.
pub struct ResidualBlock {
    conv1: Conv2d,
    norm1: InstanceNorm,
    conv2: Conv2d,
    norm2: InstanceNorm,
    fuse: Conv2d,
}

impl ResidualBlock {
    pub fn new(p: &mut Params, name: &str, channels: usize) -> Result<Self> {
        Ok(ResidualBlock {
            conv1: Conv2d::new(p, &format!("{name}.conv1"), channels, channels, 3, 1, 1, 1)?,
            norm1: InstanceNorm::new(p, &format!("{name}.norm1"), channels)?,
            conv2: Conv2d::new(p, &format!("{name}.conv2"), channels, channels, 3, 1, 1, 1)?,
            norm2: InstanceNorm::new(p, &format!("{name}.norm2"), channels)?,
            fuse: Conv2d::new(
                p,
                &format!("{name}.fuse"),
                2 * channels,
                channels,
                1,
                1,
                0,
                1,
            )?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let t = self.norm1.forward(&self.conv1.forward(x)?)?.relu()?;
        let t = self.norm2.forward(&self.conv2.forward(&t)?)?;
        let merged = Tensor::cat(&[x, &t], 1)?;
        self.fuse.forward(&merged)
    }
}
