//! Encoder-decoder generator with residual blocks at every scale and
//! concatenated skip connections.

use candle_core::{DType, Device, Tensor};
use std::collections::HashMap;

use super::layers::{Conv2d, ConvTranspose2d, InstanceNorm, Params, ResidualBlock};
use super::GeneratorSpec;
use crate::error::{Error, Result};

struct DownStage {
    conv: Conv2d,
    norm: InstanceNorm,
}

struct UpStage {
    conv: ConvTranspose2d,
    norm: InstanceNorm,
}

/// Maps (N, 3, H, W) to (N, 3, H, W) in [-1, 1] for any H, W that are
/// multiples of 2^downsamples.
pub struct Generator {
    spec: GeneratorSpec,
    params: Params,
    stem: Conv2d,
    stem_norm: InstanceNorm,
    encoder_res: Vec<ResidualBlock>,
    downs: Vec<DownStage>,
    bottleneck: Vec<ResidualBlock>,
    ups: Vec<UpStage>,
    decoder_res: Vec<ResidualBlock>,
    head: Conv2d,
}

impl Generator {
    fn build(spec: &GeneratorSpec, mut params: Params) -> Result<Self> {
        spec.validate()?;
        let f = spec.base_filters;
        let d = spec.downsamples;
        let width = |scale: usize| f << scale;

        let stem = Conv2d::new(&mut params, "stem.conv", 3, f, 7, 1, 3, 1)?;
        let stem_norm = InstanceNorm::new(&mut params, "stem.norm", f)?;

        let mut encoder_res = Vec::with_capacity(d);
        let mut downs = Vec::with_capacity(d);
        for i in 0..d {
            encoder_res.push(ResidualBlock::new(
                &mut params,
                &format!("enc.res{i}"),
                width(i),
            )?);
            downs.push(DownStage {
                conv: Conv2d::new(
                    &mut params,
                    &format!("enc.down{i}.conv"),
                    width(i),
                    width(i + 1),
                    3,
                    2,
                    1,
                    1,
                )?,
                norm: InstanceNorm::new(&mut params, &format!("enc.down{i}.norm"), width(i + 1))?,
            });
        }

        let mut bottleneck = Vec::with_capacity(spec.residual_blocks_per_scale);
        for b in 0..spec.residual_blocks_per_scale {
            bottleneck.push(ResidualBlock::new(
                &mut params,
                &format!("bottleneck.res{b}"),
                width(d),
            )?);
        }

        // Decoder mirrors the encoder. Transposed convolutions halve the
        // filter count; each concatenated skip doubles it again, and the
        // per-scale residual block operates at the concatenated width.
        let mut ups = Vec::with_capacity(d);
        let mut decoder_res = Vec::with_capacity(d);
        for i in (0..d).rev() {
            let in_ch = if i + 1 == d { width(d) } else { 2 * width(i + 1) };
            ups.push(UpStage {
                conv: ConvTranspose2d::new(
                    &mut params,
                    &format!("dec.up{i}.conv"),
                    in_ch,
                    width(i),
                    4,
                    2,
                    1,
                )?,
                norm: InstanceNorm::new(&mut params, &format!("dec.up{i}.norm"), width(i))?,
            });
            decoder_res.push(ResidualBlock::new(
                &mut params,
                &format!("dec.res{i}"),
                2 * width(i),
            )?);
        }

        let head = Conv2d::new(&mut params, "head.conv", 2 * f, 3, 7, 1, 3, 1)?;
        params.finish()?;

        Ok(Generator {
            spec: spec.clone(),
            params,
            stem,
            stem_norm,
            encoder_res,
            downs,
            bottleneck,
            ups,
            decoder_res,
            head,
        })
    }

    /// Fresh generator with seeded initialization.
    pub fn new(spec: &GeneratorSpec, device: &Device, dtype: DType, seed: u64) -> Result<Self> {
        Self::build(spec, Params::init(device, dtype, seed))
    }

    /// Generator restored from checkpoint tensors.
    pub fn from_tensors(
        spec: &GeneratorSpec,
        device: &Device,
        dtype: DType,
        tensors: HashMap<String, Tensor>,
    ) -> Result<Self> {
        Self::build(spec, Params::from_tensors(device, dtype, tensors))
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let multiple = 1usize << self.spec.downsamples;
        if c != 3 {
            return Err(Error::Shape(format!("generator expects 3 channels, got {c}")));
        }
        if h % multiple != 0 || w % multiple != 0 {
            return Err(Error::Shape(format!(
                "generator input {h}x{w} must be a multiple of {multiple}"
            )));
        }

        let mut t = self.stem_norm.forward(&self.stem.forward(x)?)?.relu()?;
        let mut skips = Vec::with_capacity(self.downs.len());
        for (res, down) in self.encoder_res.iter().zip(&self.downs) {
            t = res.forward(&t)?;
            skips.push(t.clone());
            t = down.norm.forward(&down.conv.forward(&t)?)?.relu()?;
        }
        for block in &self.bottleneck {
            t = block.forward(&t)?;
        }
        for (k, up) in self.ups.iter().enumerate() {
            t = up.norm.forward(&up.conv.forward(&t)?)?.relu()?;
            let skip = &skips[self.downs.len() - 1 - k];
            t = Tensor::cat(&[&t, skip], 1)?;
            t = self.decoder_res[k].forward(&t)?;
        }
        Ok(self.head.forward(&t)?.tanh()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> GeneratorSpec {
        GeneratorSpec {
            base_filters: 4,
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn fully_convolutional_shape_contract() {
        let dev = Device::Cpu;
        let g = Generator::new(&tiny_spec(), &dev, DType::F32, 0).unwrap();
        for size in [32usize, 48] {
            let x = Tensor::rand(-1f32, 1f32, (1, 3, size, size), &dev).unwrap();
            let y = g.forward(&x).unwrap();
            assert_eq!(y.dims(), &[1, 3, size, size]);
            let max = y
                .abs()
                .unwrap()
                .flatten_all()
                .unwrap()
                .max(0)
                .unwrap()
                .to_scalar::<f32>()
                .unwrap();
            assert!(max <= 1.0, "output escaped [-1,1]: {max}");
        }
    }

    #[test]
    fn incompatible_size_is_rejected_by_name() {
        let dev = Device::Cpu;
        let g = Generator::new(&tiny_spec(), &dev, DType::F32, 0).unwrap();
        let x = Tensor::rand(-1f32, 1f32, (1, 3, 30, 30), &dev).unwrap();
        let err = g.forward(&x).unwrap_err();
        assert!(err.to_string().contains("multiple of 4"), "{err}");
    }

    #[test]
    fn default_first_layer_has_64_filters() {
        let dev = Device::Cpu;
        let g = Generator::new(&GeneratorSpec::default(), &dev, DType::F32, 0).unwrap();
        let stem = &g.params().vars()["stem.conv.weight"];
        assert_eq!(stem.dims(), &[64, 3, 7, 7]);
    }

    #[test]
    fn seeded_construction_is_reproducible() {
        let dev = Device::Cpu;
        let a = Generator::new(&tiny_spec(), &dev, DType::F32, 3).unwrap();
        let b = Generator::new(&tiny_spec(), &dev, DType::F32, 3).unwrap();
        for (name, va) in a.params().vars() {
            let vb = &b.params().vars()[name];
            assert_eq!(
                va.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
                vb.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
                "{name}"
            );
        }
    }
}
