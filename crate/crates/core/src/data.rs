//! Image folder loading, the training augmentation pipeline, and disjoint
//! minibatch streams.

use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use image::RgbImage;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::rng_for;

/// One decoded image: planar CHW f32 with values in [-1, 1].
#[derive(Debug, Clone)]
pub struct ImageData {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageData {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0f32; 3 * h * w];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[c * h * w + y as usize * w + x as usize] =
                    f32::from(px.0[c]) / 127.5 - 1.0;
            }
        }
        ImageData {
            channels: 3,
            height: h,
            width: w,
            data,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_rgb8();
        Ok(Self::from_rgb(&img))
    }

    /// Back to 8-bit RGB, clamping into range.
    pub fn to_rgb(&self) -> RgbImage {
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut px = [0u8; 3];
                for c in 0..3.min(self.channels) {
                    let v = self.data[c * self.height * self.width + y * self.width + x];
                    px[c] = (((v + 1.0) * 127.5).round()).clamp(0.0, 255.0) as u8;
                }
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        img
    }

    /// Stacks same-sized images into an (N, C, H, W) tensor.
    pub fn batch_to_tensor(images: &[ImageData], device: &Device) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::Data("empty batch".into()))?;
        let (c, h, w) = (first.channels, first.height, first.width);
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if (img.channels, img.height, img.width) != (c, h, w) {
                return Err(Error::Shape(format!(
                    "batch mixes image sizes: {}x{} vs {}x{}",
                    img.width, img.height, w, h
                )));
            }
            data.extend_from_slice(&img.data);
        }
        Ok(Tensor::from_vec(data, (images.len(), c, h, w), device)?)
    }

    /// Extracts a single image from a (1, C, H, W) or (C, H, W) tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.dims() {
            [1, ..] if t.dims().len() == 4 => t.squeeze(0)?,
            [_, _, _] => t.clone(),
            dims => {
                return Err(Error::Shape(format!(
                    "expected (1,C,H,W) or (C,H,W) tensor, got {dims:?}"
                )))
            }
        };
        let (c, h, w) = t.dims3()?;
        let data = t.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Ok(ImageData {
            channels: c,
            height: h,
            width: w,
            data,
        })
    }
}

/// An indexed, decoded image folder.
pub struct ImageFolder {
    pub images: Vec<ImageData>,
    pub names: Vec<String>,
    /// Files that failed to decode and were skipped (with a logged warning).
    pub skipped: usize,
    pub root: PathBuf,
}

impl ImageFolder {
    /// Loads every decodable image under `path` (non-recursive), sorted by
    /// file name. Corrupt files are skipped with a warning; an empty or
    /// unreadable directory is an error.
    pub fn load(path: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut images = Vec::new();
        let mut names = Vec::new();
        let mut skipped = 0usize;
        for file in files {
            match ImageData::load(&file) {
                Ok(img) => {
                    names.push(
                        file.file_name()
                            .map(|n| n.to_string_lossy().into_owned())
                            .unwrap_or_default(),
                    );
                    images.push(img);
                }
                Err(e) => {
                    log::warn!("skipping undecodable file: {e}");
                    skipped += 1;
                }
            }
        }
        if images.is_empty() {
            return Err(Error::Data(format!(
                "no decodable images in {}",
                path.display()
            )));
        }
        Ok(ImageFolder {
            images,
            names,
            skipped,
            root: path.to_path_buf(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Augmentation recipe. The pipeline order is fixed: enlarge by
/// `rescale_factor`, random horizontal flip, random rotation within
/// `±max_rotation_deg`, random scale jitter, random crop to `crop_size`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub rescale_factor: f64,
    pub max_rotation_deg: f64,
    pub flip_horizontal: bool,
    pub crop_size: usize,
    pub rescale_jitter: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rescale_factor: 1.1,
            max_rotation_deg: 30.0,
            flip_horizontal: true,
            crop_size: 128,
            rescale_jitter: (0.9, 1.1),
        }
    }
}

impl AugmentConfig {
    /// Default recipe producing `size`-pixel crops.
    pub fn for_size(size: usize) -> Self {
        AugmentConfig {
            crop_size: size,
            ..Default::default()
        }
    }

    /// Pass-through configuration: output equals input for `size` images.
    pub fn identity(size: usize) -> Self {
        AugmentConfig {
            rescale_factor: 1.0,
            max_rotation_deg: 0.0,
            flip_horizontal: false,
            crop_size: size,
            rescale_jitter: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rescale_factor < 1.0 {
            return Err(Error::Validation(format!(
                "rescale_factor must be >= 1, got {}",
                self.rescale_factor
            )));
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return Err(Error::Validation(format!(
                "max_rotation_deg must be in [0, 180], got {}",
                self.max_rotation_deg
            )));
        }
        if self.rescale_jitter.0 <= 0.0 || self.rescale_jitter.0 > self.rescale_jitter.1 {
            return Err(Error::Validation(format!(
                "rescale_jitter range ({}, {}) is invalid",
                self.rescale_jitter.0, self.rescale_jitter.1
            )));
        }
        if self.crop_size == 0 {
            return Err(Error::Validation("crop_size must be positive".into()));
        }
        Ok(())
    }
}

/// Reflected (mirror, no edge repeat) index for out-of-bounds sampling.
fn reflect(i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Applies the augmentation pipeline. All geometric operations act about the
/// image center and are composed into a single bilinear resample with
/// reflect padding, so the image is interpolated exactly once.
pub fn augment(img: &ImageData, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<ImageData> {
    cfg.validate()?;
    let (h, w) = (img.height as f64, img.width as f64);
    let src_min = h.min(w);
    if (cfg.crop_size as f64) > cfg.rescale_factor * src_min {
        return Err(Error::Validation(format!(
            "crop_size {} exceeds rescale_factor * source size ({} * {})",
            cfg.crop_size, cfg.rescale_factor, src_min
        )));
    }

    // Draw order is part of the contract: flip, rotation, jitter, crop.
    let flip = cfg.flip_horizontal && rng.random_bool(0.5);
    let theta = if cfg.max_rotation_deg > 0.0 {
        rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
            .to_radians()
    } else {
        0.0
    };
    let jitter = if cfg.rescale_jitter.0 < cfg.rescale_jitter.1 {
        rng.random_range(cfg.rescale_jitter.0..=cfg.rescale_jitter.1)
    } else {
        cfg.rescale_jitter.0
    };
    // Never let jitter shrink the canvas below the crop.
    let mut scale = cfg.rescale_factor * jitter;
    let min_scale = cfg.crop_size as f64 / src_min;
    if scale < min_scale {
        scale = min_scale;
    }
    let out_h = (h * scale).round().max(cfg.crop_size as f64) as usize;
    let out_w = (w * scale).round().max(cfg.crop_size as f64) as usize;
    let oy = if out_h > cfg.crop_size {
        rng.random_range(0..=(out_h - cfg.crop_size)) as f64
    } else {
        0.0
    };
    let ox = if out_w > cfg.crop_size {
        rng.random_range(0..=(out_w - cfg.crop_size)) as f64
    } else {
        0.0
    };

    let (sin_t, cos_t) = theta.sin_cos();
    let crop = cfg.crop_size;
    let c = img.channels;
    let (ih, iw) = (img.height as i64, img.width as i64);
    let mut out = vec![0.0f32; c * crop * crop];
    for v in 0..crop {
        for u in 0..crop {
            // output pixel center, relative to the scaled canvas center
            let px = u as f64 + 0.5 + ox - out_w as f64 / 2.0;
            let py = v as f64 + 0.5 + oy - out_h as f64 / 2.0;
            // invert scale, then rotation, then flip
            let qx = px / scale;
            let qy = py / scale;
            let rx = cos_t * qx + sin_t * qy;
            let ry = -sin_t * qx + cos_t * qy;
            let sx = if flip { -rx } else { rx } + w / 2.0;
            let sy = ry + h / 2.0;
            // bilinear sample at (sx, sy) with pixel centers at i + 0.5
            let fx = sx - 0.5;
            let fy = sy - 0.5;
            let x0 = fx.floor();
            let y0 = fy.floor();
            let tx = (fx - x0) as f32;
            let ty = (fy - y0) as f32;
            let x0 = x0 as i64;
            let y0 = y0 as i64;
            let (xa, xb) = (reflect(x0, iw), reflect(x0 + 1, iw));
            let (ya, yb) = (reflect(y0, ih), reflect(y0 + 1, ih));
            for ch in 0..c {
                let plane = &img.data[ch * img.height * img.width..];
                let at = |x: usize, y: usize| plane[y * img.width + x];
                let top = at(xa, ya) * (1.0 - tx) + at(xb, ya) * tx;
                let bot = at(xa, yb) * (1.0 - tx) + at(xb, yb) * tx;
                let val = top * (1.0 - ty) + bot * ty;
                out[ch * crop * crop + v * crop + u] = val.clamp(-1.0, 1.0);
            }
        }
    }
    Ok(ImageData {
        channels: c,
        height: crop,
        width: crop,
        data: out,
    })
}

/// Deterministic minibatch scheduler. Within one step the generator and
/// discriminator batches are disjoint by construction: both are consecutive
/// slices of one permutation, and a permutation is never straddled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchStream {
    pub dataset_len: usize,
    pub batch_size: usize,
    /// Batches per epoch; affects only epoch accounting, exactly as
    /// configured.
    pub epoch_size: u64,
    pub seed: u64,
}

impl BatchStream {
    pub fn new(dataset_len: usize, batch_size: usize, epoch_size: u64, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Validation("batch_size must be positive".into()));
        }
        if dataset_len < 2 * batch_size {
            return Err(Error::Data(format!(
                "dataset of {dataset_len} images is too small: disjoint generator/discriminator \
                 batches need at least {} images (2 * batch_size)",
                2 * batch_size
            )));
        }
        if epoch_size == 0 {
            return Err(Error::Validation("epoch_size must be positive".into()));
        }
        Ok(BatchStream {
            dataset_len,
            batch_size,
            epoch_size,
            seed,
        })
    }

    fn steps_per_permutation(&self) -> u64 {
        (self.dataset_len / (2 * self.batch_size)) as u64
    }

    /// Epoch index of a step, honoring the configured batches-per-epoch.
    pub fn epoch_of(&self, step: u64) -> u64 {
        step / self.epoch_size
    }

    /// Disjoint (generator, discriminator) index batches for a step.
    /// A pure function of (seed, step), so streams replay identically and
    /// resume for free.
    pub fn next_pair(&self, step: u64) -> (Vec<usize>, Vec<usize>) {
        let spp = self.steps_per_permutation();
        let round = step / spp;
        let offset = (step % spp) as usize * 2 * self.batch_size;
        let mut perm: Vec<usize> = (0..self.dataset_len).collect();
        let mut rng = rng_for(self.seed, "batch-perm", round);
        // Fisher-Yates
        for i in (1..perm.len()).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let gen = perm[offset..offset + self.batch_size].to_vec();
        let disc = perm[offset + self.batch_size..offset + 2 * self.batch_size].to_vec();
        (gen, disc)
    }
}
