//! The two-domain adversarial training loop: paired generators and
//! discriminators, the normalized multi-term objective, disjoint per-step
//! data, linear rate decay, checkpointing, and deterministic resume.

mod adam;
mod checkpoint;

pub use checkpoint::{
    checkpoint_dir_name, latest_checkpoint, load_checkpoint, Checkpoint, CheckpointState,
};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{augment, AugmentConfig, BatchStream, ImageData, ImageFolder};
use crate::error::{Error, Result};
use crate::eval::Direction;
use crate::losses::{
    cyclic_loss, feature_matching_loss, gan_loss, total_objective, ObjectiveTerms, SlnBank,
};
use crate::nets::{Discriminator, Generator};
use crate::util::{rng_for, seed_for};

use adam::Adam;
use checkpoint::{save_checkpoint, strip_prefix};

/// The four networks plus everything needed to continue training: optimizer
/// moments, normalization state, and the iteration counter.
pub struct ModelBundle {
    /// G: X -> Y
    pub gen_xy: Generator,
    /// F: Y -> X
    pub gen_yx: Generator,
    pub disc_x: Discriminator,
    pub disc_y: Discriminator,
    pub sln: SlnBank,
    pub iteration: u64,
    adam_gen: Adam,
    adam_disc: Adam,
}

impl ModelBundle {
    /// Freshly initialized networks, deterministically seeded from the
    /// config seed.
    pub fn init(cfg: &ExperimentConfig, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let dtype = DType::F32;
        Ok(ModelBundle {
            gen_xy: Generator::new(&cfg.generator, device, dtype, seed_for(cfg.seed, "init/g", 0))?,
            gen_yx: Generator::new(&cfg.generator, device, dtype, seed_for(cfg.seed, "init/f", 0))?,
            disc_x: Discriminator::new(
                &cfg.discriminator,
                device,
                dtype,
                seed_for(cfg.seed, "init/dx", 0),
            )?,
            disc_y: Discriminator::new(
                &cfg.discriminator,
                device,
                dtype,
                seed_for(cfg.seed, "init/dy", 0),
            )?,
            sln: SlnBank::new(cfg.sln.decay, cfg.sln.epsilon, cfg.sln.period)?,
            iteration: 0,
            adam_gen: Adam::new(&cfg.optimizer),
            adam_disc: Adam::new(&cfg.optimizer),
        })
    }

    /// Restores a bundle from a checkpoint, validating that the stored specs
    /// match the requested config before touching any weights.
    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        cfg: &ExperimentConfig,
        device: &Device,
    ) -> Result<Self> {
        resume_compatible(&ckpt.state.config, cfg)?;
        let dtype = DType::F32;
        let gen_xy = Generator::from_tensors(
            &cfg.generator,
            device,
            dtype,
            strip_prefix(&ckpt.model, "g"),
        )?;
        let gen_yx = Generator::from_tensors(
            &cfg.generator,
            device,
            dtype,
            strip_prefix(&ckpt.model, "f"),
        )?;
        let disc_x = Discriminator::from_tensors(
            &cfg.discriminator,
            device,
            dtype,
            strip_prefix(&ckpt.model, "dx"),
        )?;
        let disc_y = Discriminator::from_tensors(
            &cfg.discriminator,
            device,
            dtype,
            strip_prefix(&ckpt.model, "dy"),
        )?;
        let split_moments = |prefix: &str| -> (BTreeMap<String, Tensor>, BTreeMap<String, Tensor>) {
            let sub = strip_prefix(&ckpt.optim, prefix);
            let m = strip_prefix(&sub, "m").into_iter().collect();
            let v = strip_prefix(&sub, "v").into_iter().collect();
            (m, v)
        };
        let (gm, gv) = split_moments("gen");
        let (dm, dv) = split_moments("disc");
        Ok(ModelBundle {
            gen_xy,
            gen_yx,
            disc_x,
            disc_y,
            sln: ckpt.state.sln.clone(),
            iteration: ckpt.state.iteration,
            adam_gen: Adam::from_state(&cfg.optimizer, ckpt.state.adam_gen_steps, gm, gv),
            adam_disc: Adam::from_state(&cfg.optimizer, ckpt.state.adam_disc_steps, dm, dv),
        })
    }

    fn generator_vars(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        for (name, var) in self.gen_xy.params().vars() {
            out.push((format!("g.{name}"), var.clone()));
        }
        for (name, var) in self.gen_yx.params().vars() {
            out.push((format!("f.{name}"), var.clone()));
        }
        out
    }

    fn discriminator_vars(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        for (name, var) in self.disc_x.params().vars() {
            out.push((format!("dx.{name}"), var.clone()));
        }
        for (name, var) in self.disc_y.params().vars() {
            out.push((format!("dy.{name}"), var.clone()));
        }
        out
    }

    /// All parameters under their checkpoint names.
    pub fn model_tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (prefix, params) in [
            ("g", self.gen_xy.params()),
            ("f", self.gen_yx.params()),
            ("dx", self.disc_x.params()),
            ("dy", self.disc_y.params()),
        ] {
            for (name, tensor) in params.tensors()? {
                out.insert(format!("{prefix}.{name}"), tensor);
            }
        }
        Ok(out)
    }

    fn optim_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (k, t) in self.adam_gen.state_tensors() {
            out.insert(format!("gen.{k}"), t);
        }
        for (k, t) in self.adam_disc.state_tensors() {
            out.insert(format!("disc.{k}"), t);
        }
        out
    }

    /// Writes a complete checkpoint directory.
    pub fn save(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
        let state = CheckpointState {
            iteration: self.iteration,
            config: cfg.clone(),
            sln: self.sln.clone(),
            adam_gen_steps: self.adam_gen.step_count(),
            adam_disc_steps: self.adam_disc.step_count(),
        };
        save_checkpoint(dir, &state, &self.model_tensors()?, &self.optim_tensors())
    }

    /// Inference entry point for one direction.
    pub fn translate(&self, input: &Tensor, direction: Direction) -> Result<Tensor> {
        match direction {
            Direction::XToY => self.gen_xy.forward(input),
            Direction::YToX => self.gen_yx.forward(input),
        }
    }
}

/// Fields that may legitimately differ when resuming a run.
fn resume_compatible(stored: &ExperimentConfig, current: &ExperimentConfig) -> Result<()> {
    let normalize = |c: &ExperimentConfig| {
        let mut c = c.clone();
        c.total_iterations = 0;
        c.checkpoint_every = 1;
        c.eval_every = 1;
        c
    };
    if normalize(stored) != normalize(current) {
        return Err(Error::Checkpoint(
            "checkpoint was produced by a different configuration (only total_iterations, \
             checkpoint_every and eval_every may change across a resume)"
                .into(),
        ));
    }
    Ok(())
}

/// One line of the metrics log.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub epoch: u64,
    pub lr: f64,
    pub raw_gan: f64,
    pub raw_feature_match: f64,
    pub raw_structure: f64,
    pub raw_l1: f64,
    pub raw_cycle: f64,
    pub effective_gan: f64,
    pub effective_feature_match: f64,
    pub effective_cycle: f64,
    pub sln_scheduled: bool,
    pub total: f64,
    pub disc_loss_x: Option<f64>,
    pub disc_loss_y: Option<f64>,
    pub wall_time_ms: f64,
}

impl MetricsRecord {
    /// Equality of everything that is a function of the training state
    /// (i.e., all fields except wall time).
    pub fn losses_equal(&self, other: &MetricsRecord) -> bool {
        let strip = |r: &MetricsRecord| MetricsRecord {
            wall_time_ms: 0.0,
            ..r.clone()
        };
        strip(self) == strip(other)
    }
}

/// Minibatches for one step; generator and discriminator batches are
/// disjoint within each domain (the stream guarantees it).
pub struct StepBatches {
    pub x_gen: Tensor,
    pub y_gen: Tensor,
    pub x_disc: Tensor,
    pub y_disc: Tensor,
}

fn ensure_finite(values: &[(&str, f64)], iteration: u64) -> Result<()> {
    let bad: Vec<String> = values
        .iter()
        .filter(|(_, v)| !v.is_finite())
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        let snapshot: Vec<String> = values.iter().map(|(k, v)| format!("{k}={v}")).collect();
        Err(Error::NonFinite {
            iteration,
            details: format!("{} (all terms: {})", bad.join(", "), snapshot.join(", ")),
        })
    }
}

/// Runs one training iteration: a generator update on both G and F from the
/// total objective, plus a discriminator update on D_X and D_Y every
/// `discriminator_every` steps using the separate discriminator batches.
pub fn train_step(
    bundle: &mut ModelBundle,
    batches: &StepBatches,
    cfg: &ExperimentConfig,
) -> Result<MetricsRecord> {
    let started = Instant::now();
    let iteration = bundle.iteration + 1;
    let lr = cfg.learning_rate_at(iteration);

    // generator update
    let fake_y = bundle.gen_xy.forward(&batches.x_gen)?;
    let fake_x = bundle.gen_yx.forward(&batches.y_gen)?;
    let x_cycle = bundle.gen_yx.forward(&fake_y)?;
    let y_cycle = bundle.gen_xy.forward(&fake_x)?;

    let (real_y_logits, real_y_taps) = bundle.disc_y.forward(&batches.y_gen)?;
    let (fake_y_logits, fake_y_taps) = bundle.disc_y.forward(&fake_y)?;
    let (real_x_logits, real_x_taps) = bundle.disc_x.forward(&batches.x_gen)?;
    let (fake_x_logits, fake_x_taps) = bundle.disc_x.forward(&fake_x)?;

    let (_, g_loss_y) = gan_loss(&real_y_logits, &fake_y_logits)?;
    let (_, g_loss_x) = gan_loss(&real_x_logits, &fake_x_logits)?;
    let gan_term = (g_loss_x + g_loss_y)?;

    let fm_term = (feature_matching_loss(&real_x_taps, &fake_x_taps)?
        + feature_matching_loss(&real_y_taps, &fake_y_taps)?)?;

    let cyclic = cyclic_loss(&batches.x_gen, &x_cycle, &batches.y_gen, &y_cycle, &cfg.weights)?;

    let terms = ObjectiveTerms {
        gan: gan_term,
        feature_match: fm_term,
        cyclic,
    };
    let (total, breakdown) = total_objective(&terms, &cfg.weights, &mut bundle.sln)?;
    ensure_finite(
        &[
            ("gan", breakdown.raw_gan),
            ("feature_match", breakdown.raw_feature_match),
            ("structure", breakdown.raw_structure),
            ("l1", breakdown.raw_l1),
            ("total", breakdown.total),
        ],
        iteration,
    )?;
    let grads = total.backward()?;
    bundle
        .adam_gen
        .step(&bundle.generator_vars(), &grads, lr)?;

    // discriminator update on its own disjoint data
    let mut disc_loss_x = None;
    let mut disc_loss_y = None;
    if iteration % cfg.discriminator_every == 0 {
        let fake_y_detached = bundle.gen_xy.forward(&batches.x_disc)?.detach();
        let fake_x_detached = bundle.gen_yx.forward(&batches.y_disc)?.detach();
        let (real_y_logits, _) = bundle.disc_y.forward(&batches.y_disc)?;
        let (fake_y_logits, _) = bundle.disc_y.forward(&fake_y_detached)?;
        let (real_x_logits, _) = bundle.disc_x.forward(&batches.x_disc)?;
        let (fake_x_logits, _) = bundle.disc_x.forward(&fake_x_detached)?;
        let (d_y, _) = gan_loss(&real_y_logits, &fake_y_logits)?;
        let (d_x, _) = gan_loss(&real_x_logits, &fake_x_logits)?;
        let d_x_val = d_x.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        let d_y_val = d_y.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        ensure_finite(&[("disc_x", d_x_val), ("disc_y", d_y_val)], iteration)?;
        let d_total = (d_x + d_y)?;
        let grads = d_total.backward()?;
        bundle
            .adam_disc
            .step(&bundle.discriminator_vars(), &grads, lr)?;
        disc_loss_x = Some(d_x_val);
        disc_loss_y = Some(d_y_val);
    }

    bundle.iteration = iteration;
    Ok(MetricsRecord {
        iteration,
        epoch: (iteration - 1) / cfg.epoch_size,
        lr,
        raw_gan: breakdown.raw_gan,
        raw_feature_match: breakdown.raw_feature_match,
        raw_structure: breakdown.raw_structure,
        raw_l1: breakdown.raw_l1,
        raw_cycle: breakdown.raw_cycle,
        effective_gan: breakdown.effective_gan,
        effective_feature_match: breakdown.effective_feature_match,
        effective_cycle: breakdown.effective_cycle,
        sln_scheduled: breakdown.scheduled,
        total: breakdown.total,
        disc_loss_x,
        disc_loss_y,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Builds the augmented batch for one (domain, role, iteration). Every
/// sample's transform is a pure function of the config seed, so batches
/// replay identically across runs and resumes.
pub fn assemble_batch(
    folder: &ImageFolder,
    indices: &[usize],
    aug: &AugmentConfig,
    seed: u64,
    label: &str,
    iteration: u64,
    device: &Device,
) -> Result<Tensor> {
    let mut out = Vec::with_capacity(indices.len());
    for (slot, &idx) in indices.iter().enumerate() {
        let mut rng = rng_for(
            seed,
            label,
            (iteration - 1) * indices.len() as u64 + slot as u64,
        );
        out.push(augment(&folder.images[idx], aug, &mut rng)?);
    }
    ImageData::batch_to_tensor(&out, device)
}

/// A full training run in `run_dir`: snapshots the config, streams batches,
/// logs metrics, writes periodic sample grids and checkpoints, and resumes
/// from the latest checkpoint if one exists. Returns the final iteration.
pub fn train(cfg: &ExperimentConfig, run_dir: &Path) -> Result<u64> {
    cfg.validate()?;
    let device = Device::Cpu;
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let snapshot_path = run_dir.join("config.snapshot");
    fs::write(&snapshot_path, cfg.to_toml_string()?).map_err(|e| Error::io(&snapshot_path, e))?;

    let folder_x = ImageFolder::load(&cfg.data.x)?;
    let folder_y = ImageFolder::load(&cfg.data.y)?;
    let stream_x = BatchStream::new(
        folder_x.len(),
        cfg.batch_size,
        cfg.epoch_size,
        seed_for(cfg.seed, "stream/x", 0),
    )?;
    let stream_y = BatchStream::new(
        folder_y.len(),
        cfg.batch_size,
        cfg.epoch_size,
        seed_for(cfg.seed, "stream/y", 0),
    )?;

    let mut bundle = match latest_checkpoint(run_dir)? {
        Some(dir) => {
            log::info!("resuming from {}", dir.display());
            let ckpt = load_checkpoint(&dir, &device)?;
            ModelBundle::from_checkpoint(&ckpt, cfg, &device)?
        }
        None => ModelBundle::init(cfg, &device)?,
    };

    let checkpoints_root = run_dir.join("checkpoints");
    let samples_root = run_dir.join("samples");
    fs::create_dir_all(&checkpoints_root).map_err(|e| Error::io(&checkpoints_root, e))?;
    fs::create_dir_all(&samples_root).map_err(|e| Error::io(&samples_root, e))?;

    if cfg.total_iterations == 0 {
        let dir = checkpoints_root.join(checkpoint_dir_name(0));
        bundle.save(&dir, cfg)?;
        return Ok(0);
    }

    // fixed probe images for the periodic sample grids
    let probe = |folder: &ImageFolder, aug: &AugmentConfig, label: &str| -> Result<Tensor> {
        let n = folder.len().min(4);
        let mut images = Vec::with_capacity(n);
        for k in 0..n {
            let mut rng = rng_for(cfg.seed, label, k as u64);
            images.push(augment(&folder.images[k], aug, &mut rng)?);
        }
        ImageData::batch_to_tensor(&images, &device)
    };
    let x_probe = probe(&folder_x, &cfg.augment_x, "probe/x")?;
    let y_probe = probe(&folder_y, &cfg.augment_y, "probe/y")?;

    let metrics_path = run_dir.join("metrics.log");
    let metrics_file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = std::io::BufWriter::new(metrics_file);

    while bundle.iteration < cfg.total_iterations {
        let iteration = bundle.iteration + 1;
        let step_index = iteration - 1;
        let (x_gen_idx, x_disc_idx) = stream_x.next_pair(step_index);
        let (y_gen_idx, y_disc_idx) = stream_y.next_pair(step_index);
        let batches = StepBatches {
            x_gen: assemble_batch(
                &folder_x, &x_gen_idx, &cfg.augment_x, cfg.seed, "aug/x/gen", iteration, &device,
            )?,
            y_gen: assemble_batch(
                &folder_y, &y_gen_idx, &cfg.augment_y, cfg.seed, "aug/y/gen", iteration, &device,
            )?,
            x_disc: assemble_batch(
                &folder_x, &x_disc_idx, &cfg.augment_x, cfg.seed, "aug/x/disc", iteration, &device,
            )?,
            y_disc: assemble_batch(
                &folder_y, &y_disc_idx, &cfg.augment_y, cfg.seed, "aug/y/disc", iteration, &device,
            )?,
        };
        let record = train_step(&mut bundle, &batches, cfg)?;
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Data(format!("metrics encode: {e}")))?;
        writeln!(metrics, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;

        if iteration % cfg.eval_every == 0 {
            let path = samples_root.join(format!("iter_{iteration:08}.png"));
            write_sample_grid(&path, &bundle, &x_probe, &y_probe)?;
        }
        if iteration % cfg.checkpoint_every == 0 || iteration == cfg.total_iterations {
            let dir = checkpoints_root.join(checkpoint_dir_name(iteration));
            bundle.save(&dir, cfg)?;
        }
    }
    Ok(bundle.iteration)
}

/// Grid rows per probe: input | translated | cycle reconstruction. X-domain
/// probes first, then Y-domain probes.
fn write_sample_grid(
    path: &Path,
    bundle: &ModelBundle,
    x_probe: &Tensor,
    y_probe: &Tensor,
) -> Result<()> {
    let mut rows: Vec<[RgbImage; 3]> = Vec::new();
    let mut push_rows = |input: &Tensor, fwd: &Generator, bwd: &Generator| -> Result<()> {
        let translated = fwd.forward(input)?;
        let cycled = bwd.forward(&translated)?;
        let n = input.dims4()?.0;
        for k in 0..n {
            rows.push([
                ImageData::from_tensor(&input.narrow(0, k, 1)?)?.to_rgb(),
                ImageData::from_tensor(&translated.narrow(0, k, 1)?)?.to_rgb(),
                ImageData::from_tensor(&cycled.narrow(0, k, 1)?)?.to_rgb(),
            ]);
        }
        Ok(())
    };
    push_rows(x_probe, &bundle.gen_xy, &bundle.gen_yx)?;
    push_rows(y_probe, &bundle.gen_yx, &bundle.gen_xy)?;

    let cell_w = rows.iter().map(|r| r[0].width()).max().unwrap_or(1);
    let cell_h = rows.iter().map(|r| r[0].height()).max().unwrap_or(1);
    let mut grid = RgbImage::from_pixel(cell_w * 3, cell_h * rows.len() as u32, image::Rgb([255; 3]));
    for (row, images) in rows.iter().enumerate() {
        for (col, img) in images.iter().enumerate() {
            for (x, y, px) in img.enumerate_pixels() {
                grid.put_pixel(col as u32 * cell_w + x, row as u32 * cell_h + y, *px);
            }
        }
    }
    grid.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads a checkpoint and returns the bundle plus the stored config.
pub fn load_bundle(ckpt_dir: &Path, device: &Device) -> Result<(ModelBundle, ExperimentConfig)> {
    let ckpt = load_checkpoint(ckpt_dir, device)?;
    let cfg = ckpt.state.config.clone();
    let bundle = ModelBundle::from_checkpoint(&ckpt, &cfg, device)?;
    Ok((bundle, cfg))
}

/// Batch-translates every image in a folder through a checkpointed
/// generator. Outputs are written as lossless PNGs named after the inputs,
/// in input order.
pub fn translate_images(
    ckpt_dir: &Path,
    input_dir: &Path,
    out_dir: &Path,
    direction: Direction,
) -> Result<Vec<PathBuf>> {
    let device = Device::Cpu;
    let (bundle, cfg) = load_bundle(ckpt_dir, &device)?;
    let folder = ImageFolder::load(input_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let multiple = 1usize << cfg.generator.downsamples;
    let mut outputs = Vec::with_capacity(folder.len());
    for (img, name) in folder.images.iter().zip(&folder.names) {
        if img.height % multiple != 0 || img.width % multiple != 0 {
            return Err(Error::Shape(format!(
                "{name}: {}x{} input must be a multiple of {multiple}",
                img.width, img.height
            )));
        }
        let input = ImageData::batch_to_tensor(std::slice::from_ref(img), &device)?;
        let translated = bundle.translate(&input, direction)?;
        let out_img = ImageData::from_tensor(&translated)?.to_rgb();
        let stem = Path::new(name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| name.clone());
        let out_path = out_dir.join(format!("{stem}.png"));
        out_img.save(&out_path).map_err(|e| Error::Image {
            path: out_path.clone(),
            message: e.to_string(),
        })?;
        outputs.push(out_path);
    }
    Ok(outputs)
}
