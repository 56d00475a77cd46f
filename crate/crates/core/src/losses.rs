//! Objective terms: adversarial (per-position binary cross-entropy on logit
//! maps), feature matching over discriminator activations, MS-SSIM and L1
//! cyclic reconstruction, and their scheduled-normalization combination.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::FeatureTaps;
use crate::sln::SlnState;

/// Loss-term weights. The adversarial/feature-match/cycle weights and the
/// structure/L1 sub-weights each form a simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub gan: f64,
    pub feature_match: f64,
    pub cycle: f64,
    pub structure: f64,
    pub l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gan: 0.49,
            feature_match: 0.21,
            cycle: 0.30,
            structure: 0.70,
            l1: 0.30,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gan", self.gan),
            ("feature_match", self.feature_match),
            ("cycle", self.cycle),
            ("structure", self.structure),
            ("l1", self.l1),
        ] {
            if v < 0.0 {
                return Err(Error::Validation(format!("weight {name} is negative: {v}")));
            }
        }
        let outer = self.gan + self.feature_match + self.cycle;
        if (outer - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "gan + feature_match + cycle must equal 1, got {outer}"
            )));
        }
        let inner = self.structure + self.l1;
        if (inner - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "structure + l1 must equal 1, got {inner}"
            )));
        }
        Ok(())
    }
}

fn softplus(x: &Tensor) -> Result<Tensor> {
    // max(x, 0) + ln(1 + exp(-|x|)), stable at both tails
    let relu = x.relu()?;
    let tail = ((x.abs()?.neg()?.exp()? + 1.0)?).log()?;
    Ok((relu + tail)?)
}

/// Per-position binary cross-entropy with real -> 1 and fake -> 0 targets,
/// averaged over every position of both maps. Returns the discriminator loss
/// and the non-saturating generator loss.
pub fn gan_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Result<(Tensor, Tensor)> {
    if real_logits.dims() != fake_logits.dims() {
        return Err(Error::Shape(format!(
            "logit maps differ: {:?} vs {:?}",
            real_logits.dims(),
            fake_logits.dims()
        )));
    }
    let d_real = softplus(&real_logits.neg()?)?.mean_all()?;
    let d_fake = softplus(fake_logits)?.mean_all()?;
    let d_loss = ((d_real + d_fake)? * 0.5)?;
    let g_loss = softplus(&fake_logits.neg()?)?.mean_all()?;
    Ok((d_loss, g_loss))
}

/// Mean over tapped layers of the squared L2 distance between batch-mean
/// activations of real and generated inputs.
pub fn feature_matching_loss(real: &FeatureTaps, fake: &FeatureTaps) -> Result<Tensor> {
    if real.layers.len() != fake.layers.len() || real.layers.is_empty() {
        return Err(Error::Shape(format!(
            "tap count mismatch: {} vs {}",
            real.layers.len(),
            fake.layers.len()
        )));
    }
    let mut acc: Option<Tensor> = None;
    for (r, f) in real.layers.iter().zip(&fake.layers) {
        if r.dims() != f.dims() {
            return Err(Error::Shape(format!(
                "tap shapes differ: {:?} vs {:?}",
                r.dims(),
                f.dims()
            )));
        }
        let diff = (r.mean(0)? - f.mean(0)?)?;
        let term = diff.sqr()?.sum_all()?;
        acc = Some(match acc {
            Some(a) => (a + term)?,
            None => term,
        });
    }
    let total = acc.expect("nonempty taps");
    Ok((total / real.layers.len() as f64)?)
}

/// Mean absolute error over all elements.
pub fn l1_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "l1 shapes differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}

/// Reference per-scale exponents (finest to coarsest).
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// MS-SSIM configuration. Defaults are the reference setup on the network
/// value range [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MsSsimOptions {
    pub scales: usize,
    pub kernel_size: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
    /// Replace the covariance-bearing contrast-structure term with a
    /// contrast-only term. Off by default; not part of the reference method.
    pub omit_structure: bool,
}

impl Default for MsSsimOptions {
    fn default() -> Self {
        MsSsimOptions {
            scales: 5,
            kernel_size: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 2.0,
            omit_structure: false,
        }
    }
}

impl MsSsimOptions {
    pub fn with_scales(scales: usize) -> Self {
        MsSsimOptions {
            scales,
            ..Default::default()
        }
    }

    /// Scale exponents: the reference vector truncated to `scales` entries
    /// and renormalized to sum 1.
    pub fn weights(&self) -> Vec<f64> {
        let w = &MS_SSIM_WEIGHTS[..self.scales];
        let sum: f64 = w.iter().sum();
        w.iter().map(|v| v / sum).collect()
    }

    /// Smallest admissible image side for this configuration.
    pub fn min_side(&self) -> usize {
        self.kernel_size * (1 << (self.scales - 1))
    }
}

/// Largest scale count (up to 5) whose pyramid fits `h` x `w` images.
pub fn max_feasible_scales(h: usize, w: usize) -> Result<usize> {
    let side = h.min(w);
    let kernel = MsSsimOptions::default().kernel_size;
    if side < kernel {
        return Err(Error::Shape(format!(
            "images {h}x{w} are too small for MS-SSIM; need at least {kernel}x{kernel}"
        )));
    }
    let mut scales = 1usize;
    while scales < 5 && side >= kernel * (1 << scales) {
        scales += 1;
    }
    Ok(scales)
}

fn gaussian_window(opts: &MsSsimOptions, channels: usize, like: &Tensor) -> Result<Tensor> {
    let k = opts.kernel_size;
    let center = (k as f64 - 1.0) / 2.0;
    let mut vals = Vec::with_capacity(k * k);
    let mut sum = 0.0;
    for y in 0..k {
        for x in 0..k {
            let dx = x as f64 - center;
            let dy = y as f64 - center;
            let v = (-(dx * dx + dy * dy) / (2.0 * opts.sigma * opts.sigma)).exp();
            vals.push(v);
            sum += v;
        }
    }
    for v in &mut vals {
        *v /= sum;
    }
    let w = Tensor::from_vec(vals, (1, 1, k, k), like.device())?.to_dtype(like.dtype())?;
    Ok(w.repeat((channels, 1, 1, 1))?)
}

/// Positive-clamped x^e via exp(e * ln(x)); keeps the whole pipeline
/// differentiable through the backend.
fn powf_stable(x: &Tensor, e: f64) -> Result<Tensor> {
    Ok((x.clamp(1e-8, f64::INFINITY)?.log()? * e)?.exp()?)
}

/// Multi-scale structural similarity, batch-averaged, in [0, 1] for inputs
/// within the declared data range. Contrast/structure statistics contribute
/// at every scale; luminance only at the coarsest, per the reference method.
pub fn ms_ssim_opts(a: &Tensor, b: &Tensor, opts: &MsSsimOptions) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "MS-SSIM shapes differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if opts.scales == 0 || opts.scales > 5 {
        return Err(Error::Validation(format!(
            "MS-SSIM scales must be in 1..=5, got {}",
            opts.scales
        )));
    }
    let (n, c, h, w) = a.dims4()?;
    let min_side = opts.min_side();
    if h.min(w) < min_side {
        return Err(Error::Shape(format!(
            "images {h}x{w} too small for {} MS-SSIM scales with window {}; \
             need at least {min_side}x{min_side}",
            opts.scales, opts.kernel_size
        )));
    }
    let c1 = (opts.k1 * opts.data_range).powi(2);
    let c2 = (opts.k2 * opts.data_range).powi(2);
    let weights = opts.weights();

    let window = gaussian_window(opts, c, a)?;
    let blur = |t: &Tensor| -> Result<Tensor> { Ok(t.conv2d(&window, 0, 1, 1, c)?) };
    // per-image mean over channel and the two spatial dims
    let per_image_mean = |t: &Tensor| -> Result<Tensor> { Ok(t.mean(3)?.mean(2)?.mean(1)?) };

    let mut x = a.clone();
    let mut y = b.clone();
    let mut per_image: Option<Tensor> = None; // (N,), running product
    for (scale, weight) in weights.iter().enumerate() {
        let mu_x = blur(&x)?;
        let mu_y = blur(&y)?;
        let mu_x2 = mu_x.sqr()?;
        let mu_y2 = mu_y.sqr()?;
        let mu_xy = (&mu_x * &mu_y)?;
        let sigma_x2 = (blur(&x.sqr()?)? - &mu_x2)?;
        let sigma_y2 = (blur(&y.sqr()?)? - &mu_y2)?;
        let sigma_xy = (blur(&(&x * &y)?)? - &mu_xy)?;

        let cs_map = if opts.omit_structure {
            // contrast-only variant (config switch; not the reference form)
            let sx = sigma_x2.clamp(0.0, f64::INFINITY)?.sqrt()?;
            let sy = sigma_y2.clamp(0.0, f64::INFINITY)?.sqrt()?;
            let num = (((&sx * &sy)? * 2.0)? + c2)?;
            let den = ((sigma_x2 + sigma_y2)? + c2)?;
            (num / den)?
        } else {
            let num = ((sigma_xy * 2.0)? + c2)?;
            let den = ((sigma_x2 + sigma_y2)? + c2)?;
            (num / den)?
        };

        let factor = if scale + 1 == opts.scales {
            // coarsest scale: include luminance
            let l_num = ((mu_xy * 2.0)? + c1)?;
            let l_den = ((mu_x2 + mu_y2)? + c1)?;
            let ssim_map = ((l_num / l_den)? * cs_map)?;
            powf_stable(&per_image_mean(&ssim_map)?, *weight)?
        } else {
            powf_stable(&per_image_mean(&cs_map)?, *weight)?
        };
        per_image = Some(match per_image {
            Some(p) => (p * factor)?,
            None => factor,
        });
        if scale + 1 < opts.scales {
            x = x.avg_pool2d(2)?;
            y = y.avg_pool2d(2)?;
        }
    }
    let per_image = per_image.expect("at least one scale");
    debug_assert_eq!(per_image.dims(), &[n]);
    Ok(per_image.mean_all()?)
}

/// MS-SSIM with default options at the given scale count.
pub fn ms_ssim(a: &Tensor, b: &Tensor, scales: usize) -> Result<Tensor> {
    ms_ssim_opts(a, b, &MsSsimOptions::with_scales(scales))
}

/// The cyclic reconstruction terms and their weighted combination.
pub struct CyclicTerms {
    /// structure * L_SS + l1 * L_L1
    pub total: Tensor,
    /// (1 - MS-SSIM(x', x)) + (1 - MS-SSIM(y', y))
    pub structure: Tensor,
    /// mean |x' - x| + mean |y' - y|
    pub l1: Tensor,
}

/// Cyclic loss over both reconstruction directions. The MS-SSIM scale count
/// adapts to the largest pyramid the images support (up to 5).
pub fn cyclic_loss(
    x: &Tensor,
    x_rec: &Tensor,
    y: &Tensor,
    y_rec: &Tensor,
    w: &LossWeights,
) -> Result<CyclicTerms> {
    w.validate()?;
    let (_, _, hx, wx) = x.dims4()?;
    let (_, _, hy, wy) = y.dims4()?;
    let ss_x = ms_ssim(x_rec, x, max_feasible_scales(hx, wx)?)?;
    let ss_y = ms_ssim(y_rec, y, max_feasible_scales(hy, wy)?)?;
    let structure = ((ss_x.neg()? + 1.0)? + (ss_y.neg()? + 1.0)?)?;
    let l1 = (l1_loss(x_rec, x)? + l1_loss(y_rec, y)?)?;
    let total = ((&structure * w.structure)? + (&l1 * w.l1)?)?;
    Ok(CyclicTerms {
        total,
        structure,
        l1,
    })
}

/// The three normalization channels of the training objective: adversarial,
/// feature matching, and the grouped cyclic term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlnBank {
    pub gan: SlnState,
    pub feature_match: SlnState,
    pub cycle: SlnState,
}

impl SlnBank {
    pub fn new(decay: f64, epsilon: f64, period: u64) -> Result<Self> {
        Ok(SlnBank {
            gan: SlnState::new(decay, epsilon, period)?,
            feature_match: SlnState::new(decay, epsilon, period)?,
            cycle: SlnState::new(decay, epsilon, period)?,
        })
    }
}

/// Graph tensors entering the total objective.
pub struct ObjectiveTerms {
    pub gan: Tensor,
    pub feature_match: Tensor,
    pub cyclic: CyclicTerms,
}

/// Raw and post-normalization values of every term, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub raw_gan: f64,
    pub raw_feature_match: f64,
    pub raw_structure: f64,
    pub raw_l1: f64,
    pub raw_cycle: f64,
    pub effective_gan: f64,
    pub effective_feature_match: f64,
    pub effective_cycle: f64,
    pub scheduled: bool,
    pub total: f64,
}

fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Combines the three channels with scheduled loss normalization:
/// `gan * SLN(L_gan) + fm * SLN(L_fm) + cyc * SLN(structure * L_ss + l1 * L_l1)`.
/// Advances the three states by one iteration and returns the scalar graph
/// tensor plus the logged breakdown.
pub fn total_objective(
    terms: &ObjectiveTerms,
    w: &LossWeights,
    bank: &mut SlnBank,
) -> Result<(Tensor, ObjectiveBreakdown)> {
    w.validate()?;
    let raw_gan = scalar_f64(&terms.gan)?;
    let raw_fm = scalar_f64(&terms.feature_match)?;
    let raw_structure = scalar_f64(&terms.cyclic.structure)?;
    let raw_l1 = scalar_f64(&terms.cyclic.l1)?;
    let raw_cycle = scalar_f64(&terms.cyclic.total)?;

    let gan_step = bank.gan.step(raw_gan)?;
    let fm_step = bank.feature_match.step(raw_fm)?;
    let cyc_step = bank.cycle.step(raw_cycle)?;

    let total = (((&terms.gan * (w.gan * gan_step.factor))?
        + (&terms.feature_match * (w.feature_match * fm_step.factor))?)?
        + (&terms.cyclic.total * (w.cycle * cyc_step.factor))?)?;

    let breakdown = ObjectiveBreakdown {
        raw_gan,
        raw_feature_match: raw_fm,
        raw_structure,
        raw_l1,
        raw_cycle,
        effective_gan: gan_step.effective,
        effective_feature_match: fm_step.effective,
        effective_cycle: cyc_step.effective,
        scheduled: gan_step.scheduled,
        total: scalar_f64(&total)?,
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn dev() -> Device {
        Device::Cpu
    }

    fn filled(shape: (usize, usize, usize, usize), v: f64) -> Tensor {
        Tensor::full(v, shape, &dev()).unwrap()
    }

    fn scalar(v: f64) -> Tensor {
        Tensor::full(v, (), &dev()).unwrap()
    }

    #[test]
    fn weights_simplex_is_enforced() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            gan: 0.5,
            ..LossWeights::default()
        };
        assert!(bad.validate().is_err());
        let bad_inner = LossWeights {
            structure: 0.5,
            ..LossWeights::default()
        };
        assert!(bad_inner.validate().is_err());
    }

    #[test]
    fn gan_loss_analytic_points() {
        // all logits zero: BCE is ln 2 per position
        let zeros = filled((2, 1, 2, 2), 0.0);
        let (d, g) = gan_loss(&zeros, &zeros).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((d.to_scalar::<f64>().unwrap() - ln2).abs() < 1e-12);
        assert!((g.to_scalar::<f64>().unwrap() - ln2).abs() < 1e-12);

        // perfect discriminator limit
        let real = filled((2, 1, 2, 2), 40.0);
        let fake = filled((2, 1, 2, 2), -40.0);
        let (d, _) = gan_loss(&real, &fake).unwrap();
        assert!(d.to_scalar::<f64>().unwrap() < 1e-12);

        // shape mismatch is rejected
        assert!(gan_loss(&zeros, &filled((2, 1, 3, 2), 0.0)).is_err());
    }

    #[test]
    fn feature_match_analytic_points() {
        let a = Tensor::rand(0f64, 1f64, (3, 4, 2, 2), &dev()).unwrap();
        let taps = FeatureTaps {
            layers: vec![a.clone()],
            output: a.clone(),
        };
        let zero = feature_matching_loss(&taps, &taps).unwrap();
        assert_eq!(zero.to_scalar::<f64>().unwrap(), 0.0);

        // one layer, batch means differing by a unit vector -> 1
        let real = Tensor::zeros((2, 4), candle_core::DType::F64, &dev()).unwrap();
        let fake = Tensor::from_vec(
            vec![1.0f64, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            (2, 4),
            &dev(),
        )
        .unwrap();
        let r = FeatureTaps {
            layers: vec![real.clone()],
            output: real,
        };
        let f = FeatureTaps {
            layers: vec![fake.clone()],
            output: fake,
        };
        let one = feature_matching_loss(&r, &f).unwrap();
        assert!((one.to_scalar::<f64>().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ms_ssim_self_and_constant_are_one() {
        let x = Tensor::rand(-1f64, 1f64, (1, 3, 48, 48), &dev()).unwrap();
        let v = ms_ssim(&x, &x, 3).unwrap().to_scalar::<f64>().unwrap();
        assert!((v - 1.0).abs() < 1e-9, "self similarity {v}");

        let a = filled((1, 3, 48, 48), 0.0);
        let v = ms_ssim(&a, &a, 3).unwrap().to_scalar::<f64>().unwrap();
        assert!((v - 1.0).abs() < 1e-12, "constant similarity {v}");
    }

    #[test]
    fn ms_ssim_is_symmetric() {
        let a = Tensor::rand(-1f64, 1f64, (2, 3, 48, 48), &dev()).unwrap();
        let b = Tensor::rand(-1f64, 1f64, (2, 3, 48, 48), &dev()).unwrap();
        let ab = ms_ssim(&a, &b, 3).unwrap().to_scalar::<f64>().unwrap();
        let ba = ms_ssim(&b, &a, 3).unwrap().to_scalar::<f64>().unwrap();
        assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn ms_ssim_rejects_small_images() {
        let a = filled((1, 3, 64, 64), 0.0);
        let err = ms_ssim(&a, &a, 5).unwrap_err();
        assert!(err.to_string().contains("176"), "{err}");
        assert!(ms_ssim(&a, &a, 3).is_ok());
        assert_eq!(max_feasible_scales(64, 64).unwrap(), 3);
        assert_eq!(max_feasible_scales(176, 176).unwrap(), 5);
        assert_eq!(max_feasible_scales(128, 128).unwrap(), 4);
        assert!(max_feasible_scales(8, 8).is_err());
    }

    #[test]
    fn cyclic_loss_analytic_points() {
        let w = LossWeights::default();
        let x = Tensor::rand(-1f64, 1f64, (1, 3, 48, 48), &dev()).unwrap();
        let y = Tensor::rand(-1f64, 1f64, (1, 3, 48, 48), &dev()).unwrap();
        let perfect = cyclic_loss(&x, &x, &y, &y, &w).unwrap();
        assert!(perfect.total.to_scalar::<f64>().unwrap() < 1e-9);

        // constant images offset by 0.1 in both directions: the L1 part is
        // exactly 2 * 0.1
        let x0 = filled((1, 3, 48, 48), 0.0);
        let x1 = filled((1, 3, 48, 48), 0.1);
        let terms = cyclic_loss(&x0, &x1, &x0, &x1, &w).unwrap();
        let l1 = terms.l1.to_scalar::<f64>().unwrap();
        assert!((l1 - 0.2).abs() < 1e-12, "l1 part {l1}");
        let l1_contribution = w.l1 * l1;
        assert!((l1_contribution - w.l1 * 2.0 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn objective_passthrough_off_schedule() {
        let w = LossWeights::default();
        let mut bank = SlnBank::new(0.99, 1e-10, 200).unwrap();
        // consume the scheduled first iteration
        let burn = ObjectiveTerms {
            gan: scalar(1.0),
            feature_match: scalar(1.0),
            cyclic: CyclicTerms {
                total: scalar(1.0),
                structure: scalar(1.0),
                l1: scalar(1.0),
            },
        };
        total_objective(&burn, &w, &mut bank).unwrap();

        let terms = ObjectiveTerms {
            gan: scalar(0.7),
            feature_match: scalar(0.3),
            cyclic: CyclicTerms {
                total: scalar(0.7 * 0.9 + 0.3 * 0.4),
                structure: scalar(0.9),
                l1: scalar(0.4),
            },
        };
        let (total, breakdown) = total_objective(&terms, &w, &mut bank).unwrap();
        assert!(!breakdown.scheduled);
        let expected = w.gan * 0.7 + w.feature_match * 0.3 + w.cycle * (0.7 * 0.9 + 0.3 * 0.4);
        assert!((total.to_scalar::<f64>().unwrap() - expected).abs() < 1e-15);
        assert_eq!(breakdown.effective_gan, 0.7);
    }

    #[test]
    fn objective_zero_terms_give_zero_total() {
        let w = LossWeights::default();
        let mut bank = SlnBank::new(0.99, 1e-10, 200).unwrap();
        let terms = ObjectiveTerms {
            gan: scalar(0.0),
            feature_match: scalar(0.0),
            cyclic: CyclicTerms {
                total: scalar(0.0),
                structure: scalar(0.0),
                l1: scalar(0.0),
            },
        };
        let (total, _) = total_objective(&terms, &w, &mut bank).unwrap();
        assert_eq!(total.to_scalar::<f64>().unwrap(), 0.0);
    }
}
