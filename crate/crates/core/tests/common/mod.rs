//! Shared test support: independent brute-force oracles for every loss, a
//! finite-difference harness, and small fixtures.
//!
//! The oracles here are deliberately written as plain f64 loops with no
//! tensor library involved, so they share no code with the implementations
//! they check.

#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use im2im::util::rng_for;

pub fn dev() -> Device {
    Device::Cpu
}

/// Dense NCHW f64 buffer mirroring a tensor.
#[derive(Clone)]
pub struct Grid4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Grid4 {
    pub fn from_tensor(t: &Tensor) -> Grid4 {
        let (n, c, h, w) = t.dims4().unwrap();
        let data = t
            .to_dtype(DType::F64)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        Grid4 { n, c, h, w, data }
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }
}

/// Uniform random tensor with a deterministic stream.
pub fn seeded_uniform(
    shape: (usize, usize, usize, usize),
    lo: f64,
    hi: f64,
    seed: u64,
    label: &str,
) -> Tensor {
    let (n, c, h, w) = shape;
    let mut rng: ChaCha8Rng = rng_for(seed, label, 0);
    let data: Vec<f64> = (0..n * c * h * w)
        .map(|_| rng.random_range(lo..hi))
        .collect();
    Tensor::from_vec(data, shape, &dev()).unwrap()
}

// ---------------------------------------------------------------------------
// GAN loss oracle: per-position binary cross-entropy from first principles.
// ---------------------------------------------------------------------------

fn softplus64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// (d_loss, g_loss) by looping over every logit.
pub fn oracle_gan_loss(real: &[f64], fake: &[f64]) -> (f64, f64) {
    assert_eq!(real.len(), fake.len());
    let mut d = 0.0;
    for &r in real {
        d += softplus64(-r); // -log sigmoid(r)
    }
    for &f in fake {
        d += softplus64(f); // -log (1 - sigmoid(f))
    }
    let d = d / (real.len() + fake.len()) as f64;
    let g = fake.iter().map(|&f| softplus64(-f)).sum::<f64>() / fake.len() as f64;
    (d, g)
}

// ---------------------------------------------------------------------------
// Feature matching oracle.
// ---------------------------------------------------------------------------

/// Mean over layers of || mean_batch(real) - mean_batch(fake) ||^2, all sums
/// written out longhand. Each layer is (batch, flattened features).
pub fn oracle_feature_matching(real: &[Vec<Vec<f64>>], fake: &[Vec<Vec<f64>>]) -> f64 {
    assert_eq!(real.len(), fake.len());
    let mut total = 0.0;
    for (r_layer, f_layer) in real.iter().zip(fake) {
        let features = r_layer[0].len();
        let mut acc = 0.0;
        for j in 0..features {
            let mut r_mean = 0.0;
            for row in r_layer {
                r_mean += row[j];
            }
            r_mean /= r_layer.len() as f64;
            let mut f_mean = 0.0;
            for row in f_layer {
                f_mean += row[j];
            }
            f_mean /= f_layer.len() as f64;
            acc += (r_mean - f_mean) * (r_mean - f_mean);
        }
        total += acc;
    }
    total / real.len() as f64
}

// ---------------------------------------------------------------------------
// MS-SSIM oracle: direct per-definition evaluation with nested loops.
// ---------------------------------------------------------------------------

const ORACLE_KERNEL: usize = 11;
const ORACLE_SIGMA: f64 = 1.5;
const ORACLE_K1: f64 = 0.01;
const ORACLE_K2: f64 = 0.03;
const ORACLE_RANGE: f64 = 2.0;
const ORACLE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn oracle_gaussian() -> Vec<f64> {
    let k = ORACLE_KERNEL;
    let c = (k as f64 - 1.0) / 2.0;
    let mut vals = vec![0.0; k * k];
    let mut sum = 0.0;
    for y in 0..k {
        for x in 0..k {
            let dx = x as f64 - c;
            let dy = y as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * ORACLE_SIGMA * ORACLE_SIGMA)).exp();
            vals[y * k + x] = v;
            sum += v;
        }
    }
    for v in &mut vals {
        *v /= sum;
    }
    vals
}

/// One image plane (h x w), f64.
type Plane = Vec<f64>;

fn valid_conv(plane: &Plane, h: usize, w: usize, kernel: &[f64]) -> (Plane, usize, usize) {
    let k = ORACLE_KERNEL;
    let oh = h - k + 1;
    let ow = w - k + 1;
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for ky in 0..k {
                for kx in 0..k {
                    acc += kernel[ky * k + kx] * plane[(oy + ky) * w + (ox + kx)];
                }
            }
            out[oy * ow + ox] = acc;
        }
    }
    (out, oh, ow)
}

fn halve(plane: &Plane, h: usize, w: usize) -> (Plane, usize, usize) {
    let oh = h / 2;
    let ow = w / 2;
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (plane[2 * y * w + 2 * x]
                + plane[2 * y * w + 2 * x + 1]
                + plane[(2 * y + 1) * w + 2 * x]
                + plane[(2 * y + 1) * w + 2 * x + 1])
                / 4.0;
        }
    }
    (out, oh, ow)
}

/// Per-definition MS-SSIM: contrast-structure statistics at every scale,
/// luminance at the coarsest, per-image exponents-and-product, batch mean.
pub fn oracle_ms_ssim(a: &Grid4, b: &Grid4, scales: usize) -> f64 {
    assert!(scales >= 1 && scales <= 5);
    let kernel = oracle_gaussian();
    let wsum: f64 = ORACLE_WEIGHTS[..scales].iter().sum();
    let weights: Vec<f64> = ORACLE_WEIGHTS[..scales].iter().map(|v| v / wsum).collect();
    let c1 = (ORACLE_K1 * ORACLE_RANGE) * (ORACLE_K1 * ORACLE_RANGE);
    let c2 = (ORACLE_K2 * ORACLE_RANGE) * (ORACLE_K2 * ORACLE_RANGE);

    let mut batch_sum = 0.0;
    for n in 0..a.n {
        // pull out the image's channel planes
        let mut planes_a: Vec<Plane> = Vec::new();
        let mut planes_b: Vec<Plane> = Vec::new();
        for c in 0..a.c {
            let mut pa = vec![0.0; a.h * a.w];
            let mut pb = vec![0.0; a.h * a.w];
            for y in 0..a.h {
                for x in 0..a.w {
                    pa[y * a.w + x] = a.at(n, c, y, x);
                    pb[y * a.w + x] = b.at(n, c, y, x);
                }
            }
            planes_a.push(pa);
            planes_b.push(pb);
        }
        let (mut h, mut w) = (a.h, a.w);

        let mut product = 1.0;
        for (scale, weight) in weights.iter().enumerate() {
            // channel-mean of the spatially-averaged statistic
            let mut stat_sum = 0.0;
            let mut stat_count = 0usize;
            for c in 0..a.c {
                let (mu_a, oh, ow) = valid_conv(&planes_a[c], h, w, &kernel);
                let (mu_b, _, _) = valid_conv(&planes_b[c], h, w, &kernel);
                let sq_a: Plane = planes_a[c].iter().map(|v| v * v).collect();
                let sq_b: Plane = planes_b[c].iter().map(|v| v * v).collect();
                let prod: Plane = planes_a[c]
                    .iter()
                    .zip(&planes_b[c])
                    .map(|(x, y)| x * y)
                    .collect();
                let (m_a2, _, _) = valid_conv(&sq_a, h, w, &kernel);
                let (m_b2, _, _) = valid_conv(&sq_b, h, w, &kernel);
                let (m_ab, _, _) = valid_conv(&prod, h, w, &kernel);
                for i in 0..oh * ow {
                    let var_a = m_a2[i] - mu_a[i] * mu_a[i];
                    let var_b = m_b2[i] - mu_b[i] * mu_b[i];
                    let cov = m_ab[i] - mu_a[i] * mu_b[i];
                    let cs = (2.0 * cov + c2) / (var_a + var_b + c2);
                    let value = if scale + 1 == scales {
                        let l = (2.0 * mu_a[i] * mu_b[i] + c1)
                            / (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1);
                        l * cs
                    } else {
                        cs
                    };
                    stat_sum += value;
                    stat_count += 1;
                }
            }
            let mean_stat = (stat_sum / stat_count as f64).max(1e-8);
            product *= mean_stat.powf(*weight);
            if scale + 1 < scales {
                for c in 0..a.c {
                    let (pa, _, _) = halve(&planes_a[c], h, w);
                    let (pb, nh, nw) = halve(&planes_b[c], h, w);
                    planes_a[c] = pa;
                    planes_b[c] = pb;
                    if c == a.c - 1 {
                        h = nh;
                        w = nw;
                    }
                }
            }
        }
        batch_sum += product;
    }
    batch_sum / a.n as f64
}

/// Cyclic loss oracle on top of the MS-SSIM and plain-mean L1 oracles.
pub fn oracle_cyclic(
    x: &Grid4,
    x_rec: &Grid4,
    y: &Grid4,
    y_rec: &Grid4,
    structure_w: f64,
    l1_w: f64,
    scales: usize,
) -> (f64, f64, f64) {
    let ss = (1.0 - oracle_ms_ssim(x_rec, x, scales)) + (1.0 - oracle_ms_ssim(y_rec, y, scales));
    let mean_abs = |p: &Grid4, q: &Grid4| {
        p.data
            .iter()
            .zip(&q.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / p.data.len() as f64
    };
    let l1 = mean_abs(x_rec, x) + mean_abs(y_rec, y);
    (structure_w * ss + l1_w * l1, ss, l1)
}

// ---------------------------------------------------------------------------
// Directed Hausdorff oracle: the naive double loop, no pruning.
// ---------------------------------------------------------------------------

pub fn oracle_hausdorff(reference: &[(f64, f64)], generated: &[(f64, f64)]) -> f64 {
    let mut max_min = 0.0f64;
    for g in generated {
        let mut min_d = f64::INFINITY;
        for r in reference {
            let d = ((r.0 - g.0).powi(2) + (r.1 - g.1).powi(2)).sqrt();
            if d < min_d {
                min_d = d;
            }
        }
        if min_d > max_min {
            max_min = min_d;
        }
    }
    max_min
}

// ---------------------------------------------------------------------------
// Central finite differences.
// ---------------------------------------------------------------------------

/// Central-difference gradient estimates at the given flat coordinates.
pub fn finite_diff<F>(f: F, x: &Tensor, coords: &[usize], step: f64) -> Vec<f64>
where
    F: Fn(&Tensor) -> f64,
{
    let base: Vec<f64> = x
        .to_dtype(DType::F64)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1::<f64>()
        .unwrap();
    let shape = x.dims().to_vec();
    coords
        .iter()
        .map(|&i| {
            let mut plus = base.clone();
            plus[i] += step;
            let mut minus = base.clone();
            minus[i] -= step;
            let tp = Tensor::from_vec(plus, shape.clone(), x.device()).unwrap();
            let tm = Tensor::from_vec(minus, shape.clone(), x.device()).unwrap();
            (f(&tp) - f(&tm)) / (2.0 * step)
        })
        .collect()
}

/// Relative-error comparison of analytic vs finite-difference gradients at
/// sampled coordinates, skipping coordinates where the reference is too
/// small for a meaningful ratio. Returns the number actually compared.
pub fn assert_grads_close(
    analytic: &[f64],
    numeric: &[f64],
    coords: &[usize],
    rel_tol: f64,
    floor: f64,
) -> usize {
    let mut checked = 0;
    for (k, &i) in coords.iter().enumerate() {
        let a = analytic[i];
        let n = numeric[k];
        if n.abs() < floor && a.abs() < floor {
            continue;
        }
        let rel = (a - n).abs() / n.abs().max(floor);
        assert!(
            rel < rel_tol,
            "grad mismatch at {i}: analytic {a}, numeric {n}, rel {rel}"
        );
        checked += 1;
    }
    checked
}

// ---------------------------------------------------------------------------
// Training fixtures.
// ---------------------------------------------------------------------------

/// Generates a small on-disk dataset pair and a config sized for CPU tests.
pub fn tiny_toy_config(
    dir: &std::path::Path,
    n_samples: u64,
    image_size: u32,
    batch: usize,
) -> im2im::ExperimentConfig {
    im2im::toy::generate_dataset(n_samples, 11, image_size, dir).unwrap();
    let mut cfg = im2im::ExperimentConfig::default();
    cfg.data.x = dir.join("x");
    cfg.data.y = dir.join("y");
    cfg.image_size = image_size as usize;
    cfg.augment_x.crop_size = image_size as usize;
    cfg.augment_x.max_rotation_deg = 0.0;
    cfg.augment_y.crop_size = image_size as usize;
    cfg.generator.base_filters = 2;
    cfg.generator.residual_blocks_per_scale = 1;
    cfg.discriminator.base_filters = 2;
    cfg.discriminator.dilation_block_depth = 2;
    cfg.batch_size = batch;
    cfg.lr_decay = im2im::LrDecay {
        start_iter: 1_000_000,
        end_iter: 2_000_000,
    };
    cfg.checkpoint_every = 1_000_000;
    cfg.eval_every = 1_000_000;
    cfg.validate().unwrap();
    cfg
}
