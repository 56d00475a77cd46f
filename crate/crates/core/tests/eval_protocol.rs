//! Evaluation-protocol integration: the extraction + Hausdorff pipeline on
//! clean and adversarial inputs, plus cycle metrics with stub translators.

mod common;

use candle_core::{Device, Tensor};
use common::dev;
use im2im::eval::{cycle_metrics, evaluate_toy, ToyEvalOptions};
use im2im::toy::{self, DeformationParams, ManifestRecord, ToySpec};
use im2im::{Direction, ImageData};

/// Writes a dataset of hand-picked specs in the generated-dataset layout and
/// returns its manifest records.
fn write_dataset(dir: &std::path::Path, specs: &[ToySpec]) -> Vec<ManifestRecord> {
    std::fs::create_dir_all(dir.join("x")).unwrap();
    std::fs::create_dir_all(dir.join("y")).unwrap();
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let sample = toy::render_sample(spec).unwrap();
            let x = format!("x/{i:05}.png");
            let y = format!("y/{i:05}.png");
            sample.x_image.save(dir.join(&x)).unwrap();
            sample.y_image.save(dir.join(&y)).unwrap();
            let p = spec.params;
            ManifestRecord {
                x,
                y,
                sides: spec.sides,
                h: [p.linear.a, p.linear.b, p.linear.c, p.linear.d],
                d: [p.shift.x, p.shift.y],
                seed: spec.seed,
            }
        })
        .collect()
}

fn identity_translator(t: &Tensor) -> im2im::Result<Tensor> {
    Ok(t.clone())
}

#[test]
fn identity_translation_of_identity_pairs_scores_at_the_floor() {
    // with the identity deformation the domains coincide, so the identity
    // translator is a perfect model
    let dir = tempfile::tempdir().unwrap();
    let specs: Vec<ToySpec> = (3..=7)
        .map(|sides| ToySpec {
            sides,
            params: DeformationParams::identity(),
            image_size: 64,
            seed: 0,
        })
        .collect();
    let records = write_dataset(dir.path(), &specs);
    let summary = evaluate_toy(
        identity_translator,
        dir.path(),
        &records,
        Direction::XToY,
        &ToyEvalOptions::default(),
    )
    .unwrap();
    assert_eq!(summary.samples, 5);
    assert_eq!(summary.rows.len(), 5);
    assert_eq!(summary.failure_rate, 0.0);
    assert!(summary.mean.unwrap() < 0.02, "{:?}", summary.mean);
}

#[test]
fn identity_translation_of_deformed_pairs_scores_badly() {
    let dir = tempfile::tempdir().unwrap();
    let specs: Vec<ToySpec> = (0..8u64)
        .map(|seed| {
            let sides = 3 + (seed % 5) as u32;
            ToySpec {
                sides,
                params: toy::sample_valid_deformation(seed + 100, sides),
                image_size: 64,
                seed,
            }
        })
        .collect();
    let records = write_dataset(dir.path(), &specs);
    let summary = evaluate_toy(
        identity_translator,
        dir.path(),
        &records,
        Direction::XToY,
        &ToyEvalOptions::default(),
    )
    .unwrap();
    // the untranslated polygon is far from the deformed ground truth
    assert!(
        summary.mean.unwrap() > 0.05,
        "unexpectedly good: {:?}",
        summary.mean
    );
}

#[test]
fn blank_outputs_are_counted_as_failures() {
    let dir = tempfile::tempdir().unwrap();
    let specs: Vec<ToySpec> = (3..=6)
        .map(|sides| ToySpec {
            sides,
            params: DeformationParams::identity(),
            image_size: 64,
            seed: 1,
        })
        .collect();
    let records = write_dataset(dir.path(), &specs);
    // translator that paints everything background-colored
    let blank = |t: &Tensor| -> im2im::Result<Tensor> {
        let (n, _, h, w) = t.dims4()?;
        let bg: Vec<f32> = im2im::toy::BG_COLOR
            .iter()
            .map(|&v| f32::from(v) / 127.5 - 1.0)
            .collect();
        let mut data = Vec::with_capacity(n * 3 * h * w);
        for _ in 0..n {
            for c in 0..3 {
                data.extend(std::iter::repeat(bg[c]).take(h * w));
            }
        }
        Ok(Tensor::from_vec(data, (n, 3, h, w), t.device())?)
    };
    let summary = evaluate_toy(
        blank,
        dir.path(),
        &records,
        Direction::XToY,
        &ToyEvalOptions::default(),
    )
    .unwrap();
    assert_eq!(summary.detected, 0);
    assert_eq!(summary.failure_rate, 1.0);
    assert!(summary.mean.is_none());
    assert!(summary.rows.iter().all(|r| r.distance.is_none()));
    // rows are still emitted for every sample, and serialize cleanly
    let rows_path = dir.path().join("rows.jsonl");
    summary.write_rows(&rows_path).unwrap();
    assert_eq!(
        std::fs::read_to_string(&rows_path).unwrap().lines().count(),
        4
    );
}

#[test]
fn triptychs_are_written_when_requested() {
    let dir = tempfile::tempdir().unwrap();
    let specs = vec![ToySpec {
        sides: 5,
        params: DeformationParams::identity(),
        image_size: 64,
        seed: 0,
    }];
    let records = write_dataset(dir.path(), &specs);
    let trip_dir = dir.path().join("trips");
    let opts = ToyEvalOptions {
        triptych_dir: Some(trip_dir.clone()),
        ..Default::default()
    };
    evaluate_toy(identity_translator, dir.path(), &records, Direction::YToX, &opts).unwrap();
    let img = image::open(trip_dir.join("00000.png")).unwrap().to_rgb8();
    assert_eq!((img.width(), img.height()), (192, 64));
}

#[test]
fn cycle_metrics_identity_stub_is_perfect() {
    let imgs: Vec<ImageData> = (0..3u64)
        .map(|seed| {
            let spec = ToySpec {
                sides: 3 + seed as u32,
                params: toy::sample_valid_deformation(seed, 3 + seed as u32),
                image_size: 64,
                seed,
            };
            ImageData::from_rgb(&toy::render_domain_x(&spec).unwrap())
        })
        .collect();
    let metrics = cycle_metrics(
        identity_translator,
        identity_translator,
        &imgs,
        &imgs,
    )
    .unwrap();
    assert!((metrics.x_ms_ssim - 1.0).abs() < 1e-6, "{metrics:?}");
    assert!((metrics.y_ms_ssim - 1.0).abs() < 1e-6);
    assert_eq!(metrics.x_l1, 0.0);
    assert_eq!(metrics.y_l1, 0.0);
}

#[test]
fn cycle_metrics_are_order_invariant() {
    let dev = dev();
    let imgs: Vec<ImageData> = (0..4u64)
        .map(|seed| {
            let spec = ToySpec {
                sides: 3 + seed as u32,
                params: toy::sample_valid_deformation(seed, 3 + seed as u32),
                image_size: 64,
                seed,
            };
            ImageData::from_rgb(&toy::render_domain_y(&spec).unwrap())
        })
        .collect();
    // a deterministic lossy "translator": blur by average pooling then
    // upsample by pixel duplication
    let lossy = move |t: &Tensor| -> im2im::Result<Tensor> {
        let pooled = t.avg_pool2d(2)?;
        Ok(pooled.upsample_nearest2d(t.dims4()?.2, t.dims4()?.3)?)
    };
    let mut reversed = imgs.clone();
    reversed.reverse();
    let a = cycle_metrics(lossy, identity_translator, &imgs, &imgs).unwrap();
    let b = cycle_metrics(lossy, identity_translator, &reversed, &reversed).unwrap();
    assert!((a.x_ms_ssim - b.x_ms_ssim).abs() < 1e-12);
    assert!((a.x_l1 - b.x_l1).abs() < 1e-12);
    let _ = dev;
}

#[test]
fn per_sample_oracle_average_matches_summary() {
    let imgs: Vec<ImageData> = (0..3u64)
        .map(|seed| {
            let spec = ToySpec {
                sides: 4,
                params: toy::sample_valid_deformation(seed + 7, 4),
                image_size: 64,
                seed,
            };
            ImageData::from_rgb(&toy::render_domain_x(&spec).unwrap())
        })
        .collect();
    let lossy = |t: &Tensor| -> im2im::Result<Tensor> {
        let pooled = t.avg_pool2d(2)?;
        Ok(pooled.upsample_nearest2d(t.dims4()?.2, t.dims4()?.3)?)
    };
    let metrics = cycle_metrics(lossy, identity_translator, &imgs, &imgs).unwrap();
    // recompute the same mean per sample by hand
    let mut ssim_sum = 0.0;
    let mut l1_sum = 0.0;
    for img in &imgs {
        let t = ImageData::batch_to_tensor(std::slice::from_ref(img), &Device::Cpu).unwrap();
        let rec = lossy(&t).unwrap();
        ssim_sum += im2im::losses::ms_ssim(&t, &rec, 3)
            .unwrap()
            .to_scalar::<f32>()
            .unwrap() as f64;
        l1_sum += im2im::losses::l1_loss(&t, &rec)
            .unwrap()
            .to_scalar::<f32>()
            .unwrap() as f64;
    }
    assert!((metrics.x_ms_ssim - ssim_sum / 3.0).abs() < 1e-9);
    assert!((metrics.x_l1 - l1_sum / 3.0).abs() < 1e-9);
}
