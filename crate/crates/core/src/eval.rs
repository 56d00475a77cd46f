//! Quantitative evaluation: polygon boundary extraction, directed Hausdorff
//! distances against analytic ground truth, and cycle-reconstruction metrics.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use candle_core::Tensor;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::data::ImageData;
use crate::error::{Error, Result};
use crate::geom::{clip_to_rect, regular_polygon, sample_closed_boundary, Vec2};
use crate::losses;
use crate::toy::{
    DeformationParams, ManifestRecord, CIRCUMRADIUS_FRACTION, LATTICE_DIVISOR,
};

/// Translation direction between the two domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Regular-polygon domain to deformed domain (apply `G`).
    XToY,
    /// Deformed domain to regular domain (apply `F`).
    YToX,
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x2y" | "xy" | "x-to-y" => Ok(Direction::XToY),
            "y2x" | "yx" | "y-to-x" => Ok(Direction::YToX),
            other => Err(Error::Validation(format!(
                "unknown direction {other:?}; expected x2y or y2x"
            ))),
        }
    }
}

/// Points in the unit square, bottom-left origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet(Vec<Vec2>);

impl PointSet {
    pub fn new(points: Vec<Vec2>) -> Result<Self> {
        for p in &points {
            if !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) {
                return Err(Error::Validation(format!(
                    "point ({}, {}) outside the unit square",
                    p.x, p.y
                )));
            }
        }
        Ok(PointSet(points))
    }

    pub fn points(&self) -> &[Vec2] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Directed Hausdorff distance: `max_{g in gen} min_{r in ref} |r - g|`.
///
/// The inner scan short-circuits once the running minimum falls below the
/// current maximum (that point can no longer raise the result); the test
/// oracle is the plain double loop without this pruning.
pub fn hausdorff(reference: &PointSet, generated: &PointSet) -> Result<f64> {
    if reference.is_empty() || generated.is_empty() {
        return Err(Error::Validation(
            "hausdorff distance of an empty point set".into(),
        ));
    }
    let mut max_sq = 0.0f64;
    for g in generated.points() {
        let mut min_sq = f64::INFINITY;
        for r in reference.points() {
            let d = r.sub(*g);
            let sq = d.dot(d);
            if sq < min_sq {
                min_sq = sq;
                if min_sq <= max_sq {
                    break;
                }
            }
        }
        if min_sq > max_sq {
            max_sq = min_sq;
        }
    }
    Ok(max_sq.sqrt())
}

/// Symmetric Hausdorff distance; not used by the evaluation protocol but
/// available for diagnostics.
pub fn hausdorff_symmetric(a: &PointSet, b: &PointSet) -> Result<f64> {
    Ok(hausdorff(a, b)?.max(hausdorff(b, a)?))
}

/// Default number of boundary samples per point set.
pub const DEFAULT_BOUNDARY_POINTS: usize = 500;

/// Pixel-mask utilities for the controlled palette of the synthetic domains.
pub mod mask {
    use super::*;
    use crate::toy::{BG_COLOR, DOT_COLOR, POLYGON_COLOR};

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Label {
        Background,
        Polygon,
        Dot,
    }

    fn dist2(a: [u8; 3], b: &image::Rgb<u8>) -> i64 {
        let mut acc = 0i64;
        for c in 0..3 {
            let d = i64::from(a[c]) - i64::from(b.0[c]);
            acc += d * d;
        }
        acc
    }

    /// Nearest-palette-color classification of one pixel.
    pub fn classify(px: &image::Rgb<u8>) -> Label {
        let bg = dist2(BG_COLOR, px);
        let poly = dist2(POLYGON_COLOR, px);
        let dot = dist2(DOT_COLOR, px);
        if poly <= bg && poly <= dot {
            Label::Polygon
        } else if dot <= bg {
            Label::Dot
        } else {
            Label::Background
        }
    }

    /// Row-major boolean mask of polygon-classified pixels.
    pub fn polygon_mask(img: &RgbImage) -> Vec<bool> {
        img.pixels().map(|p| classify(p) == Label::Polygon).collect()
    }

    /// Row-major boolean mask of dot-classified pixels.
    pub fn dot_mask(img: &RgbImage) -> Vec<bool> {
        img.pixels().map(|p| classify(p) == Label::Dot).collect()
    }

    /// Centroid (pixel-center coordinates) of all set pixels.
    pub fn mask_centroid(mask: &[bool]) -> Option<(f64, f64)> {
        let n = (mask.len() as f64).sqrt() as usize;
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut count = 0.0;
        for y in 0..n {
            for x in 0..n {
                if mask[y * n + x] {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    count += 1.0;
                }
            }
        }
        (count > 0.0).then(|| (sx / count, sy / count))
    }

    /// 8-connected components of a mask, as pixel lists.
    pub fn components(mask: &[bool], w: usize, h: usize) -> Vec<Vec<(usize, usize)>> {
        let mut seen = vec![false; mask.len()];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for sy in 0..h {
            for sx in 0..w {
                if !mask[sy * w + sx] || seen[sy * w + sx] {
                    continue;
                }
                let mut comp = Vec::new();
                seen[sy * w + sx] = true;
                stack.push((sx, sy));
                while let Some((x, y)) = stack.pop() {
                    comp.push((x, y));
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if dx == 0 && dy == 0 {
                                continue;
                            }
                            let nx = x as i64 + dx;
                            let ny = y as i64 + dy;
                            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                                continue;
                            }
                            let idx = ny as usize * w + nx as usize;
                            if mask[idx] && !seen[idx] {
                                seen[idx] = true;
                                stack.push((nx as usize, ny as usize));
                            }
                        }
                    }
                }
                out.push(comp);
            }
        }
        out
    }

    /// Centroids of unclipped, unoccluded lattice dots: components close to
    /// the median dot area, away from the border and the polygon.
    pub fn full_dot_centroids(img: &RgbImage) -> Vec<(f64, f64)> {
        let w = img.width() as usize;
        let h = img.height() as usize;
        let dots = dot_mask(img);
        let poly = polygon_mask(img);
        let comps = components(&dots, w, h);
        if comps.is_empty() {
            return Vec::new();
        }
        let mut areas: Vec<usize> = comps.iter().map(|c| c.len()).collect();
        areas.sort_unstable();
        let median = areas[areas.len() / 2] as f64;
        let near_polygon = |c: &[(usize, usize)]| {
            c.iter().any(|&(x, y)| {
                (-1i64..=1).any(|dy| {
                    (-1i64..=1).any(|dx| {
                        let nx = x as i64 + dx;
                        let ny = y as i64 + dy;
                        nx >= 0
                            && ny >= 0
                            && nx < w as i64
                            && ny < h as i64
                            && poly[ny as usize * w + nx as usize]
                    })
                })
            })
        };
        let on_border =
            |c: &[(usize, usize)]| c.iter().any(|&(x, y)| x == 0 || y == 0 || x == w - 1 || y == h - 1);
        comps
            .iter()
            .filter(|c| {
                let a = c.len() as f64;
                a >= 0.75 * median && a <= 1.5 * median && !near_polygon(c) && !on_border(c)
            })
            .map(|c| {
                let sx: f64 = c.iter().map(|&(x, _)| x as f64 + 0.5).sum();
                let sy: f64 = c.iter().map(|&(_, y)| y as f64 + 0.5).sum();
                (sx / c.len() as f64, sy / c.len() as f64)
            })
            .collect()
    }

    /// Moore-neighbor boundary trace of a pixel set, clockwise, returning
    /// ordered boundary pixel coordinates.
    pub fn trace_boundary(pixels: &[(usize, usize)], w: usize, h: usize) -> Vec<(usize, usize)> {
        if pixels.is_empty() {
            return Vec::new();
        }
        let mut member = vec![false; w * h];
        for &(x, y) in pixels {
            member[y * w + x] = true;
        }
        // topmost, then leftmost pixel; its west neighbor is outside
        let start = *pixels
            .iter()
            .min_by_key(|&&(x, y)| (y, x))
            .expect("nonempty");
        // neighbor offsets clockwise on screen, starting east
        const DIRS: [(i64, i64); 8] = [
            (1, 0),
            (1, 1),
            (0, 1),
            (-1, 1),
            (-1, 0),
            (-1, -1),
            (0, -1),
            (1, -1),
        ];
        let inside = |x: i64, y: i64| -> bool {
            x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && member[y as usize * w + x as usize]
        };
        let dir_index = |from: (i64, i64), to: (i64, i64)| -> usize {
            let d = (to.0 - from.0, to.1 - from.1);
            DIRS.iter().position(|&v| v == d).expect("adjacent")
        };

        let p0 = (start.0 as i64, start.1 as i64);
        let b0 = (p0.0 - 1, p0.1);
        let mut contour = vec![start];
        let mut p = p0;
        let mut b = b0;
        let limit = 4 * w * h + 8;
        for _ in 0..limit {
            let back_idx = dir_index(p, b);
            let mut found = None;
            for k in 1..=8 {
                let d = (back_idx + k) % 8;
                let q = (p.0 + DIRS[d].0, p.1 + DIRS[d].1);
                if inside(q.0, q.1) {
                    found = Some((q, (back_idx + k - 1) % 8));
                    break;
                }
            }
            let Some((q, prev_dir)) = found else {
                return contour; // isolated pixel
            };
            b = (p.0 + DIRS[prev_dir].0, p.1 + DIRS[prev_dir].1);
            p = q;
            if p == p0 && b == b0 {
                break;
            }
            contour.push((p.0 as usize, p.1 as usize));
        }
        contour
    }
}

/// Minimum pixel area for a blob to count as a detected polygon.
fn min_polygon_area(w: u32, h: u32) -> usize {
    ((w as usize * h as usize) / 256).max(16)
}

/// Extracts the boundary of the largest polygon-colored region as points in
/// the unit square (bottom-left origin), sampled uniformly by arc length.
/// Returns `None` when no region passes the detection threshold.
pub fn extract_polygon_boundary(img: &RgbImage, n_points: usize) -> Option<PointSet> {
    let w = img.width() as usize;
    let h = img.height() as usize;
    let m = mask::polygon_mask(img);
    let comps = mask::components(&m, w, h);
    let largest = comps.into_iter().max_by_key(|c| c.len())?;
    if largest.len() < min_polygon_area(img.width(), img.height()) {
        return None;
    }
    let contour = mask::trace_boundary(&largest, w, h);
    let poly: Vec<Vec2> = contour
        .iter()
        .map(|&(x, y)| Vec2::new(x as f64 + 0.5, y as f64 + 0.5))
        .collect();
    let sampled = sample_closed_boundary(&poly, n_points);
    let unit: Vec<Vec2> = sampled
        .iter()
        .map(|p| Vec2::new(p.x / w as f64, 1.0 - p.y / h as f64))
        .collect();
    PointSet::new(unit).ok()
}

/// Analytic ground-truth boundary for one sample, in unit coordinates with a
/// bottom-left origin. `Direction::XToY` yields the deformed polygon (what a
/// translated X image should contain); `Direction::YToX` the regular one.
/// Returns `None` when the polygon is entirely outside the frame.
pub fn analytic_boundary(
    sides: u32,
    params: &DeformationParams,
    target: Direction,
    n_points: usize,
) -> Option<PointSet> {
    let center = Vec2::new(0.5, 0.5);
    let verts: Vec<Vec2> = match target {
        Direction::YToX => regular_polygon(sides, CIRCUMRADIUS_FRACTION, center),
        Direction::XToY => regular_polygon(sides, CIRCUMRADIUS_FRACTION, Vec2::new(0.0, 0.0))
            .into_iter()
            .map(|v| {
                center
                    .add(params.linear.apply(v))
                    .add(params.shift.scale(1.0 / LATTICE_DIVISOR))
            })
            .collect(),
    };
    let clipped = clip_to_rect(&verts, 0.0, 0.0, 1.0, 1.0);
    if clipped.len() < 3 {
        return None;
    }
    let sampled = sample_closed_boundary(&clipped, n_points);
    let unit: Vec<Vec2> = sampled.iter().map(|p| Vec2::new(p.x, 1.0 - p.y)).collect();
    PointSet::new(unit).ok()
}

/// Per-sample evaluation row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyEvalRow {
    pub index: usize,
    pub input: String,
    /// Directed Hausdorff distance, or `None` when no polygon was detected.
    pub distance: Option<f64>,
}

/// Aggregate over an evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyEvalSummary {
    pub direction: Direction,
    pub samples: usize,
    pub detected: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub failure_rate: f64,
    pub rows: Vec<ToyEvalRow>,
}

impl ToyEvalSummary {
    fn from_rows(direction: Direction, rows: Vec<ToyEvalRow>) -> Self {
        let dists: Vec<f64> = rows.iter().filter_map(|r| r.distance).collect();
        let detected = dists.len();
        let samples = rows.len();
        let mean = (!dists.is_empty()).then(|| dists.iter().sum::<f64>() / dists.len() as f64);
        let std = mean.map(|m| {
            (dists.iter().map(|d| (d - m).powi(2)).sum::<f64>() / dists.len() as f64).sqrt()
        });
        let failure_rate = if samples == 0 {
            0.0
        } else {
            (samples - detected) as f64 / samples as f64
        };
        ToyEvalSummary {
            direction,
            samples,
            detected,
            mean,
            std,
            failure_rate,
            rows,
        }
    }

    /// Human-readable table: one line per sample plus the aggregate.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str("index  input                 distance\n");
        for r in &self.rows {
            match r.distance {
                Some(d) => out.push_str(&format!("{:<6} {:<21} {d:.4}\n", r.index, r.input)),
                None => out.push_str(&format!("{:<6} {:<21} no polygon\n", r.index, r.input)),
            }
        }
        out.push_str(&format!(
            "samples {}  detected {}  failure rate {:.3}  mean {}  std {}\n",
            self.samples,
            self.detected,
            self.failure_rate,
            self.mean.map_or("-".into(), |m| format!("{m:.4}")),
            self.std.map_or("-".into(), |s| format!("{s:.4}")),
        ));
        out
    }

    /// Writes the per-sample rows as line-delimited records.
    pub fn write_rows(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for r in &self.rows {
            let line =
                serde_json::to_string(r).map_err(|e| Error::Data(format!("row encode: {e}")))?;
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Options for [`evaluate_toy`].
#[derive(Debug, Clone)]
pub struct ToyEvalOptions {
    pub n_points: usize,
    /// Cap on evaluated samples (all when `None`).
    pub max_samples: Option<usize>,
    /// Write (input | output | ground truth) triptych images here.
    pub triptych_dir: Option<std::path::PathBuf>,
    pub batch_size: usize,
}

impl Default for ToyEvalOptions {
    fn default() -> Self {
        ToyEvalOptions {
            n_points: DEFAULT_BOUNDARY_POINTS,
            max_samples: None,
            triptych_dir: None,
            batch_size: 8,
        }
    }
}

/// Evaluates a translator on a generated dataset: translates each test image,
/// extracts the polygon boundary, and scores it against the analytic
/// ground-truth boundary from the manifest parameters.
pub fn evaluate_toy<T>(
    translate: T,
    dataset_dir: &Path,
    records: &[ManifestRecord],
    direction: Direction,
    opts: &ToyEvalOptions,
) -> Result<ToyEvalSummary>
where
    T: Fn(&Tensor) -> Result<Tensor>,
{
    let take = opts.max_samples.unwrap_or(records.len()).min(records.len());
    let mut rows = Vec::with_capacity(take);
    if let Some(dir) = &opts.triptych_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for chunk_start in (0..take).step_by(opts.batch_size.max(1)) {
        let chunk_end = (chunk_start + opts.batch_size.max(1)).min(take);
        let chunk = &records[chunk_start..chunk_end];
        let mut inputs = Vec::with_capacity(chunk.len());
        for rec in chunk {
            let name = match direction {
                Direction::XToY => &rec.x,
                Direction::YToX => &rec.y,
            };
            let path = dataset_dir.join(name);
            inputs.push(ImageData::load(&path)?);
        }
        let batch = ImageData::batch_to_tensor(&inputs, &candle_core::Device::Cpu)?;
        let translated = translate(&batch)?;
        for (k, rec) in chunk.iter().enumerate() {
            let out_img = ImageData::from_tensor(&translated.narrow(0, k, 1)?)?.to_rgb();
            let extracted = extract_polygon_boundary(&out_img, opts.n_points);
            let truth = analytic_boundary(rec.sides, &rec.params(), direction, opts.n_points);
            let distance = match (&extracted, &truth) {
                (Some(gen), Some(reference)) => Some(hausdorff(reference, gen)?),
                _ => None,
            };
            let index = chunk_start + k;
            let input_name = match direction {
                Direction::XToY => rec.x.clone(),
                Direction::YToX => rec.y.clone(),
            };
            if let Some(dir) = &opts.triptych_dir {
                let input_img = inputs[k].to_rgb();
                let truth_img = match direction {
                    Direction::XToY => crate::toy::render_domain_y(&rec.spec(out_img.width()))?,
                    Direction::YToX => crate::toy::render_domain_x(&rec.spec(out_img.width()))?,
                };
                let trip = triptych(&input_img, &out_img, &truth_img);
                let path = dir.join(format!("{index:05}.png"));
                trip.save(&path).map_err(|e| Error::Image {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            }
            rows.push(ToyEvalRow {
                index,
                input: input_name,
                distance,
            });
        }
    }
    Ok(ToyEvalSummary::from_rows(direction, rows))
}

fn triptych(a: &RgbImage, b: &RgbImage, c: &RgbImage) -> RgbImage {
    let h = a.height().max(b.height()).max(c.height());
    let w = a.width() + b.width() + c.width();
    let mut out = RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]));
    let mut x0 = 0;
    for img in [a, b, c] {
        for (x, y, px) in img.enumerate_pixels() {
            out.put_pixel(x0 + x, y, *px);
        }
        x0 += img.width();
    }
    out
}

/// Mean cycle-reconstruction quality over both domains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleMetrics {
    pub x_ms_ssim: f64,
    pub x_l1: f64,
    pub y_ms_ssim: f64,
    pub y_l1: f64,
}

/// Computes mean MS-SSIM and mean absolute error between inputs and their
/// cycle reconstructions `F(G(x))` / `G(F(y))`.
pub fn cycle_metrics<Fwd, Bwd>(
    forward: Fwd,
    backward: Bwd,
    xs: &[ImageData],
    ys: &[ImageData],
) -> Result<CycleMetrics>
where
    Fwd: Fn(&Tensor) -> Result<Tensor>,
    Bwd: Fn(&Tensor) -> Result<Tensor>,
{
    let dev = candle_core::Device::Cpu;
    let eval_side = |imgs: &[ImageData],
                     f: &dyn Fn(&Tensor) -> Result<Tensor>,
                     g: &dyn Fn(&Tensor) -> Result<Tensor>|
     -> Result<(f64, f64)> {
        let mut ssim_sum = 0.0;
        let mut l1_sum = 0.0;
        for img in imgs {
            let t = ImageData::batch_to_tensor(std::slice::from_ref(img), &dev)?;
            let rec = g(&f(&t)?)?;
            let scales = losses::max_feasible_scales(img.height, img.width)?;
            ssim_sum += losses::ms_ssim(&t, &rec, scales)?.to_scalar::<f32>()? as f64;
            l1_sum += losses::l1_loss(&t, &rec)?.to_scalar::<f32>()? as f64;
        }
        let n = imgs.len().max(1) as f64;
        Ok((ssim_sum / n, l1_sum / n))
    };
    let (x_ms_ssim, x_l1) = eval_side(xs, &forward, &backward)?;
    let (y_ms_ssim, y_l1) = eval_side(ys, &backward, &forward)?;
    Ok(CycleMetrics {
        x_ms_ssim,
        x_l1,
        y_ms_ssim,
        y_l1,
    })
}
