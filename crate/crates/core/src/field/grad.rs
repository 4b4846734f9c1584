//! Reverse-mode gradients of the rendering loss.
//!
//! A supervision job is a weighted bundle of rays whose composited colors
//! blend into one predicted pixel. The batch loss is the mean of the
//! per-channel deviations over all jobs; gradients flow through the
//! compositing weights, the activations and the trilinear stencils back to
//! the raw grids.
//!
//! Batches are split into a fixed number of contiguous chunks. Each chunk
//! accumulates serially into its own buffer and buffers merge in chunk
//! order, so results are bit-identical whether chunks run in parallel or
//! not.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image_buf::ImageBuffer;
use crate::scene::{CameraView, Ray};

use super::{sigmoid, softplus_with_deriv, VoxelField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy)]
pub struct RenderCfg {
    pub samples_per_ray: usize,
    pub background: [f64; 3],
    /// Transmittance early-out; `0` keeps the forward pass exact, which the
    /// finite-difference checks rely on.
    pub early_stop: f64,
    pub loss: LossMode,
}

impl Default for RenderCfg {
    fn default() -> Self {
        RenderCfg { samples_per_ray: 128, background: [0.0; 3], early_stop: 0.0, loss: LossMode::L2 }
    }
}

/// One supervised pixel: a view and integer pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelTask {
    pub view: u32,
    pub x: u32,
    pub y: u32,
}

/// Dense gradients over the raw grids.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    pub density: Vec<f64>,
    pub color: Vec<f64>,
}

impl GradBuffer {
    pub fn zeros(voxels: usize) -> Self {
        GradBuffer { density: vec![0.0; voxels], color: vec![0.0; voxels * 3] }
    }

    pub fn clear(&mut self) {
        self.density.fill(0.0);
        self.color.fill(0.0);
    }

    pub fn merge(&mut self, other: &GradBuffer) {
        for (a, b) in self.density.iter_mut().zip(&other.density) {
            *a += b;
        }
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            *a += b;
        }
    }
}

/// Reusable per-chunk accumulation buffers for repeated batch calls; saves
/// re-mapping tens of megabytes every optimizer step.
pub struct GradScratch {
    buffers: Vec<GradBuffer>,
}

impl GradScratch {
    pub fn new(voxels: usize, chunks: usize) -> Self {
        GradScratch { buffers: (0..chunks.max(1)).map(|_| GradBuffer::zeros(voxels)).collect() }
    }

    /// The merged gradients of the last batch.
    pub fn grads(&self) -> &GradBuffer {
        &self.buffers[0]
    }
}

/// Result of one supervised batch.
#[derive(Debug)]
pub struct BatchResult {
    pub grads: GradBuffer,
    /// Per-job mean-channel loss, aligned with the job order.
    pub job_losses: Vec<f64>,
    /// Mean of `job_losses`; the quantity the gradients differentiate.
    pub mean_loss: f64,
    pub rays: u64,
}

struct SampleRecord {
    base: [usize; 3],
    frac: [f64; 3],
    /// d softplus / d raw at the interpolated density.
    sig_deriv: f64,
    color: [f64; 3],
    color_deriv: [f64; 3],
    alpha: f64,
    /// Transmittance before this sample.
    trans: f64,
    delta: f64,
}

/// Composites one ray with midpoint sampling, recording everything the
/// backward pass needs. Returns the color (with background) and the final
/// transmittance.
fn forward_ray(
    field: &VoxelField,
    ray: &Ray,
    cfg: &RenderCfg,
    records: &mut Vec<SampleRecord>,
) -> ([f64; 3], f64) {
    records.clear();
    let k = cfg.samples_per_ray;
    let delta = (ray.far - ray.near) / k as f64;
    let mut color = [0.0f64; 3];
    let mut trans = 1.0f64;
    for i in 0..k {
        let t = ray.near + (i as f64 + 0.5) * delta;
        let p = ray.origin + ray.direction * t;
        let Some(cell) = field.cell(&p) else { continue };
        let (draw, craw) = field.interpolate_raw(&cell);
        let (sigma, sig_deriv) = softplus_with_deriv(draw);
        let c = [sigmoid(craw[0]), sigmoid(craw[1]), sigmoid(craw[2])];
        let alpha = 1.0 - (-sigma * delta).exp();
        let w = trans * alpha;
        color[0] += w * c[0];
        color[1] += w * c[1];
        color[2] += w * c[2];
        records.push(SampleRecord {
            base: cell.base,
            frac: cell.frac,
            sig_deriv,
            color: c,
            color_deriv: [c[0] * (1.0 - c[0]), c[1] * (1.0 - c[1]), c[2] * (1.0 - c[2])],
            alpha,
            trans,
            delta,
        });
        trans *= 1.0 - alpha;
        if trans < cfg.early_stop {
            break;
        }
    }
    for ch in 0..3 {
        color[ch] += trans * cfg.background[ch];
    }
    (color, trans)
}

/// Distributes `dL/dC` for one ray back to the raw grids.
///
/// With `w_k = T_k alpha_k` and suffix `S_k = sum_{j>k} w_j c_j + T_K bg`:
/// `dC/dc_k = w_k` and `dC/dsigma_k = delta_k (T_k (1 - alpha_k) c_k - S_k)`.
fn backward_ray(
    field: &VoxelField,
    records: &[SampleRecord],
    ray_color: &[f64; 3],
    dl_dc: &[f64; 3],
    grads: &mut GradBuffer,
) {
    // running prefix sum of w_j c_j; the tail of the composite (including
    // the background term) is recovered from the forward total without a
    // reverse sweep
    let mut prefix = [0.0f64; 3];
    let (nx, ny) = (field.resolution[0], field.resolution[1]);
    for rec in records {
        let w = rec.trans * rec.alpha;
        let mut dl_dsigma = 0.0;
        let mut dl_dcraw = [0.0f64; 3];
        for ch in 0..3 {
            prefix[ch] += w * rec.color[ch];
            let tail = ray_color[ch] - prefix[ch];
            let dc_dsigma =
                rec.delta * (rec.trans * (1.0 - rec.alpha) * rec.color[ch] - tail);
            dl_dsigma += dl_dc[ch] * dc_dsigma;
            dl_dcraw[ch] = dl_dc[ch] * w * rec.color_deriv[ch];
        }
        let dl_draw = dl_dsigma * rec.sig_deriv;
        let [fx, fy, fz] = rec.frac;
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - fz } else { fz };
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - fy } else { fy };
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - fx } else { fx };
                    let cw = wx * wy * wz;
                    if cw == 0.0 {
                        continue;
                    }
                    let idx = ((rec.base[2] + dz) * ny + rec.base[1] + dy) * nx
                        + rec.base[0]
                        + dx;
                    grads.density[idx] += cw * dl_draw;
                    grads.color[idx * 3] += cw * dl_dcraw[0];
                    grads.color[idx * 3 + 1] += cw * dl_dcraw[1];
                    grads.color[idx * 3 + 2] += cw * dl_dcraw[2];
                }
            }
        }
    }
}

/// Generic batch driver. `fill_job` writes the weighted rays of job `i`
/// into the buffer and returns the job's target color; weights of one job
/// must sum to one.
pub fn run_supervised<F>(
    field: &VoxelField,
    n_jobs: usize,
    fill_job: F,
    cfg: &RenderCfg,
    chunk_count: usize,
    parallel: bool,
) -> BatchResult
where
    F: Fn(usize, &mut Vec<(Ray, f64)>) -> [f64; 3] + Sync,
{
    let mut scratch = GradScratch::new(field.voxel_count(), chunk_count.clamp(1, n_jobs.max(1)));
    let (job_losses, mean_loss, rays) =
        run_supervised_into(field, n_jobs, fill_job, cfg, parallel, &mut scratch);
    let grads = scratch.buffers.swap_remove(0);
    BatchResult { grads, job_losses, mean_loss, rays }
}

/// Like [`run_supervised`] but accumulating into caller-owned scratch;
/// afterwards `scratch.grads()` holds the merged batch gradients. The
/// scratch's chunk count fixes the summation tree, so results do not
/// depend on thread scheduling.
pub fn run_supervised_into<F>(
    field: &VoxelField,
    n_jobs: usize,
    fill_job: F,
    cfg: &RenderCfg,
    parallel: bool,
    scratch: &mut GradScratch,
) -> (Vec<f64>, f64, u64)
where
    F: Fn(usize, &mut Vec<(Ray, f64)>) -> [f64; 3] + Sync,
{
    let chunk_count = scratch.buffers.len().min(n_jobs.max(1));
    let bounds: Vec<(usize, usize)> = (0..chunk_count)
        .map(|c| (c * n_jobs / chunk_count, (c + 1) * n_jobs / chunk_count))
        .collect();

    let run_chunk = |(&(start, end), grads): (&(usize, usize), &mut GradBuffer)| -> (Vec<f64>, u64) {
        grads.clear();
        let mut losses = Vec::with_capacity(end - start);
        let mut rays_buf: Vec<(Ray, f64)> = Vec::new();
        let mut records: Vec<SampleRecord> = Vec::with_capacity(cfg.samples_per_ray);
        let mut ray_data: Vec<(Vec<SampleRecord>, [f64; 3], f64)> = Vec::new();
        let mut ray_count = 0u64;
        let norm = 1.0 / (3.0 * n_jobs as f64);
        for job in start..end {
            rays_buf.clear();
            let target = fill_job(job, &mut rays_buf);
            ray_count += rays_buf.len() as u64;

            // forward every ray of the job, keeping its records
            ray_data.clear();
            let mut blended = [0.0f64; 3];
            for (ray, weight) in &rays_buf {
                let (c, t_final) = forward_ray(field, ray, cfg, &mut records);
                for ch in 0..3 {
                    blended[ch] += weight * c[ch];
                }
                ray_data.push((std::mem::take(&mut records), c, t_final));
            }

            // loss and upstream gradient on the blended pixel
            let mut job_loss = 0.0;
            let mut dl_dblend = [0.0f64; 3];
            for ch in 0..3 {
                let diff = blended[ch] - target[ch];
                match cfg.loss {
                    LossMode::L2 => {
                        job_loss += diff * diff;
                        dl_dblend[ch] = 2.0 * diff * norm;
                    }
                    LossMode::L1 => {
                        job_loss += diff.abs();
                        dl_dblend[ch] = diff.signum() * norm;
                    }
                }
            }
            losses.push(job_loss / 3.0);

            for ((recs, c, _t_final), (_, weight)) in ray_data.iter().zip(&rays_buf) {
                let dl_dc = [
                    dl_dblend[0] * weight,
                    dl_dblend[1] * weight,
                    dl_dblend[2] * weight,
                ];
                backward_ray(field, recs, c, &dl_dc, grads);
            }
        }
        (losses, ray_count)
    };

    let active = &mut scratch.buffers[..chunk_count];
    let chunk_results: Vec<(Vec<f64>, u64)> = if parallel && chunk_count > 1 {
        bounds.par_iter().zip(active.par_iter_mut()).map(run_chunk).collect()
    } else {
        bounds.iter().zip(active.iter_mut()).map(run_chunk).collect()
    };

    let mut job_losses = Vec::with_capacity(n_jobs);
    let mut rays = 0u64;
    for (losses, r) in &chunk_results {
        job_losses.extend_from_slice(losses);
        rays += r;
    }
    merge_tree(active, parallel);
    let mean_loss = job_losses.iter().sum::<f64>() / n_jobs.max(1) as f64;
    (job_losses, mean_loss, rays)
}

/// Recursive halving reduction into `buffers[0]`; the tree shape depends
/// only on the buffer count, so parallel and serial execution sum in the
/// same order.
fn merge_tree(buffers: &mut [GradBuffer], parallel: bool) {
    if buffers.len() <= 1 {
        return;
    }
    let mid = buffers.len().div_ceil(2);
    let (left, right) = buffers.split_at_mut(mid);
    if parallel {
        rayon::join(|| merge_tree(left, true), || merge_tree(right, true));
    } else {
        merge_tree(left, false);
        merge_tree(right, false);
    }
    left[0].merge(&right[0]);
}

/// Gradients of the reconstruction loss for plain single-ray supervision.
pub fn backward_rays(
    field: &VoxelField,
    rays: &[Ray],
    targets: &[[f64; 3]],
    cfg: &RenderCfg,
) -> BatchResult {
    assert_eq!(rays.len(), targets.len());
    run_supervised(
        field,
        rays.len(),
        |i, buf| {
            buf.push((rays[i], 1.0));
            targets[i]
        },
        cfg,
        1,
        false,
    )
}

/// Job filler casting pattern rays around each task's pixel center, with
/// targets read from the task's view image.
pub fn pixel_job_filler<'a>(
    views: &'a [CameraView],
    targets: &'a [ImageBuffer],
    tasks: &'a [PixelTask],
    offsets: &'a [(f64, f64)],
    weights: &'a [f64],
) -> impl Fn(usize, &mut Vec<(Ray, f64)>) -> [f64; 3] + Sync + 'a {
    move |i, buf| {
        let task = &tasks[i];
        let view = &views[task.view as usize];
        for ((dx, dy), w) in offsets.iter().zip(weights) {
            let ray = view.ray(task.x as f64 + 0.5 + dx, task.y as f64 + 0.5 + dy);
            buf.push((ray, *w));
        }
        targets[task.view as usize].get(task.x as usize, task.y as usize)
    }
}

/// Batch driver for pixel tasks: rays are cast through pattern offsets
/// around each task's pixel center and targets come from its view's image.
#[allow(clippy::too_many_arguments)]
pub fn supervised_batch(
    field: &VoxelField,
    views: &[CameraView],
    targets: &[ImageBuffer],
    tasks: &[PixelTask],
    offsets: &[(f64, f64)],
    weights: &[f64],
    cfg: &RenderCfg,
    chunk_count: usize,
    parallel: bool,
) -> BatchResult {
    run_supervised(
        field,
        tasks.len(),
        pixel_job_filler(views, targets, tasks, offsets, weights),
        cfg,
        chunk_count,
        parallel,
    )
}

/// Loss of a batch without gradients, matching [`run_supervised`]'s forward
/// exactly; used by the finite-difference checks.
pub fn forward_loss<F>(field: &VoxelField, n_jobs: usize, fill_job: F, cfg: &RenderCfg) -> f64
where
    F: Fn(usize, &mut Vec<(Ray, f64)>) -> [f64; 3] + Sync,
{
    let mut rays_buf: Vec<(Ray, f64)> = Vec::new();
    let mut records = Vec::new();
    let mut total = 0.0;
    for job in 0..n_jobs {
        rays_buf.clear();
        let target = fill_job(job, &mut rays_buf);
        let mut blended = [0.0f64; 3];
        for (ray, weight) in &rays_buf {
            let (c, _) = forward_ray(field, ray, cfg, &mut records);
            for ch in 0..3 {
                blended[ch] += weight * c[ch];
            }
        }
        for ch in 0..3 {
            let diff = blended[ch] - target[ch];
            total += match cfg.loss {
                LossMode::L2 => diff * diff,
                LossMode::L1 => diff.abs(),
            };
        }
    }
    total / (3.0 * n_jobs as f64)
}

/// Mean squared per-channel difference between two equal-sized images.
pub fn reconstruction_loss(rendered: &ImageBuffer, target: &ImageBuffer) -> crate::Result<f64> {
    if !rendered.same_dims(target) {
        return Err(crate::Error::validation(format!(
            "loss dimension mismatch: {}x{} vs {}x{}",
            rendered.width(),
            rendered.height(),
            target.width(),
            target.height()
        )));
    }
    let n = rendered.data().len() as f64;
    Ok(rendered
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}
