//! Coarse-to-fine training of the voxel field.
//!
//! Coarse epochs supervise random pixels with a single center ray each.
//! Fine epochs (when guidance is enabled) supersample their pixels with
//! the pseudo-pixel pattern; an optional quadtree plans which pixels are
//! worth the extra rays and splits hot leaves after each epoch.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::GuidanceConfig;
use crate::quadtree::{self, EpochPlan, QuadTree, QuadtreeConfig};
use crate::rng;
use crate::scene::SceneSet;

use super::grad::{pixel_job_filler, run_supervised_into, GradScratch, LossMode, PixelTask, RenderCfg};
use super::VoxelField;

/// Fixed chunk count for batch parallelism. Chunks merge in a fixed tree
/// order, so the result is bit-identical for any thread count.
const GRAD_CHUNKS: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr_density")]
    pub lr_density: f64,
    #[serde(default = "default_lr_color")]
    pub lr_color: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    /// Rays per optimizer step; supersampled pixels count s^2 rays each.
    #[serde(default = "default_batch_rays")]
    pub batch_rays: usize,
    #[serde(default = "default_coarse_epochs")]
    pub coarse_epochs: usize,
    #[serde(default = "default_fine_epochs")]
    pub fine_epochs: usize,
    #[serde(default = "default_samples_per_ray")]
    pub samples_per_ray: usize,
    #[serde(default = "default_grid")]
    pub grid_resolution: [usize; 3],
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub background: [f64; 3],
    #[serde(default = "default_train_loss")]
    pub loss: LossMode,
    /// Serial chunk execution; numerics already match the parallel path.
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default = "default_early_stop")]
    pub early_stop: f64,
}

fn default_lr_density() -> f64 {
    0.1
}
fn default_lr_color() -> f64 {
    0.1
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_batch_rays() -> usize {
    16384
}
fn default_coarse_epochs() -> usize {
    4
}
fn default_fine_epochs() -> usize {
    12
}
fn default_samples_per_ray() -> usize {
    128
}
fn default_grid() -> [usize; 3] {
    [64, 64, 64]
}
fn default_train_loss() -> LossMode {
    LossMode::L2
}
fn default_early_stop() -> f64 {
    1e-6
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_rays == 0 || self.samples_per_ray == 0 {
            return Err(Error::validation("batch_rays and samples_per_ray must be positive"));
        }
        if self.grid_resolution.iter().any(|&r| r == 0) {
            return Err(Error::validation("grid resolution must be positive"));
        }
        for beta in [self.adam_beta1, self.adam_beta2] {
            if !(0.0 < beta && beta < 1.0) {
                return Err(Error::validation(format!("adam beta {beta} outside (0, 1)")));
            }
        }
        Ok(())
    }

    fn render_cfg(&self, loss: LossMode) -> RenderCfg {
        RenderCfg {
            samples_per_ray: self.samples_per_ray,
            background: self.background,
            early_stop: self.early_stop,
            loss,
        }
    }
}

/// Adam with bias correction; one instance per parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64) -> Self {
        Adam { m: vec![0.0; len], v: vec![0.0; len], t: 0, beta1, beta2, eps: 1e-8 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        use rayon::prelude::*;
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
        const SLICE: usize = 16384;
        params
            .par_chunks_mut(SLICE)
            .zip(grads.par_chunks(SLICE))
            .zip(self.m.par_chunks_mut(SLICE).zip(self.v.par_chunks_mut(SLICE)))
            .for_each(|((p, g), (m, v))| {
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: String,
    pub loss: f64,
    pub rays_used: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub total_rays: u64,
    pub total_seconds: f64,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch log serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug)]
pub struct TrainedField {
    pub field: VoxelField,
    pub log: TrainLog,
    /// Final per-view quadtrees when planning was enabled.
    pub trees: Option<Vec<QuadTree>>,
}

/// Cosine annealing to one tenth of the initial rate over the epochs.
fn lr_factor(epoch: usize, total: usize) -> f64 {
    if total <= 1 {
        return 1.0;
    }
    let progress = epoch as f64 / (total - 1) as f64;
    0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Trains a fresh field on the scene. `guidance` enables supersampled
/// supervision in the fine stage; `quadtree` additionally plans the fine
/// pixel budget and requires guidance.
pub fn train(
    scene: &SceneSet,
    cfg: &TrainConfig,
    guidance: Option<&GuidanceConfig>,
    quadtree: Option<&QuadtreeConfig>,
) -> Result<TrainedField> {
    scene.validate()?;
    cfg.validate()?;
    if quadtree.is_some() && guidance.is_none() {
        return Err(Error::validation(
            "quadtree planning requires guidance's fine stage; enable guidance or disable quadtree",
        ));
    }

    let started = Instant::now();
    let mut field = VoxelField::new(cfg.grid_resolution, scene.bbox);
    let mut adam_density = Adam::new(field.density_raw.len(), cfg.adam_beta1, cfg.adam_beta2);
    let mut adam_color = Adam::new(field.color_raw.len(), cfg.adam_beta1, cfg.adam_beta2);
    let mut scratch = GradScratch::new(field.voxel_count(), GRAD_CHUNKS);

    let (width, height) = (scene.width(), scene.height());
    let n_views = scene.len();
    let total_pixels = n_views * width * height;
    let total_epochs = cfg.coarse_epochs + cfg.fine_epochs;
    let parallel = !cfg.deterministic;

    let pattern = guidance.map(|g| g.pattern()).transpose()?;
    let guidance_start = guidance
        .and_then(|g| g.start_epoch)
        .unwrap_or(cfg.coarse_epochs)
        .max(cfg.coarse_epochs);

    let mut trees: Option<Vec<QuadTree>> = None;
    let mut prob_maps: Option<Vec<Vec<f64>>> = None;

    let mut log = TrainLog::default();
    let center_offsets = [(0.0, 0.0)];
    let center_weights = [1.0];

    for epoch in 0..total_epochs {
        let epoch_start = Instant::now();
        let factor = lr_factor(epoch, total_epochs);
        let mut rng = rng::stream(cfg.seed, "pixels", epoch as u64);
        let supersampled = epoch >= guidance_start && pattern.is_some();
        let stage = if epoch < cfg.coarse_epochs { "coarse" } else { "fine" };

        // assemble this epoch's pixel tasks and the per-pixel ray pattern
        let (offsets, weights, loss_mode): (Vec<(f64, f64)>, Vec<f64>, LossMode) = if supersampled
        {
            let p = pattern.as_ref().expect("checked above");
            let mode = guidance.map(|g| g.loss).unwrap_or(cfg.loss);
            (p.offsets.clone(), p.weights.clone(), mode)
        } else {
            (center_offsets.to_vec(), center_weights.to_vec(), cfg.loss)
        };
        let rays_per_pixel = offsets.len();

        let plan: Option<EpochPlan> = if supersampled && quadtree.is_some() {
            let qcfg = quadtree.expect("checked");
            if trees.is_none() {
                let mut ts = Vec::with_capacity(n_views);
                let mut ps = Vec::with_capacity(n_views);
                for img in &scene.images {
                    let tree = quadtree::init_tree(width, height)?;
                    ps.push(quadtree::leaf_probabilities(&tree, img));
                    ts.push(tree);
                }
                trees = Some(ts);
                prob_maps = Some(ps);
            }
            Some(quadtree::plan_epoch(
                trees.as_ref().expect("just built"),
                prob_maps.as_ref().expect("just built"),
                qcfg,
                rays_per_pixel as u64,
                &mut rng,
            ))
        } else {
            None
        };

        let mut tasks: Vec<PixelTask> = match &plan {
            Some(plan) => plan
                .pixels
                .iter()
                .chain(&plan.uniform_pixels)
                .map(|&(v, x, y)| PixelTask { view: v as u32, x: x as u32, y: y as u32 })
                .collect(),
            None if supersampled => {
                // full supersampling: every pixel of every view once
                let mut all = Vec::with_capacity(total_pixels);
                for v in 0..n_views {
                    for y in 0..height {
                        for x in 0..width {
                            all.push(PixelTask { view: v as u32, x: x as u32, y: y as u32 });
                        }
                    }
                }
                all
            }
            None => {
                // coarse-style supervision: batch_rays random pixels per
                // iteration, ceil(total / batch) iterations
                let iters = total_pixels.div_ceil(cfg.batch_rays);
                (0..iters * cfg.batch_rays)
                    .map(|_| PixelTask {
                        view: rng.random_range(0..n_views) as u32,
                        x: rng.random_range(0..width) as u32,
                        y: rng.random_range(0..height) as u32,
                    })
                    .collect()
            }
        };
        if plan.is_some() || supersampled {
            tasks.shuffle(&mut rng);
        }

        let batch_pixels = (cfg.batch_rays / rays_per_pixel).max(1);
        let render_cfg = cfg.render_cfg(loss_mode);
        let mut epoch_loss = 0.0;
        let mut epoch_rays = 0u64;
        for batch in tasks.chunks(batch_pixels) {
            let (job_losses, mean_loss, rays) = run_supervised_into(
                &field,
                batch.len(),
                pixel_job_filler(&scene.views, &scene.images, batch, &offsets, &weights),
                &render_cfg,
                parallel,
                &mut scratch,
            );
            let grads = scratch.grads();
            adam_density.step(&mut field.density_raw, &grads.density, cfg.lr_density * factor);
            adam_color.step(&mut field.color_raw, &grads.color, cfg.lr_color * factor);
            epoch_loss += mean_loss * batch.len() as f64;
            epoch_rays += rays;
            if let Some(ts) = trees.as_mut() {
                if supersampled && quadtree.is_some() {
                    for (task, loss) in batch.iter().zip(&job_losses) {
                        ts[task.view as usize].record_loss(task.x as usize, task.y as usize, *loss);
                    }
                }
            }
        }

        if let (Some(ts), Some(qcfg)) = (trees.as_mut(), quadtree) {
            if supersampled {
                for tree in ts.iter_mut() {
                    tree.subdivide_pass(qcfg.s_divide, qcfg.min_area);
                }
            }
        }

        log.epochs.push(EpochLog {
            epoch,
            stage: stage.to_string(),
            loss: if tasks.is_empty() { 0.0 } else { epoch_loss / tasks.len() as f64 },
            rays_used: epoch_rays,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
        log.total_rays += epoch_rays;
    }

    log.total_seconds = started.elapsed().as_secs_f64();
    Ok(TrainedField { field, log, trees })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{render_view, RenderOpts};
    use crate::image_buf::ImageBuffer;
    use crate::scene::{Aabb, CameraView};
    use nalgebra::Matrix4;

    fn tiny_scene(n_views: usize, size: usize) -> SceneSet {
        let mut views = Vec::new();
        let mut images = Vec::new();
        for i in 0..n_views {
            let angle = i as f64 / n_views as f64 * std::f64::consts::TAU;
            let rot = nalgebra::Rotation3::from_axis_angle(
                &nalgebra::Vector3::y_axis(),
                angle,
            );
            let mut m = Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
            let center = rot * nalgebra::Vector3::new(0.0, 0.0, 3.0);
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&center);
            views.push(CameraView {
                fx: size as f64 * 2.0,
                fy: size as f64 * 2.0,
                cx: size as f64 / 2.0,
                cy: size as f64 / 2.0,
                cam_to_world: m,
                image_path: format!("v{i}"),
                near: 1.0,
                far: 5.0,
            });
            images.push(ImageBuffer::filled(size, size, [0.6, 0.3, 0.1]));
        }
        SceneSet { views, images, bbox: Aabb::unit_cube() }
    }

    fn smoke_cfg() -> TrainConfig {
        TrainConfig {
            batch_rays: 256,
            coarse_epochs: 0,
            fine_epochs: 0,
            samples_per_ray: 32,
            grid_resolution: [8, 8, 8],
            seed: 42,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_leave_the_field_at_initialization() {
        let scene = tiny_scene(2, 16);
        let cfg = smoke_cfg();
        let trained = train(&scene, &cfg, None, None).unwrap();
        let fresh = VoxelField::new(cfg.grid_resolution, scene.bbox);
        assert_eq!(trained.field, fresh);
        assert_eq!(trained.log.total_rays, 0);
    }

    #[test]
    fn quadtree_without_guidance_is_rejected() {
        let scene = tiny_scene(1, 16);
        let cfg = smoke_cfg();
        let err = train(&scene, &cfg, None, Some(&QuadtreeConfig::default())).unwrap_err();
        assert!(err.to_string().contains("guidance"));
    }

    #[test]
    fn coarse_ray_accounting_is_batch_times_iterations() {
        let scene = tiny_scene(1, 16); // 256 pixels
        let mut cfg = smoke_cfg();
        cfg.batch_rays = 100;
        cfg.coarse_epochs = 3;
        let trained = train(&scene, &cfg, None, None).unwrap();
        // ceil(256/100) = 3 iterations of 100 rays per epoch
        assert_eq!(trained.log.total_rays, 3 * 3 * 100);
        for e in &trained.log.epochs {
            assert_eq!(e.stage, "coarse");
            assert_eq!(e.rays_used, 300);
        }
    }

    #[test]
    fn constant_scene_converges_fast() {
        // single view of a constant image: 200 coarse iterations push the
        // rendered view past 40 dB
        let scene = tiny_scene(1, 16); // 256 px / 64-ray batches = 4 iters per epoch
        let mut cfg = smoke_cfg();
        cfg.batch_rays = 64;
        cfg.coarse_epochs = 50;
        cfg.samples_per_ray = 48;
        let trained = train(&scene, &cfg, None, None).unwrap();
        let opts = RenderOpts { background: cfg.background, early_stop: 1e-6 };
        let rendered =
            render_view(&trained.field, &scene.views[0], 16, 16, cfg.samples_per_ray, &opts);
        let db = crate::metrics::psnr(&rendered, &scene.images[0]).unwrap();
        assert!(db >= 40.0, "converged to {db:.2} dB only");
        // losses decrease overall
        let first = trained.log.epochs.first().unwrap().loss;
        let last = trained.log.epochs.last().unwrap().loss;
        assert!(last < first * 0.1, "loss {first} -> {last}");
    }

    #[test]
    fn deterministic_flag_reproduces_parallel_results_bitwise() {
        let scene = tiny_scene(2, 16);
        let mut cfg = smoke_cfg();
        cfg.coarse_epochs = 2;
        cfg.fine_epochs = 1;
        let guidance = GuidanceConfig::default();
        let a = train(&scene, &cfg, Some(&guidance), None).unwrap();
        cfg.deterministic = true;
        let b = train(&scene, &cfg, Some(&guidance), None).unwrap();
        assert_eq!(a.field.density_raw, b.field.density_raw);
        assert_eq!(a.field.color_raw, b.field.color_raw);
    }

    #[test]
    fn adam_with_zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(4, 0.9, 0.999);
        let mut params = vec![1.0, -2.0, 0.5, 3.0];
        let orig = params.clone();
        adam.step(&mut params, &[0.0; 4], 0.1);
        assert_eq!(params, orig);
    }

    #[test]
    fn lr_schedule_anneals_to_one_tenth() {
        assert!((lr_factor(0, 10) - 1.0).abs() < 1e-12);
        assert!((lr_factor(9, 10) - 0.1).abs() < 1e-12);
        assert!(lr_factor(5, 10) < 1.0 && lr_factor(5, 10) > 0.1);
        assert_eq!(lr_factor(0, 1), 1.0);
    }
}
