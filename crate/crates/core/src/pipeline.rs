//! End-to-end workflows behind the CLI subcommands.
//!
//! Stages communicate through the filesystem: each stage writes its
//! artifacts and the next one loads them back, so a `pipeline` run is
//! byte-equivalent to running the individual subcommands in sequence.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::degrade;
use crate::error::{Error, Result};
use crate::field::{self, render_view, RenderOpts, TrainLog, VoxelField};
use crate::metrics::{self, EvalReport};
use crate::quadtree::QuadTree;
use crate::restore;
use crate::scene::{self, CameraView, SceneSet};
use crate::toy;

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::validation(format!("stage '{name}' failed: {e}")))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|source| Error::Json { path: path.into(), source })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Degrades a scene under one seed; writes the degraded PNGs, their
/// manifest and `theta.json`. Returns `(manifest, theta)` paths.
pub fn cmd_degrade(
    manifest: &Path,
    seed: u64,
    out: &Path,
    target: Option<(usize, usize)>,
) -> Result<(PathBuf, PathBuf)> {
    ensure_dir(out)?;
    let scene = scene::load_scene(manifest)?;
    let (tw, th) = target.unwrap_or((scene.width(), scene.height()));
    let params = degrade::sample_params(seed, (tw, th));
    params.validate()?;

    let mut images = Vec::with_capacity(scene.len());
    for (i, img) in scene.images.iter().enumerate() {
        let mut stream = crate::rng::stream(seed, "noise", i as u64);
        images.push(degrade::degrade_image(img, &params, &mut stream)?);
    }
    // intrinsics scale with the target resolution
    let sx = tw as f64 / scene.width() as f64;
    let sy = th as f64 / scene.height() as f64;
    let views: Vec<CameraView> = scene
        .views
        .iter()
        .map(|v| CameraView {
            fx: v.fx * sx,
            fy: v.fy * sy,
            cx: v.cx * sx,
            cy: v.cy * sy,
            ..v.clone()
        })
        .collect();
    let degraded = SceneSet { views, images, bbox: scene.bbox };
    let manifest_out = scene::save_scene(&degraded, out)?;
    let theta_path = out.join("theta.json");
    write_json(&theta_path, &params)?;
    Ok((manifest_out, theta_path))
}

#[derive(Debug, Serialize, Deserialize)]
struct TripletRecord {
    degraded: [String; 3],
    clean: String,
}

/// Synthesizes restoration training triplets from a clip; writes degraded
/// and clean frames plus a JSON-lines manifest. Returns the manifest path.
pub fn cmd_make_triplets(clip: &Path, seed: u64, count: usize, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let clip_scene = scene::load_scene(clip)?;
    let set = degrade::synth_restoration_triplets(&clip_scene, seed, count)?;

    let img_dir = out.join("frames");
    ensure_dir(&img_dir)?;
    for (i, img) in set.degraded.images.iter().enumerate() {
        img.save(img_dir.join(format!("degraded_{i:03}.png")))?;
    }
    for (i, img) in clip_scene.images.iter().enumerate() {
        img.save(img_dir.join(format!("clean_{i:03}.png")))?;
    }
    write_json(&out.join("theta.json"), &set.params)?;

    let path = out.join("triplets.jsonl");
    let mut lines = String::new();
    for t in &set.triplets {
        let rec = TripletRecord {
            degraded: [
                format!("frames/degraded_{:03}.png", t.target),
                format!("frames/degraded_{:03}.png", t.ref_a),
                format!("frames/degraded_{:03}.png", t.ref_b),
            ],
            clean: format!("frames/clean_{:03}.png", t.target),
        };
        lines.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        lines.push('\n');
    }
    fs::write(&path, lines).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Restores a scene with the named strategy; returns the new manifest path.
pub fn cmd_restore(manifest: &Path, strategy: &str, k: usize, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let scene_in = scene::load_scene(manifest)?;
    let restorer = restore::restorer_from_spec(strategy)?;
    let restored = restore::restore_scene(&scene_in, restorer.as_ref(), k)?;
    scene::save_scene(&restored, out)
}

/// Artifact paths of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainArtifacts {
    pub field: PathBuf,
    pub train_log: PathBuf,
    pub tree_state: Option<PathBuf>,
    pub total_rays: u64,
    pub total_seconds: f64,
}

/// Trains on a scene manifest and writes `field.bin`, `train_log.jsonl`
/// and, with quadtree planning, `tree_state.json` next to it.
pub fn cmd_train(manifest: &Path, cfg: &RunConfig, field_out: &Path) -> Result<TrainArtifacts> {
    cfg.validate()?;
    if let Some(dir) = field_out.parent() {
        if !dir.as_os_str().is_empty() {
            ensure_dir(dir)?;
        }
    }
    let scene_in = scene::load_scene(manifest)?;
    let guidance = cfg.guidance_enabled.then_some(&cfg.guidance);
    let quadtree = cfg.quadtree_enabled.then_some(&cfg.quadtree);
    let trained = field::train(&scene_in, &cfg.train, guidance, quadtree)?;

    trained.field.save(field_out)?;
    let log_path = field_out.with_extension("train_log.jsonl");
    fs::write(&log_path, trained.log.to_jsonl()).map_err(|e| Error::io(&log_path, e))?;
    let tree_state = match &trained.trees {
        Some(trees) => {
            let path = field_out.with_extension("tree_state.json");
            write_json(&path, trees)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainArtifacts {
        field: field_out.to_path_buf(),
        train_log: log_path,
        tree_state,
        total_rays: trained.log.total_rays,
        total_seconds: trained.log.total_seconds,
    })
}

/// Pose source for rendering: a view index into a manifest, or a
/// standalone pose file.
pub enum PoseSpec<'a> {
    Index { manifest: &'a Path, index: usize },
    File(&'a Path),
}

#[derive(Deserialize)]
struct PoseFile {
    width: usize,
    height: usize,
    camera_angle_x: f64,
    transform_matrix: [[f64; 4]; 4],
    #[serde(default)]
    near: Option<f64>,
    #[serde(default)]
    far: Option<f64>,
}

/// Renders one view of a saved field to a PNG.
pub fn cmd_render(field_path: &Path, pose: PoseSpec, out: &Path, background: [f64; 3]) -> Result<()> {
    let field = VoxelField::load(field_path)?;
    let (view, width, height) = match pose {
        PoseSpec::Index { manifest, index } => {
            let s = scene::load_scene(manifest)?;
            if index >= s.len() {
                return Err(Error::validation(format!(
                    "pose index {index} out of range ({} views)",
                    s.len()
                )));
            }
            (s.views[index].clone(), s.width(), s.height())
        }
        PoseSpec::File(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let pf: PoseFile = serde_json::from_str(&text)
                .map_err(|source| Error::Json { path: path.into(), source })?;
            let f = 0.5 * pf.width as f64 / (pf.camera_angle_x / 2.0).tan();
            let mut m = nalgebra::Matrix4::zeros();
            for r in 0..4 {
                for c in 0..4 {
                    m[(r, c)] = pf.transform_matrix[r][c];
                }
            }
            let view = CameraView {
                fx: f,
                fy: f,
                cx: pf.width as f64 / 2.0,
                cy: pf.height as f64 / 2.0,
                cam_to_world: m,
                image_path: String::new(),
                near: pf.near.unwrap_or(scene::DEFAULT_NEAR),
                far: pf.far.unwrap_or(scene::DEFAULT_FAR),
            };
            view.validate()?;
            (view, pf.width, pf.height)
        }
    };
    let opts = RenderOpts { background, early_stop: 1e-6 };
    let samples = 2 * field.resolution.iter().copied().max().unwrap_or(64);
    let img = render_view(&field, &view, width, height, samples, &opts);
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            ensure_dir(dir)?;
        }
    }
    img.save(out)
}

/// Evaluates a saved field against a scene and writes the JSON report.
pub fn cmd_eval(
    field_path: &Path,
    manifest: &Path,
    out: &Path,
    rays_used: u64,
    train_seconds: f64,
) -> Result<EvalReport> {
    let field = VoxelField::load(field_path)?;
    let holdout = scene::load_scene(manifest)?;
    let opts = RenderOpts { background: [0.0; 3], early_stop: 1e-6 };
    let samples = 2 * field.resolution.iter().copied().max().unwrap_or(64);
    let report = metrics::evaluate(&field, &holdout, samples, &opts, rays_used, train_seconds)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            ensure_dir(dir)?;
        }
    }
    write_json(out, &report)?;
    Ok(report)
}

/// Writes per-view quadtree overlays for a saved tree state.
pub fn cmd_viz_quadtree(manifest: &Path, tree_state: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let scene_in = scene::load_scene(manifest)?;
    let text = fs::read_to_string(tree_state).map_err(|e| Error::io(tree_state, e))?;
    let trees: Vec<QuadTree> = serde_json::from_str(&text)
        .map_err(|source| Error::Json { path: tree_state.into(), source })?;
    if trees.len() != scene_in.len() {
        return Err(Error::validation(format!(
            "tree state holds {} trees but the scene has {} views",
            trees.len(),
            scene_in.len()
        )));
    }
    let mut written = Vec::new();
    for (i, (tree, img)) in trees.iter().zip(&scene_in.images).enumerate() {
        let overlay = crate::quadtree::render_tree_overlay(tree, img);
        let path = out.join(format!("overlay_{i:03}.png"));
        overlay.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// Generates the procedural toy scene; writes train/test manifests and the
/// ground-truth field. Returns `(train manifest, test manifest)`.
pub fn cmd_gen_toy(
    seed: u64,
    train_views: usize,
    test_views: usize,
    image_size: usize,
    grid: [usize; 3],
    out: &Path,
) -> Result<(PathBuf, PathBuf)> {
    ensure_dir(out)?;
    let toy = toy::gen_toy(seed, train_views, test_views, image_size, grid)?;
    let train_manifest = scene::save_scene(&toy.train, &out.join("train"))?;
    let test_manifest = scene::save_scene(&toy.test, &out.join("test"))?;
    toy.field.save(out.join("gt_field.bin"))?;
    Ok((train_manifest, test_manifest))
}

/// Everything a pipeline run produced, with summary metrics inline.
#[derive(Debug, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub theta: PathBuf,
    pub degraded_manifest: PathBuf,
    pub restored_manifest: PathBuf,
    pub field: PathBuf,
    pub train_log: PathBuf,
    pub report: PathBuf,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: f64,
    pub total_rays: u64,
    pub train_seconds: f64,
}

/// Runs degrade -> restore -> train -> eval and links the artifacts in
/// `summary.json`. Evaluation uses the clean test scene (or the clean
/// input scene when none is given).
pub fn cmd_pipeline(cfg: &RunConfig) -> Result<PipelineSummary> {
    cfg.validate()?;
    let scene_manifest = cfg
        .scene
        .as_deref()
        .ok_or_else(|| Error::validation("pipeline requires a scene manifest"))?;
    let out = &cfg.out;
    ensure_dir(out)?;

    let (degraded_manifest, theta) = stage(
        "degrade",
        cmd_degrade(scene_manifest, cfg.seed, &out.join("degraded"), None),
    )?;
    let restored_manifest = stage(
        "restore",
        cmd_restore(&degraded_manifest, &cfg.strategy, cfg.k_references, &out.join("restored")),
    )?;
    let train_art = stage("train", cmd_train(&restored_manifest, cfg, &out.join("field.bin")))?;
    let eval_manifest = cfg.test_scene.as_deref().unwrap_or(scene_manifest);
    let report = stage(
        "eval",
        cmd_eval(
            &train_art.field,
            eval_manifest,
            &out.join("report.json"),
            train_art.total_rays,
            train_art.total_seconds,
        ),
    )?;

    let summary = PipelineSummary {
        theta,
        degraded_manifest,
        restored_manifest,
        field: train_art.field.clone(),
        train_log: train_art.train_log.clone(),
        report: out.join("report.json"),
        mean_psnr: report.mean_psnr,
        mean_ssim: report.mean_ssim,
        total_rays: train_art.total_rays,
        train_seconds: train_art.total_seconds,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AblateRow {
    pub guidance: bool,
    pub quadtree: bool,
    pub psnr: Option<f64>,
    pub ssim: f64,
    pub rays: u64,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AblateTable {
    pub rows: Vec<AblateRow>,
}

impl AblateTable {
    pub fn to_text(&self) -> String {
        let mut s = String::from("guidance  quadtree  psnr      ssim     rays        seconds\n");
        for r in &self.rows {
            let psnr = r.psnr.map_or("inf".to_string(), |v| format!("{v:<8.3}"));
            s.push_str(&format!(
                "{:<9} {:<9} {:<9} {:<8.4} {:<11} {:<8.1}{}\n",
                r.guidance,
                r.quadtree,
                psnr,
                r.ssim,
                r.rays,
                r.seconds,
                r.note.as_deref().map(|n| format!("  # {n}")).unwrap_or_default()
            ));
        }
        s
    }
}

/// Runs the 2x2 {guidance} x {quadtree} grid on one scene and emits the
/// comparison table. Quadtree planning is inert without guidance, so that
/// cell reuses the plain baseline's numbers and says so.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblateTable> {
    let scene_manifest = cfg
        .scene
        .as_deref()
        .ok_or_else(|| Error::validation("ablate requires a scene manifest"))?;
    let out = &cfg.out;
    ensure_dir(out)?;

    // shared preprocessing for all cells
    let (degraded_manifest, _) = stage(
        "degrade",
        cmd_degrade(scene_manifest, cfg.seed, &out.join("degraded"), None),
    )?;
    let restored_manifest = stage(
        "restore",
        cmd_restore(&degraded_manifest, &cfg.strategy, cfg.k_references, &out.join("restored")),
    )?;
    let eval_manifest = cfg.test_scene.as_deref().unwrap_or(scene_manifest);

    let run_cell = |guidance: bool, quadtree: bool| -> Result<AblateRow> {
        let cell = out.join(format!(
            "cell_g{}_q{}",
            if guidance { "on" } else { "off" },
            if quadtree { "on" } else { "off" }
        ));
        ensure_dir(&cell)?;
        let cell_cfg = RunConfig {
            guidance_enabled: guidance,
            quadtree_enabled: quadtree,
            ..cfg.clone()
        };
        let art = cmd_train(&restored_manifest, &cell_cfg, &cell.join("field.bin"))?;
        let report = cmd_eval(
            &art.field,
            eval_manifest,
            &cell.join("report.json"),
            art.total_rays,
            art.total_seconds,
        )?;
        Ok(AblateRow {
            guidance,
            quadtree,
            psnr: report.mean_psnr,
            ssim: report.mean_ssim,
            rays: art.total_rays,
            seconds: art.total_seconds,
            note: None,
        })
    };

    let full = stage("ablate g=on q=on", run_cell(true, true))?;
    let no_quadtree = stage("ablate g=on q=off", run_cell(true, false))?;
    let baseline = stage("ablate g=off q=off", run_cell(false, false))?;
    let mut inert = baseline.clone();
    inert.quadtree = true;
    inert.note = Some("quadtree is inert without guidance; baseline numbers apply".into());

    let table = AblateTable { rows: vec![full, no_quadtree, baseline, inert] };
    write_json(&out.join("ablate.json"), &table)?;
    Ok(table)
}

/// Reads a train log back from its JSONL artifact.
pub fn load_train_log(path: &Path) -> Result<TrainLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut log = TrainLog::default();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let epoch = serde_json::from_str(line)
            .map_err(|source| Error::Json { path: path.into(), source })?;
        log.epochs.push(epoch);
    }
    log.total_rays = log.epochs.iter().map(|e| e.rays_used).sum();
    log.total_seconds = log.epochs.iter().map(|e| e.seconds).sum();
    Ok(log)
}
