//! Scene-consistent second-order degradation synthesis.
//!
//! One parameter record is sampled per scene and the identical stochastic
//! pipeline is applied to every view: USM sharpening, two
//! blur/resize/noise/JPEG iterations with independently sampled parameters,
//! then a final resize-to-target / sinc / JPEG stage in one of two orders.
//! Noise *realizations* are drawn per image from a derived stream; all
//! *parameters* are frozen in the per-scene record.

mod jpeg;
mod kernel;
mod ops;

pub use jpeg::jpeg_roundtrip;
pub use kernel::{build_kernel, convolve, KernelFamily, KernelSpec};
pub use ops::{add_noise, resize, resize_to, usm_sharpen, NoiseKind, NoiseSpec, ResizeMode};

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_buf::ImageBuffer;
use crate::rng::{self, Stream};
use crate::scene::SceneSet;

/// Parameters of one blur/resize/noise/JPEG iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub blur: KernelSpec,
    pub resize_scale: f64,
    pub resize_mode: ResizeMode,
    pub noise: NoiseSpec,
    pub jpeg_quality: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalOrder {
    ResizeSincJpeg,
    JpegResizeSinc,
}

/// The frozen per-scene degradation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    pub seed: u64,
    /// Shared by the blur kernels of both stages and the final sinc filter.
    pub kernel_size: usize,
    pub stage1: StageParams,
    pub stage2: StageParams,
    pub final_order: FinalOrder,
    pub final_sinc: KernelSpec,
    pub final_resize_mode: ResizeMode,
    pub final_jpeg_quality: u32,
    pub target_width: usize,
    pub target_height: usize,
}

impl DegradationParams {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size != self.stage1.blur.size
            || self.kernel_size != self.stage2.blur.size
            || self.kernel_size != self.final_sinc.size
        {
            return Err(Error::validation("kernel sizes must agree across all stages"));
        }
        for stage in [&self.stage1, &self.stage2] {
            stage.blur.validate()?;
            if !(0.15..=1.5).contains(&stage.resize_scale) {
                return Err(Error::validation(format!(
                    "resize scale {} outside [0.15, 1.5]",
                    stage.resize_scale
                )));
            }
            if !(30..=95).contains(&stage.jpeg_quality) {
                return Err(Error::validation(format!(
                    "jpeg quality {} outside [30, 95]",
                    stage.jpeg_quality
                )));
            }
        }
        self.final_sinc.validate()?;
        if !(30..=95).contains(&self.final_jpeg_quality) {
            return Err(Error::validation(format!(
                "final jpeg quality {} outside [30, 95]",
                self.final_jpeg_quality
            )));
        }
        Ok(())
    }
}

const BLUR_FAMILIES: [KernelFamily; 6] = [
    KernelFamily::Iso,
    KernelFamily::Aniso,
    KernelFamily::GeneralizedIso,
    KernelFamily::GeneralizedAniso,
    KernelFamily::PlateauIso,
    KernelFamily::PlateauAniso,
];

const RESIZE_MODES: [ResizeMode; 3] = [ResizeMode::Area, ResizeMode::Bilinear, ResizeMode::Bicubic];

fn sample_blur(rng: &mut Stream, size: usize) -> KernelSpec {
    let family = BLUR_FAMILIES[rng.random_range(0..BLUR_FAMILIES.len())];
    let sigma_x = rng.random_range(0.2..=3.0);
    let (sigma_y, rotation) = if family.is_isotropic() {
        (sigma_x, 0.0)
    } else {
        (rng.random_range(0.2..=3.0), rng.random_range(-std::f64::consts::PI..=std::f64::consts::PI))
    };
    let beta = match family {
        KernelFamily::GeneralizedIso | KernelFamily::GeneralizedAniso => {
            rng.random_range(0.5..=4.0)
        }
        KernelFamily::PlateauIso | KernelFamily::PlateauAniso => rng.random_range(1.0..=2.0),
        _ => 1.0,
    };
    KernelSpec { family, size, sigma_x, sigma_y, rotation, beta, cutoff: 0.0 }
}

fn sample_stage(rng: &mut Stream, size: usize) -> StageParams {
    let blur = sample_blur(rng, size);
    let resize_scale = rng.random_range(0.15..=1.5);
    let resize_mode = RESIZE_MODES[rng.random_range(0..3)];
    let gray = rng.random_bool(0.4);
    let kind = if rng.random_bool(0.5) {
        NoiseKind::Gaussian { sigma: rng.random_range(1.0 / 255.0..=30.0 / 255.0) }
    } else {
        NoiseKind::Poisson { lambda: rng.random_range(0.05..=3.0) }
    };
    StageParams {
        blur,
        resize_scale,
        resize_mode,
        noise: NoiseSpec { kind, gray },
        jpeg_quality: rng.random_range(30..=95),
    }
}

/// Draws a full per-scene parameter record from the designed parameter
/// space, deterministically from `seed`.
pub fn sample_params(seed: u64, target_resolution: (usize, usize)) -> DegradationParams {
    let mut rng = rng::stream(seed, "theta", 0);
    let kernel_size = 7 + 2 * rng.random_range(0..=7usize);
    let stage1 = sample_stage(&mut rng, kernel_size);
    let stage2 = sample_stage(&mut rng, kernel_size);
    let final_order =
        if rng.random_bool(0.5) { FinalOrder::ResizeSincJpeg } else { FinalOrder::JpegResizeSinc };
    let final_sinc = KernelSpec {
        family: KernelFamily::Sinc,
        size: kernel_size,
        sigma_x: 0.0,
        sigma_y: 0.0,
        rotation: 0.0,
        beta: 1.0,
        cutoff: rng.random_range(std::f64::consts::PI / 3.0..=std::f64::consts::PI),
    };
    let final_resize_mode = RESIZE_MODES[rng.random_range(0..3)];
    let final_jpeg_quality = rng.random_range(30..=95);
    DegradationParams {
        seed,
        kernel_size,
        stage1,
        stage2,
        final_order,
        final_sinc,
        final_resize_mode,
        final_jpeg_quality,
        target_width: target_resolution.0,
        target_height: target_resolution.1,
    }
}

fn apply_stage(img: &ImageBuffer, stage: &StageParams, rng: &mut Stream) -> Result<ImageBuffer> {
    let k = build_kernel(&stage.blur)?;
    let img = convolve(img, &k, stage.blur.size);
    let img = resize(&img, stage.resize_scale, stage.resize_mode);
    let img = add_noise(&img, &stage.noise, rng);
    jpeg_roundtrip(&img, stage.jpeg_quality)
}

/// Degrades one image under the frozen record. Noise draws come from `rng`;
/// everything else is dictated by `params`.
pub fn degrade_image(
    img: &ImageBuffer,
    params: &DegradationParams,
    rng: &mut Stream,
) -> Result<ImageBuffer> {
    params.validate()?;
    let img = usm_sharpen(img);
    let img = apply_stage(&img, &params.stage1, rng)?;
    let img = apply_stage(&img, &params.stage2, rng)?;

    let sinc = build_kernel(&params.final_sinc)?;
    let (tw, th) = (params.target_width, params.target_height);
    let img = match params.final_order {
        FinalOrder::ResizeSincJpeg => {
            let img = resize_to(&img, tw, th, params.final_resize_mode);
            let img = convolve(&img, &sinc, params.final_sinc.size);
            jpeg_roundtrip(&img, params.final_jpeg_quality)?
        }
        FinalOrder::JpegResizeSinc => {
            let img = jpeg_roundtrip(&img, params.final_jpeg_quality)?;
            let img = resize_to(&img, tw, th, params.final_resize_mode);
            convolve(&img, &sinc, params.final_sinc.size)
        }
    };
    Ok(img)
}

/// Degrades every view of a scene under one shared parameter record;
/// per-image noise streams are derived from `(seed, "noise", view index)`.
/// Poses and bounds are untouched.
pub fn degrade_scene(scene: &SceneSet, seed: u64) -> Result<(SceneSet, DegradationParams)> {
    scene.validate()?;
    let params = sample_params(seed, (scene.width(), scene.height()));
    let mut images = Vec::with_capacity(scene.images.len());
    for (i, img) in scene.images.iter().enumerate() {
        let mut stream = rng::stream(seed, "noise", i as u64);
        images.push(degrade_image(img, &params, &mut stream)?);
    }
    let degraded = SceneSet { views: scene.views.clone(), images, bbox: scene.bbox };
    Ok((degraded, params))
}

/// One restoration training sample: three distinct degraded frame indices
/// plus the clean target index (always the first of the three).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub target: usize,
    pub ref_a: usize,
    pub ref_b: usize,
}

/// A degraded clip plus sampled triplets for restoration training.
#[derive(Debug)]
pub struct TripletSet {
    pub degraded: SceneSet,
    pub params: DegradationParams,
    pub triplets: Vec<Triplet>,
}

/// Degrades a clip once and draws `count` triplets of pairwise-distinct
/// frame indices.
pub fn synth_restoration_triplets(clip: &SceneSet, seed: u64, count: usize) -> Result<TripletSet> {
    if clip.len() < 3 {
        return Err(Error::validation(format!(
            "triplet synthesis needs >= 3 frames, clip has {}",
            clip.len()
        )));
    }
    let (degraded, params) = degrade_scene(clip, seed)?;
    let mut rng = rng::stream(seed, "triplets", 0);
    let n = clip.len();
    let mut triplets = Vec::with_capacity(count);
    for _ in 0..count {
        let target = rng.random_range(0..n);
        let ref_a = loop {
            let c = rng.random_range(0..n);
            if c != target {
                break c;
            }
        };
        let ref_b = loop {
            let c = rng.random_range(0..n);
            if c != target && c != ref_a {
                break c;
            }
        };
        triplets.push(Triplet { target, ref_a, ref_b });
    }
    Ok(TripletSet { degraded, params, triplets })
}
