//! Supersampled pseudo-pixel supervision.
//!
//! Instead of one center ray per trained pixel, an `s x s` grid of
//! pseudo-pixel rays is cast inside the pixel footprint and blended with
//! bivariate-normal weights centered on the pixel. Rays that terminate at
//! different scene points import detail visible in other views.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    render_ray, run_supervised, sample_ray, BatchResult, LossMode, RenderCfg, RenderOpts,
    VoxelField,
};
use crate::image_buf::ImageBuffer;
use crate::scene::CameraView;

/// The stratified sub-pixel offsets and their normalized weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoPixelPattern {
    pub s: usize,
    /// `s * s` displacements from the pixel center, each in `[-0.5, 0.5)`.
    pub offsets: Vec<(f64, f64)>,
    /// Parallel weights, strictly positive, summing to one.
    pub weights: Vec<f64>,
    pub covariance: [[f64; 2]; 2],
}

/// Summation by halves; equal inputs normalize to exact dyadic weights.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Builds the `s x s` pattern with weights proportional to the Gaussian
/// density `exp(-offset' Sigma^-1 offset / 2)` evaluated at the grid
/// offsets and renormalized.
pub fn make_pattern(s: usize, covariance: [[f64; 2]; 2]) -> Result<PseudoPixelPattern> {
    if s == 0 {
        return Err(Error::validation("pattern side must be at least 1"));
    }
    let det = covariance[0][0] * covariance[1][1] - covariance[0][1] * covariance[1][0];
    if (covariance[0][1] - covariance[1][0]).abs() > 1e-12 {
        return Err(Error::validation("covariance must be symmetric"));
    }
    if covariance[0][0] <= 0.0 || det <= 1e-15 {
        return Err(Error::validation(format!(
            "covariance is not positive-definite (det {det:.3e})"
        )));
    }
    let inv = [
        [covariance[1][1] / det, -covariance[0][1] / det],
        [-covariance[1][0] / det, covariance[0][0] / det],
    ];
    let mut offsets = Vec::with_capacity(s * s);
    let mut weights = Vec::with_capacity(s * s);
    for v in 0..s {
        for u in 0..s {
            let dx = (u as f64 + 0.5) / s as f64 - 0.5;
            let dy = (v as f64 + 0.5) / s as f64 - 0.5;
            let q = inv[0][0] * dx * dx + (inv[0][1] + inv[1][0]) * dx * dy + inv[1][1] * dy * dy;
            offsets.push((dx, dy));
            weights.push((-0.5 * q).exp());
        }
    }
    let total = pairwise_sum(&weights);
    for w in &mut weights {
        *w /= total;
    }
    Ok(PseudoPixelPattern { s, offsets, weights, covariance })
}

/// Isotropic pattern from a standard deviation in pixels.
pub fn make_pattern_isotropic(s: usize, sigma: f64) -> Result<PseudoPixelPattern> {
    if sigma <= 0.0 {
        return Err(Error::validation(format!("pattern sigma {sigma} must be positive")));
    }
    make_pattern(s, [[sigma * sigma, 0.0], [0.0, sigma * sigma]])
}

/// Renders one pixel as the weighted blend of its pseudo-pixel rays.
pub fn render_pixel_supersampled(
    field: &VoxelField,
    view: &CameraView,
    pixel: (usize, usize),
    pattern: &PseudoPixelPattern,
    samples_per_ray: usize,
    opts: &RenderOpts,
) -> [f64; 3] {
    let mut blended = [0.0f64; 3];
    for ((dx, dy), w) in pattern.offsets.iter().zip(&pattern.weights) {
        let ray = view.ray(pixel.0 as f64 + 0.5 + dx, pixel.1 as f64 + 0.5 + dy);
        let samples = sample_ray(&ray, samples_per_ray);
        let (c, _) = render_ray(field, &samples, opts);
        for ch in 0..3 {
            blended[ch] += w * c[ch];
        }
    }
    blended
}

/// Mean absolute (`l1`) or mean squared (`l2`) deviation between a
/// predicted patch and its target.
pub fn guided_loss(predicted: &ImageBuffer, target: &ImageBuffer, mode: LossMode) -> Result<f64> {
    if !predicted.same_dims(target) {
        return Err(Error::validation(format!(
            "guided loss shape mismatch: {}x{} vs {}x{}",
            predicted.width(),
            predicted.height(),
            target.width(),
            target.height()
        )));
    }
    let n = predicted.data().len() as f64;
    let total: f64 = predicted
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| match mode {
            LossMode::L1 => (a - b).abs(),
            LossMode::L2 => (a - b) * (a - b),
        })
        .sum();
    Ok(total / n)
}

/// Gradients of the guided loss for a batch of supersampled pixels of one
/// view. Each pseudo-ray's upstream gradient is its pattern weight times
/// the pixel's blended-loss gradient.
pub fn backward_supersampled(
    field: &VoxelField,
    view: &CameraView,
    pixels: &[(usize, usize)],
    pattern: &PseudoPixelPattern,
    target: &ImageBuffer,
    cfg: &RenderCfg,
) -> BatchResult {
    run_supervised(
        field,
        pixels.len(),
        |i, buf| {
            let (x, y) = pixels[i];
            for ((dx, dy), w) in pattern.offsets.iter().zip(&pattern.weights) {
                buf.push((view.ray(x as f64 + 0.5 + dx, y as f64 + 0.5 + dy), *w));
            }
            target.get(pixels[i].0, pixels[i].1)
        },
        cfg,
        1,
        false,
    )
}

/// Guidance settings as they appear in run configurations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuidanceConfig {
    #[serde(default = "default_s")]
    pub s: usize,
    /// Isotropic weight std in pixels; ignored when `cov` is set.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub cov: Option<[[f64; 2]; 2]>,
    #[serde(default = "default_loss")]
    pub loss: LossMode,
    /// First epoch of supersampled supervision; defaults to the start of
    /// the fine stage.
    #[serde(default)]
    pub start_epoch: Option<usize>,
}

fn default_s() -> usize {
    2
}

fn default_sigma() -> f64 {
    0.3
}

fn default_loss() -> LossMode {
    LossMode::L2
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            s: default_s(),
            sigma: default_sigma(),
            cov: None,
            loss: default_loss(),
            start_epoch: None,
        }
    }
}

impl GuidanceConfig {
    pub fn pattern(&self) -> Result<PseudoPixelPattern> {
        match self.cov {
            Some(cov) => make_pattern(self.s, cov),
            None => make_pattern_isotropic(self.s, self.sigma),
        }
    }
}
