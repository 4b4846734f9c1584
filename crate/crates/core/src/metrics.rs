//! Full-reference image quality metrics and evaluation reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{render_view, RenderOpts, VoxelField};
use crate::image_buf::ImageBuffer;
use crate::scene::SceneSet;

/// Peak signal-to-noise ratio in dB over all channels; `+inf` when the
/// images are identical.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::validation(format!(
            "psnr dimension mismatch: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let n = a.data().len() as f64;
    let mse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let half = (SSIM_WINDOW as isize - 1) / 2;
    let mut sum = 0.0;
    for y in -half..=half {
        for x in -half..=half {
            let v = (-((x * x + y * y) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[((y + half) * SSIM_WINDOW as isize + x + half) as usize] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Single-scale SSIM with the standard 11x11 Gaussian window (sigma 1.5)
/// on unit-range data, computed per channel over valid (non-padded) window
/// positions and averaged.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::validation("ssim dimension mismatch"));
    }
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::validation(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} input, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    let window = ssim_window();
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        for wy in 0..=h - SSIM_WINDOW {
            for wx in 0..=w - SSIM_WINDOW {
                let (mut mu_a, mut mu_b) = (0.0, 0.0);
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let wgt = window[ky * SSIM_WINDOW + kx];
                        mu_a += wgt * a.get(wx + kx, wy + ky)[c];
                        mu_b += wgt * b.get(wx + kx, wy + ky)[c];
                    }
                }
                let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let wgt = window[ky * SSIM_WINDOW + kx];
                        let da = a.get(wx + kx, wy + ky)[c] - mu_a;
                        let db = b.get(wx + kx, wy + ky)[c] - mu_b;
                        var_a += wgt * da * da;
                        var_b += wgt * db * db;
                        cov += wgt * da * db;
                    }
                }
                let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
                total += num / den;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Per-view metrics of a rendered holdout set plus training cost counters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_view_psnr: Vec<Option<f64>>,
    /// Set when the corresponding view rendered bit-exactly (infinite PSNR).
    pub per_view_psnr_infinite: Vec<bool>,
    pub per_view_ssim: Vec<f64>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: f64,
    pub rays_used: u64,
    pub train_seconds: f64,
}

impl EvalReport {
    /// Assembles a report from raw per-view values; infinite PSNR values
    /// serialize as null with the flag set.
    pub fn from_values(psnrs: &[f64], ssims: &[f64], rays_used: u64, train_seconds: f64) -> Self {
        let finite: Vec<f64> = psnrs.iter().copied().filter(|v| v.is_finite()).collect();
        let mean_psnr = if finite.len() == psnrs.len() && !psnrs.is_empty() {
            Some(finite.iter().sum::<f64>() / finite.len() as f64)
        } else if psnrs.iter().any(|v| v.is_infinite()) {
            None
        } else {
            None
        };
        EvalReport {
            per_view_psnr: psnrs.iter().map(|v| v.is_finite().then_some(*v)).collect(),
            per_view_psnr_infinite: psnrs.iter().map(|v| v.is_infinite()).collect(),
            per_view_ssim: ssims.to_vec(),
            mean_psnr,
            mean_ssim: ssims.iter().sum::<f64>() / ssims.len().max(1) as f64,
            rays_used,
            train_seconds,
        }
    }
}

/// Renders every holdout view and scores it against its ground truth.
/// Training cost counters are carried through into the report.
pub fn evaluate(
    field: &VoxelField,
    holdout: &SceneSet,
    samples_per_ray: usize,
    opts: &RenderOpts,
    rays_used: u64,
    train_seconds: f64,
) -> Result<EvalReport> {
    holdout.validate()?;
    let mut psnrs = Vec::with_capacity(holdout.len());
    let mut ssims = Vec::with_capacity(holdout.len());
    for (view, truth) in holdout.views.iter().zip(&holdout.images) {
        let rendered =
            render_view(field, view, truth.width(), truth.height(), samples_per_ray, opts);
        psnrs.push(psnr(&rendered, truth)?);
        ssims.push(ssim(&rendered, truth)?);
    }
    Ok(EvalReport::from_values(&psnrs, &ssims, rays_used, train_seconds))
}
