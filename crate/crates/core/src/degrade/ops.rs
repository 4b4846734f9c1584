//! Pointwise and resampling stages: USM sharpening, resize, noise.

use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::image_buf::ImageBuffer;
use crate::rng::Stream;

use super::kernel::{build_kernel, convolve, KernelFamily, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMode {
    Area,
    Bilinear,
    Bicubic,
}

/// Unsharp-mask sharpening: `out = img + 0.5 (img - blur)` on pixels whose
/// residual magnitude exceeds 10/255, clamped to `[0, 1]`. The blur is a
/// 15x15 Gaussian with sigma 1.5.
pub fn usm_sharpen(img: &ImageBuffer) -> ImageBuffer {
    const WEIGHT: f64 = 0.5;
    const THRESHOLD: f64 = 10.0 / 255.0;
    let spec = KernelSpec {
        family: KernelFamily::Iso,
        size: 15,
        sigma_x: 1.5,
        sigma_y: 1.5,
        rotation: 0.0,
        beta: 1.0,
        cutoff: 0.0,
    };
    let kernel = build_kernel(&spec).expect("fixed USM kernel spec is valid");
    let blur = convolve(img, &kernel, 15);
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.get(x, y);
            let b = blur.get(x, y);
            let res = [p[0] - b[0], p[1] - b[1], p[2] - b[2]];
            let mag = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            if mag > THRESHOLD {
                out.set(x, y, [
                    (p[0] + WEIGHT * res[0]).clamp(0.0, 1.0),
                    (p[1] + WEIGHT * res[1]).clamp(0.0, 1.0),
                    (p[2] + WEIGHT * res[2]).clamp(0.0, 1.0),
                ]);
            }
        }
    }
    out
}

/// Resamples by scale factor; output dims are `round(dim * scale)`, at
/// least one pixel.
pub fn resize(img: &ImageBuffer, scale: f64, mode: ResizeMode) -> ImageBuffer {
    let ow = ((img.width() as f64 * scale).round() as usize).max(1);
    let oh = ((img.height() as f64 * scale).round() as usize).max(1);
    resize_to(img, ow, oh, mode)
}

/// Resamples to explicit output dimensions.
///
/// * `area` integrates the source (as a piecewise-constant field) over each
///   output pixel's footprint; on integer downscales this is the block mean.
/// * `bilinear` uses center-aligned linear interpolation with edge clamp.
/// * `bicubic` uses the Keys kernel (a = -0.5), 4x4 taps, edge clamp.
pub fn resize_to(img: &ImageBuffer, ow: usize, oh: usize, mode: ResizeMode) -> ImageBuffer {
    match mode {
        ResizeMode::Area => resize_area(img, ow, oh),
        ResizeMode::Bilinear => resize_bilinear(img, ow, oh),
        ResizeMode::Bicubic => resize_bicubic(img, ow, oh),
    }
}

fn resize_area(img: &ImageBuffer, ow: usize, oh: usize) -> ImageBuffer {
    let (iw, ih) = (img.width() as f64, img.height() as f64);
    let sx = iw / ow as f64;
    let sy = ih / oh as f64;
    let mut out = ImageBuffer::new(ow, oh);
    for oy in 0..oh {
        let y0 = oy as f64 * sy;
        let y1 = (oy + 1) as f64 * sy;
        for ox in 0..ow {
            let x0 = ox as f64 * sx;
            let x1 = (ox + 1) as f64 * sx;
            let mut acc = [0.0f64; 3];
            let mut area = 0.0;
            let iy0 = y0.floor() as usize;
            let iy1 = (y1.ceil() as usize).min(img.height());
            let ix0 = x0.floor() as usize;
            let ix1 = (x1.ceil() as usize).min(img.width());
            for iy in iy0..iy1 {
                let cy = (y1.min((iy + 1) as f64) - y0.max(iy as f64)).max(0.0);
                for ix in ix0..ix1 {
                    let cx = (x1.min((ix + 1) as f64) - x0.max(ix as f64)).max(0.0);
                    let wgt = cx * cy;
                    let p = img.get(ix, iy);
                    acc[0] += wgt * p[0];
                    acc[1] += wgt * p[1];
                    acc[2] += wgt * p[2];
                    area += wgt;
                }
            }
            out.set(ox, oy, [acc[0] / area, acc[1] / area, acc[2] / area]);
        }
    }
    out
}

fn resize_bilinear(img: &ImageBuffer, ow: usize, oh: usize) -> ImageBuffer {
    let sx = img.width() as f64 / ow as f64;
    let sy = img.height() as f64 / oh as f64;
    let mut out = ImageBuffer::new(ow, oh);
    for oy in 0..oh {
        let fy = (oy as f64 + 0.5) * sy - 0.5;
        let y0 = fy.floor();
        let ty = fy - y0;
        for ox in 0..ow {
            let fx = (ox as f64 + 0.5) * sx - 0.5;
            let x0 = fx.floor();
            let tx = fx - x0;
            let mut acc = [0.0f64; 3];
            for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
                for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                    let p = img.get_clamped(x0 as isize + dx, y0 as isize + dy);
                    let wgt = wx * wy;
                    acc[0] += wgt * p[0];
                    acc[1] += wgt * p[1];
                    acc[2] += wgt * p[2];
                }
            }
            out.set(ox, oy, acc);
        }
    }
    out
}

/// Keys cubic with a = -0.5.
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

fn resize_bicubic(img: &ImageBuffer, ow: usize, oh: usize) -> ImageBuffer {
    let sx = img.width() as f64 / ow as f64;
    let sy = img.height() as f64 / oh as f64;
    let mut out = ImageBuffer::new(ow, oh);
    for oy in 0..oh {
        let fy = (oy as f64 + 0.5) * sy - 0.5;
        let y0 = fy.floor() as isize;
        let ty = fy - y0 as f64;
        let wy: Vec<f64> = (-1..=2).map(|d| cubic_weight(d as f64 - ty)).collect();
        for ox in 0..ow {
            let fx = (ox as f64 + 0.5) * sx - 0.5;
            let x0 = fx.floor() as isize;
            let tx = fx - x0 as f64;
            let wx: Vec<f64> = (-1..=2).map(|d| cubic_weight(d as f64 - tx)).collect();
            let mut acc = [0.0f64; 3];
            for dy in -1..=2isize {
                for dx in -1..=2isize {
                    let wgt = wx[(dx + 1) as usize] * wy[(dy + 1) as usize];
                    let p = img.get_clamped(x0 + dx, y0 + dy);
                    acc[0] += wgt * p[0];
                    acc[1] += wgt * p[1];
                    acc[2] += wgt * p[2];
                }
            }
            out.set(ox, oy, [
                acc[0].clamp(0.0, 1.0),
                acc[1].clamp(0.0, 1.0),
                acc[2].clamp(0.0, 1.0),
            ]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseKind {
    Gaussian { sigma: f64 },
    Poisson { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    /// Gray noise shares one perturbation across the three channels.
    pub gray: bool,
}

/// Adds noise and clamps to `[0, 1]`.
///
/// Gaussian: `out = img + n`, `n ~ N(0, sigma^2)` per channel (one shared
/// draw per pixel when gray). Poisson: `out = Poisson(v * lambda) / lambda`
/// per channel; when gray, one draw is taken on the pixel's mean intensity
/// and the resulting residual is added to every channel so the perturbation
/// stays colorless.
pub fn add_noise(img: &ImageBuffer, spec: &NoiseSpec, rng: &mut Stream) -> ImageBuffer {
    let mut out = img.clone();
    match spec.kind {
        NoiseKind::Gaussian { sigma } => {
            if sigma == 0.0 {
                return out;
            }
            let dist = Normal::new(0.0, sigma).expect("sigma validated non-negative");
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let p = img.get(x, y);
                    let n = if spec.gray {
                        let s = dist.sample(rng);
                        [s, s, s]
                    } else {
                        [dist.sample(rng), dist.sample(rng), dist.sample(rng)]
                    };
                    out.set(x, y, [
                        (p[0] + n[0]).clamp(0.0, 1.0),
                        (p[1] + n[1]).clamp(0.0, 1.0),
                        (p[2] + n[2]).clamp(0.0, 1.0),
                    ]);
                }
            }
        }
        NoiseKind::Poisson { lambda } => {
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let p = img.get(x, y);
                    if spec.gray {
                        let mean = (p[0] + p[1] + p[2]) / 3.0;
                        let residual = poisson_draw(mean, lambda, rng) - mean;
                        out.set(x, y, [
                            (p[0] + residual).clamp(0.0, 1.0),
                            (p[1] + residual).clamp(0.0, 1.0),
                            (p[2] + residual).clamp(0.0, 1.0),
                        ]);
                    } else {
                        out.set(x, y, [
                            poisson_draw(p[0], lambda, rng).clamp(0.0, 1.0),
                            poisson_draw(p[1], lambda, rng).clamp(0.0, 1.0),
                            poisson_draw(p[2], lambda, rng).clamp(0.0, 1.0),
                        ]);
                    }
                }
            }
        }
    }
    out
}

fn poisson_draw(value: f64, lambda: f64, rng: &mut Stream) -> f64 {
    let rate = value * lambda;
    if rate <= 0.0 {
        return 0.0;
    }
    let dist = Poisson::new(rate).expect("positive rate");
    dist.sample(rng) / lambda
}
