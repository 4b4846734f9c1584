//! Blur kernel synthesis and 2D convolution.
//!
//! Seven kernel families are supported. With `q = x' Sigma^-1 x` over the
//! integer offset grid:
//!
//! * iso / aniso:           `k(x) ~ exp(-q / 2)`
//! * generalized iso/aniso: `k(x) ~ exp(-q^beta / 2)`
//! * plateau iso/aniso:     `k(x) ~ 1 / (1 + q^beta)`
//! * sinc:                  circular ideal low-pass with cutoff `omega_c`,
//!   `k(r) ~ omega_c J1(omega_c r) / (2 pi r)`, center `omega_c^2 / (4 pi)`
//!
//! All kernels are normalized to sum to one. The six Gaussian-family kernels
//! are non-negative by construction; sinc keeps its negative ringing lobes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_buf::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Iso,
    Aniso,
    GeneralizedIso,
    GeneralizedAniso,
    PlateauIso,
    PlateauAniso,
    Sinc,
}

impl KernelFamily {
    pub fn is_isotropic(self) -> bool {
        matches!(self, KernelFamily::Iso | KernelFamily::GeneralizedIso | KernelFamily::PlateauIso)
    }
}

/// Parameters of one realized kernel. `beta` is the shape exponent of the
/// generalized / plateau families; `cutoff` applies to sinc only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub size: usize,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rotation: f64,
    pub beta: f64,
    pub cutoff: f64,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size % 2 == 0 || self.size == 0 {
            return Err(Error::validation(format!("kernel size {} must be odd", self.size)));
        }
        if self.family == KernelFamily::Sinc {
            if !(self.cutoff > 0.0 && self.cutoff <= std::f64::consts::PI) {
                return Err(Error::validation(format!(
                    "sinc cutoff {} outside (0, pi]",
                    self.cutoff
                )));
            }
        } else {
            if !(7..=21).contains(&self.size) {
                return Err(Error::validation(format!(
                    "blur kernel size {} outside [7, 21]",
                    self.size
                )));
            }
            if self.sigma_x <= 0.0 || self.sigma_y <= 0.0 {
                return Err(Error::validation(format!(
                    "non-positive sigma ({}, {})",
                    self.sigma_x, self.sigma_y
                )));
            }
        }
        Ok(())
    }
}

/// Realizes the kernel as a `size x size` row-major matrix summing to one.
pub fn build_kernel(spec: &KernelSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = spec.size;
    let half = (n as isize - 1) / 2;
    let mut k = vec![0.0; n * n];

    if spec.family == KernelFamily::Sinc {
        let wc = spec.cutoff;
        for dy in -half..=half {
            for dx in -half..=half {
                let r = ((dx * dx + dy * dy) as f64).sqrt();
                let v = if r == 0.0 {
                    wc * wc / (4.0 * std::f64::consts::PI)
                } else {
                    wc * libm::j1(wc * r) / (2.0 * std::f64::consts::PI * r)
                };
                k[((dy + half) * n as isize + dx + half) as usize] = v;
            }
        }
    } else {
        // Sigma^-1 = R diag(1/sx^2, 1/sy^2) R^T; isotropic families use
        // sigma_x on both axes so rotation drops out.
        let (sx, sy, rot) = if spec.family.is_isotropic() {
            (spec.sigma_x, spec.sigma_x, 0.0)
        } else {
            (spec.sigma_x, spec.sigma_y, spec.rotation)
        };
        let (sin, cos) = rot.sin_cos();
        let (ix, iy) = (1.0 / (sx * sx), 1.0 / (sy * sy));
        // entries of the symmetric inverse covariance
        let a = cos * cos * ix + sin * sin * iy;
        let b = sin * cos * (ix - iy);
        let c = sin * sin * ix + cos * cos * iy;
        for dy in -half..=half {
            for dx in -half..=half {
                let (x, y) = (dx as f64, dy as f64);
                let q = a * x * x + 2.0 * b * x * y + c * y * y;
                let v = match spec.family {
                    KernelFamily::Iso | KernelFamily::Aniso => (-0.5 * q).exp(),
                    KernelFamily::GeneralizedIso | KernelFamily::GeneralizedAniso => {
                        (-0.5 * q.powf(spec.beta)).exp()
                    }
                    KernelFamily::PlateauIso | KernelFamily::PlateauAniso => {
                        1.0 / (1.0 + q.powf(spec.beta))
                    }
                    KernelFamily::Sinc => unreachable!(),
                };
                k[((dy + half) * n as isize + dx + half) as usize] = v;
            }
        }
    }

    let sum: f64 = k.iter().sum();
    if sum.abs() < 1e-12 {
        return Err(Error::validation("kernel normalization sum is zero"));
    }
    for v in &mut k {
        *v /= sum;
    }
    Ok(k)
}

/// 2D convolution with replicate (edge-clamp) padding; output clamped to
/// `[0, 1]` since sinc lobes can overshoot.
pub fn convolve(img: &ImageBuffer, kernel: &[f64], size: usize) -> ImageBuffer {
    debug_assert_eq!(kernel.len(), size * size);
    let half = (size as isize - 1) / 2;
    let (w, h) = (img.width(), img.height());
    let mut out = ImageBuffer::new(w, h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = [0.0f64; 3];
            for ky in -half..=half {
                for kx in -half..=half {
                    let wgt = kernel[((ky + half) * size as isize + kx + half) as usize];
                    let px = img.get_clamped(x + kx, y + ky);
                    acc[0] += wgt * px[0];
                    acc[1] += wgt * px[1];
                    acc[2] += wgt * px[2];
                }
            }
            out.set(x as usize, y as usize, [
                acc[0].clamp(0.0, 1.0),
                acc[1].clamp(0.0, 1.0),
                acc[2].clamp(0.0, 1.0),
            ]);
        }
    }
    out
}
