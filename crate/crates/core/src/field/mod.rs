//! Explicit voxel-grid radiance field.
//!
//! The field stores pre-activation density and RGB grids over an
//! axis-aligned box. Queries trilinearly interpolate the raw grids and
//! then activate: `sigma = softplus(raw)`, `c = logistic(raw)`. A view
//! direction is accepted for interface fidelity but ignored; the grid is
//! view-independent.

mod grad;
mod render;
mod sampling;
mod train;

pub use grad::{
    backward_rays, forward_loss, pixel_job_filler, reconstruction_loss, run_supervised,
    run_supervised_into, supervised_batch, BatchResult, GradBuffer, GradScratch, LossMode,
    PixelTask, RenderCfg,
};
pub use render::{render_ray, render_view, RenderOpts};
pub use sampling::{sample_ray, sample_ray_stratified, RaySampleSet};
pub use train::{train, Adam, EpochLog, TrainConfig, TrainLog, TrainedField};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::Aabb;

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    if x >= 0.0 {
        x + e.ln_1p()
    } else {
        e.ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    if x >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    }
}

/// `(softplus(x), sigmoid(x))` from one shared exponential; bit-identical
/// to calling the two functions separately.
#[inline]
pub fn softplus_with_deriv(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    if x >= 0.0 {
        (x + e.ln_1p(), 1.0 / (1.0 + e))
    } else {
        (e.ln_1p(), e / (1.0 + e))
    }
}

/// Inverse of [`softplus`] for initialization.
pub fn softplus_inv(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelField {
    pub resolution: [usize; 3],
    pub bbox: Aabb,
    /// Pre-activation density, `x` fastest: `idx = (z * ny + y) * nx + x`.
    pub density_raw: Vec<f64>,
    /// Pre-activation color, `3 * idx + channel`.
    pub color_raw: Vec<f64>,
}

/// Trilinear stencil of a query point: base voxel and fractional offsets.
#[derive(Debug, Clone, Copy)]
pub struct TrilinearCell {
    pub base: [usize; 3],
    pub frac: [f64; 3],
}

impl VoxelField {
    /// Uniform initialization with `sigma ~ 0.1` and mid-gray color, so
    /// every activation has useful slope from the first step.
    pub fn new(resolution: [usize; 3], bbox: Aabb) -> Self {
        let n = resolution[0] * resolution[1] * resolution[2];
        VoxelField {
            resolution,
            bbox,
            density_raw: vec![softplus_inv(0.1); n],
            color_raw: vec![0.0; n * 3],
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.resolution[0] * self.resolution[1] * self.resolution[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.resolution[1] + y) * self.resolution[0] + x
    }

    /// World position of a voxel center.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        let f = |i: usize, a: usize| {
            self.bbox.min[a] + (i as f64 + 0.5) / self.resolution[a] as f64 * self.bbox.extent(a)
        };
        Vector3::new(f(x, 0), f(y, 1), f(z, 2))
    }

    /// Maps a world point to its interpolation stencil, or `None` outside
    /// the bbox. Grid sample locations sit at voxel centers; coordinates
    /// beyond the outermost centers clamp to the edge value.
    #[inline]
    pub fn cell(&self, p: &Vector3<f64>) -> Option<TrilinearCell> {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let t = (p[a] - self.bbox.min[a]) / self.bbox.extent(a);
            if !(0.0..=1.0).contains(&t) {
                return None;
            }
            let n = self.resolution[a];
            let g = (t * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            if n == 1 {
                base[a] = 0;
                frac[a] = 0.0;
            } else {
                let i = (g.floor() as usize).min(n - 2);
                base[a] = i;
                frac[a] = g - i as f64;
            }
        }
        Some(TrilinearCell { base, frac })
    }

    /// Interpolated raw values `(density_raw, color_raw)` at a stencil.
    #[inline]
    pub fn interpolate_raw(&self, cell: &TrilinearCell) -> (f64, [f64; 3]) {
        let mut d = 0.0;
        let mut c = [0.0; 3];
        let [fx, fy, fz] = cell.frac;
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - fz } else { fz };
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - fy } else { fy };
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - fx } else { fx };
                    let w = wx * wy * wz;
                    if w == 0.0 {
                        continue;
                    }
                    let idx = self.index(
                        cell.base[0] + dx,
                        cell.base[1] + dy,
                        cell.base[2] + dz,
                    );
                    d += w * self.density_raw[idx];
                    c[0] += w * self.color_raw[idx * 3];
                    c[1] += w * self.color_raw[idx * 3 + 1];
                    c[2] += w * self.color_raw[idx * 3 + 2];
                }
            }
        }
        (d, c)
    }

    /// Density and color at a world point. The direction argument is part
    /// of the query contract but does not influence the result.
    pub fn query(&self, p: &Vector3<f64>, _direction: &Vector3<f64>) -> (f64, [f64; 3]) {
        match self.cell(p) {
            None => (0.0, [0.5; 3]),
            Some(cell) => {
                let (draw, craw) = self.interpolate_raw(&cell);
                (softplus(draw), [sigmoid(craw[0]), sigmoid(craw[1]), sigmoid(craw[2])])
            }
        }
    }

    /// Serializes to the binary field format: magic, version, resolution,
    /// bbox, then raw little-endian f32 arrays.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(b"VOXF").map_err(io)?;
        w.write_all(&1u32.to_le_bytes()).map_err(io)?;
        for r in self.resolution {
            w.write_all(&(r as u32).to_le_bytes()).map_err(io)?;
        }
        for v in self.bbox.min.iter().chain(self.bbox.max.iter()) {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        for v in &self.density_raw {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
        }
        for v in &self.color_raw {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != b"VOXF" {
            return Err(Error::validation(format!("{} is not a field file", path.display())));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(io)?;
        let version = u32::from_le_bytes(u32buf);
        if version != 1 {
            return Err(Error::validation(format!("unsupported field version {version}")));
        }
        let mut resolution = [0usize; 3];
        for res in &mut resolution {
            r.read_exact(&mut u32buf).map_err(io)?;
            *res = u32::from_le_bytes(u32buf) as usize;
        }
        let mut f64buf = [0u8; 8];
        let mut bounds = [0.0f64; 6];
        for b in &mut bounds {
            r.read_exact(&mut f64buf).map_err(io)?;
            *b = f64::from_le_bytes(f64buf);
        }
        let n = resolution[0] * resolution[1] * resolution[2];
        let mut read_f32s = |count: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; count * 4];
            r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect())
        };
        let density_raw = read_f32s(n)?;
        let color_raw = read_f32s(n * 3)?;
        Ok(VoxelField {
            resolution,
            bbox: Aabb { min: [bounds[0], bounds[1], bounds[2]], max: [bounds[3], bounds[4], bounds[5]] },
            density_raw,
            color_raw,
        })
    }
}
