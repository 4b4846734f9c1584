//! Volume rendering: emission-absorption compositing along sampled rays.

use rayon::prelude::*;

use crate::image_buf::ImageBuffer;
use crate::scene::CameraView;

use super::sampling::{sample_ray, RaySampleSet};
use super::VoxelField;

#[derive(Debug, Clone, Copy)]
pub struct RenderOpts {
    pub background: [f64; 3],
    /// Rays stop once transmittance falls below this; `0` renders exactly.
    pub early_stop: f64,
}

impl Default for RenderOpts {
    fn default() -> Self {
        RenderOpts { background: [0.0; 3], early_stop: 1e-6 }
    }
}

/// Composites one sampled ray into `(color, final transmittance)`:
/// `C = sum_k T_k (1 - exp(-sigma_k delta_k)) c_k` plus the
/// background weighted by the escaping transmittance.
pub fn render_ray(field: &VoxelField, samples: &RaySampleSet, opts: &RenderOpts) -> ([f64; 3], f64) {
    let mut color = [0.0f64; 3];
    let mut transmittance = 1.0f64;
    for (p, &delta) in samples.positions.iter().zip(&samples.deltas) {
        let (sigma, c) = field.query(p, &samples.ray.direction);
        if sigma > 0.0 {
            let alpha = 1.0 - (-sigma * delta).exp();
            let w = transmittance * alpha;
            color[0] += w * c[0];
            color[1] += w * c[1];
            color[2] += w * c[2];
            transmittance *= 1.0 - alpha;
            if transmittance < opts.early_stop {
                break;
            }
        }
    }
    for ch in 0..3 {
        color[ch] += transmittance * opts.background[ch];
    }
    (color, transmittance)
}

/// Renders a full view with one deterministic center ray per pixel,
/// clamped to `[0, 1]`.
pub fn render_view(
    field: &VoxelField,
    view: &CameraView,
    width: usize,
    height: usize,
    samples_per_ray: usize,
    opts: &RenderOpts,
) -> ImageBuffer {
    let rows: Vec<Vec<[f64; 3]>> = (0..height)
        .into_par_iter()
        .map(|y| {
            (0..width)
                .map(|x| {
                    let ray = view.ray(x as f64 + 0.5, y as f64 + 0.5);
                    let samples = sample_ray(&ray, samples_per_ray);
                    let (c, _) = render_ray(field, &samples, opts);
                    [c[0].clamp(0.0, 1.0), c[1].clamp(0.0, 1.0), c[2].clamp(0.0, 1.0)]
                })
                .collect()
        })
        .collect();
    let mut img = ImageBuffer::new(width, height);
    for (y, row) in rows.iter().enumerate() {
        for (x, px) in row.iter().enumerate() {
            img.set(x, y, *px);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{softplus_inv, sigmoid};
    use crate::scene::{Aabb, Ray};
    use nalgebra::{Matrix4, Vector3};

    fn ray_z(near: f64, far: f64) -> Ray {
        Ray {
            origin: Vector3::new(0.0, 0.0, 3.0),
            direction: Vector3::new(0.0, 0.0, -1.0),
            near,
            far,
        }
    }

    fn exact() -> RenderOpts {
        RenderOpts { background: [0.0; 3], early_stop: 0.0 }
    }

    /// Field with a constant activated density everywhere in the unit cube.
    fn homogeneous(sigma: f64) -> VoxelField {
        let mut f = VoxelField::new([4, 4, 4], Aabb::unit_cube());
        f.density_raw.fill(softplus_inv(sigma));
        f
    }

    #[test]
    fn empty_field_returns_background() {
        let mut f = homogeneous(0.1);
        f.density_raw.fill(-60.0); // softplus(-60) ~ 0 within f64
        let opts = RenderOpts { background: [0.25, 0.5, 0.75], early_stop: 0.0 };
        let s = sample_ray(&ray_z(2.0, 4.0), 32);
        let (c, t) = render_ray(&f, &s, &opts);
        assert!(t > 1.0 - 1e-12);
        for ch in 0..3 {
            assert!((c[ch] - opts.background[ch]).abs() < 1e-10);
        }
    }

    #[test]
    fn homogeneous_opacity_telescopes_exactly() {
        // Total opacity over path length L is 1 - exp(-sigma L) regardless
        // of K; the compositing sum telescopes.
        for sigma in [0.1, 1.0, 10.0] {
            let f = homogeneous(sigma);
            // the ray spans the cube chord z in [-1, 1], so L = 2 inside
            let ray = ray_z(2.0, 4.0);
            for k in [7, 64, 256] {
                let s = sample_ray(&ray, k);
                let (_, t_final) = render_ray(&f, &s, &exact());
                let expected = (-(sigma * 2.0)).exp();
                assert!(
                    (t_final - expected).abs() < 1e-9,
                    "sigma {sigma} k {k}: {t_final} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn doubling_k_preserves_total_opacity() {
        let f = homogeneous(2.5);
        let ray = ray_z(2.0, 4.0);
        let (_, t1) = render_ray(&f, &sample_ray(&ray, 32), &exact());
        let (_, t2) = render_ray(&f, &sample_ray(&ray, 64), &exact());
        assert!((t1 - t2).abs() < 1e-12);
    }

    #[test]
    fn two_sample_ray_matches_hand_rolled_expansion() {
        // (sigma, delta, c) = (1, 1, red) then (10, 1, blue). Two constant
        // z-slices realize the exact densities; samples sit on slice
        // centers so no z-interpolation occurs.
        let mut f = VoxelField::new([4, 4, 4], Aabb::unit_cube());
        let red = [12.0, -12.0, -12.0];
        let blue = [-12.0, -12.0, 12.0];
        for z in 0..4usize {
            for y in 0..4 {
                for x in 0..4 {
                    let idx = f.index(x, y, z);
                    let (d, c) = match z {
                        2 => (softplus_inv(1.0), red),
                        1 => (softplus_inv(10.0), blue),
                        _ => (-60.0, [0.0; 3]),
                    };
                    f.density_raw[idx] = d;
                    for ch in 0..3 {
                        f.color_raw[idx * 3 + ch] = c[ch];
                    }
                }
            }
        }
        let samples = RaySampleSet {
            positions: vec![Vector3::new(0.0, 0.0, 0.25), Vector3::new(0.0, 0.0, -0.25)],
            deltas: vec![1.0, 1.0],
            ray: ray_z(2.0, 4.0),
        };
        // two-term expansion oracle with the designed sigmas
        let c_red: Vec<f64> = red.iter().map(|&r| sigmoid(r)).collect();
        let c_blue: Vec<f64> = blue.iter().map(|&r| sigmoid(r)).collect();
        let a1 = 1.0 - (-1.0f64).exp();
        let t2 = (-1.0f64).exp();
        let a2 = 1.0 - (-10.0f64).exp();
        let (c, t_final) = render_ray(&f, &samples, &exact());
        for ch in 0..3 {
            let expected = a1 * c_red[ch] + t2 * a2 * c_blue[ch];
            assert!((c[ch] - expected).abs() < 1e-12, "ch {ch}: {} vs {expected}", c[ch]);
        }
        assert!((t_final - (-11.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn transmittance_is_monotone_and_bounded() {
        let f = homogeneous(3.0);
        let ray = ray_z(2.0, 4.0);
        let s = sample_ray(&ray, 64);
        // walk manually, checking T_k never increases from T_1 = 1
        let mut t = 1.0f64;
        for (p, &d) in s.positions.iter().zip(&s.deltas) {
            let (sigma, _) = f.query(p, &ray.direction);
            let next = t * (-sigma * d).exp();
            assert!(next <= t + 1e-15);
            t = next;
        }
        assert!((0.0..=1.0).contains(&t));
        let (c, t_final) = render_ray(&f, &s, &exact());
        assert!((t - t_final).abs() < 1e-12);
        for ch in 0..3 {
            assert!(c[ch] <= 1.0 - t_final + 1e-9, "channel bounded by opacity");
        }
    }

    #[test]
    fn rendered_views_are_deterministic() {
        let f = homogeneous(0.7);
        let view = CameraView {
            fx: 20.0,
            fy: 20.0,
            cx: 8.0,
            cy: 8.0,
            cam_to_world: {
                let mut m = Matrix4::identity();
                m[(2, 3)] = 3.0;
                m
            },
            image_path: "t".into(),
            near: 1.0,
            far: 5.0,
        };
        let a = render_view(&f, &view, 16, 16, 32, &RenderOpts::default());
        let b = render_view(&f, &view, 16, 16, 32, &RenderOpts::default());
        assert_eq!(a, b);
    }

    #[test]
    fn zero_density_black_background_renders_black() {
        let mut f = homogeneous(0.1);
        f.density_raw.fill(-60.0);
        let view = CameraView {
            fx: 20.0,
            fy: 20.0,
            cx: 8.0,
            cy: 8.0,
            cam_to_world: {
                let mut m = Matrix4::identity();
                m[(2, 3)] = 3.0;
                m
            },
            image_path: "t".into(),
            near: 1.0,
            far: 5.0,
        };
        let img = render_view(&f, &view, 16, 16, 16, &RenderOpts::default());
        assert!(img.data().iter().all(|&v| v < 1e-9));
    }

    #[test]
    fn lone_red_voxel_dominates_the_principal_ray() {
        // 9^3 grid has a single center voxel; make it opaque and red, with
        // everything else empty and dark. A 17x17 image puts the center
        // pixel's center exactly on the optical axis, so the principal ray
        // pierces the voxel center.
        let mut f = VoxelField::new([9, 9, 9], Aabb::unit_cube());
        f.density_raw.fill(-60.0);
        f.color_raw.fill(-10.0);
        let idx = f.index(4, 4, 4);
        f.density_raw[idx] = 60.0;
        f.color_raw[idx * 3] = 10.0;
        f.color_raw[idx * 3 + 1] = -10.0;
        f.color_raw[idx * 3 + 2] = -10.0;
        let view = CameraView {
            fx: 32.0,
            fy: 32.0,
            cx: 8.5,
            cy: 8.5,
            cam_to_world: {
                let mut m = Matrix4::identity();
                m[(2, 3)] = 3.0;
                m
            },
            image_path: "t".into(),
            near: 1.0,
            far: 5.0,
        };
        let img = render_view(&f, &view, 17, 17, 256, &RenderOpts::default());
        let center = img.get(8, 8);
        assert!(center[0] > 0.8, "red channel {}", center[0]);
        assert!(center[1] < 0.2 && center[2] < 0.2, "{center:?}");
    }
}
