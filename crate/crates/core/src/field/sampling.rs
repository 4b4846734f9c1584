//! Point sampling along rays.

use nalgebra::Vector3;
use rand::RngExt;

use crate::rng::Stream;
use crate::scene::Ray;

/// Sample points along one ray with their interval lengths.
#[derive(Debug, Clone)]
pub struct RaySampleSet {
    pub positions: Vec<Vector3<f64>>,
    pub deltas: Vec<f64>,
    pub ray: Ray,
}

fn build(ray: &Ray, k: usize, offsets: impl Iterator<Item = f64>) -> RaySampleSet {
    let delta = (ray.far - ray.near) / k as f64;
    let mut positions = Vec::with_capacity(k);
    for (i, u) in offsets.enumerate() {
        let t = ray.near + (i as f64 + u) * delta;
        positions.push(ray.origin + ray.direction * t);
    }
    RaySampleSet { positions, deltas: vec![delta; k], ray: *ray }
}

/// Deterministic stratified sampling: `k` segment midpoints in
/// `[near, far]`, every interval `delta = (far - near) / k`.
pub fn sample_ray(ray: &Ray, k: usize) -> RaySampleSet {
    build(ray, k, std::iter::repeat(0.5).take(k))
}

/// Stratified-uniform sampling: one uniform draw inside each segment.
pub fn sample_ray_stratified(ray: &Ray, k: usize, rng: &mut Stream) -> RaySampleSet {
    let offsets: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    build(ray, k, offsets.into_iter())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_ray() -> Ray {
        Ray {
            origin: Vector3::new(0.0, 0.0, 3.0),
            direction: Vector3::new(0.0, 0.0, -1.0),
            near: 1.0,
            far: 5.0,
        }
    }

    #[test]
    fn single_sample_sits_at_the_midpoint() {
        let s = sample_ray(&test_ray(), 1);
        assert_eq!(s.positions.len(), 1);
        assert!((s.positions[0] - Vector3::new(0.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((s.deltas[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn deltas_sum_to_the_ray_span() {
        for k in [1, 3, 17, 128] {
            let s = sample_ray(&test_ray(), k);
            let total: f64 = s.deltas.iter().sum();
            assert!((total - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn stratified_draws_stay_in_their_segments() {
        // counting oracle: each segment holds exactly one sample
        let ray = test_ray();
        let k = 16;
        let delta = (ray.far - ray.near) / k as f64;
        let mut rng = crate::rng::stream(8, "sampletest", 0);
        for _ in 0..1000 {
            let s = sample_ray_stratified(&ray, k, &mut rng);
            let mut counts = vec![0usize; k];
            for p in &s.positions {
                let t = (p - ray.origin).dot(&ray.direction);
                let seg = ((t - ray.near) / delta).floor() as usize;
                counts[seg.min(k - 1)] += 1;
            }
            assert!(counts.iter().all(|&c| c == 1), "{counts:?}");
        }
    }
}
