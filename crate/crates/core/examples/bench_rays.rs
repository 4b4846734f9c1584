use std::time::Instant;
use voxrf_core::field::{run_supervised, RenderCfg, VoxelField, LossMode};
use voxrf_core::scene::{Aabb, Ray};
use nalgebra::Vector3;

fn main() {
    let mut field = VoxelField::new([64, 64, 64], Aabb::unit_cube());
    for (i, v) in field.density_raw.iter_mut().enumerate() { *v = ((i % 17) as f64) * 0.1 - 1.0; }
    for (i, v) in field.color_raw.iter_mut().enumerate() { *v = ((i % 13) as f64) * 0.1 - 0.6; }
    let cfg = RenderCfg { samples_per_ray: 128, background: [0.0; 3], early_stop: 1e-6, loss: LossMode::L2 };
    let n = 40_000usize;
    let fill = |i: usize, buf: &mut Vec<(Ray, f64)>| {
        let a = i as f64 * 0.0001;
        buf.push((Ray {
            origin: Vector3::new(a.sin() * 0.5, a.cos() * 0.5, 3.0),
            direction: Vector3::new(-a.sin() * 0.15, -a.cos() * 0.15, -1.0).normalize(),
            near: 1.2, far: 4.8,
        }, 1.0));
        [0.3, 0.5, 0.7]
    };
    // warmup
    let _ = run_supervised(&field, 1000, fill, &cfg, 4, true);
    let t = Instant::now();
    let out = run_supervised(&field, n, fill, &cfg, 4, true);
    let dt = t.elapsed().as_secs_f64();
    println!("parallel: {n} rays in {dt:.3}s = {:.0} rays/s (loss {:.4})", n as f64 / dt, out.mean_loss);
    let t = Instant::now();
    let out = run_supervised(&field, n, fill, &cfg, 4, false);
    let dt = t.elapsed().as_secs_f64();
    println!("serial:   {n} rays in {dt:.3}s = {:.0} rays/s (loss {:.4})", n as f64 / dt, out.mean_loss);
}
