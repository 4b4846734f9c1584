use voxrf_core::field::{train, TrainConfig};
use voxrf_core::guidance::GuidanceConfig;
use voxrf_core::quadtree::QuadtreeConfig;
use voxrf_core::toy;

fn main() {
    let toy = toy::gen_toy(1, 16, 0, 128, [64, 64, 64]).unwrap();
    let cfg = TrainConfig {
        coarse_epochs: 2,
        fine_epochs: 3,
        samples_per_ray: 64,
        grid_resolution: [64, 64, 64],
        seed: 1,
        ..TrainConfig::default()
    };
    let trained = train(&toy.train, &cfg, Some(&GuidanceConfig::default()), Some(&QuadtreeConfig::default())).unwrap();
    for e in &trained.log.epochs {
        println!("epoch {} {} loss {:.5} rays {}", e.epoch, e.stage, e.loss, e.rays_used);
    }
    if let Some(trees) = &trained.trees {
        let t = &trees[0];
        for (leaf, d) in t.leaves_with_depth() {
            println!("leaf {:?} depth {d} prev_mean {:?}", leaf.rect, leaf.prev_mean);
        }
    }
}
