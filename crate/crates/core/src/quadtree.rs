//! Loss-driven quadtree planning of the supersampling budget.
//!
//! One tree per training view partitions the image into leaf rectangles
//! carrying the loss statistics of the pixels sampled inside them. Before
//! each fine epoch the trees emit a pixel plan: leaves whose previous-epoch
//! mean loss fell below `s_sample` are treated as well-learned and get an
//! `alpha`-reduced budget, pixels are drawn by rejection against a local
//! variance map, and a 20% uniform share is appended. After the epoch,
//! deepest-level leaves with high mean loss split into quadrants.

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_buf::ImageBuffer;
use crate::rng::Stream;

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    fn splittable(&self) -> bool {
        self.x1 - self.x0 >= 2 && self.y1 - self.y0 >= 2
    }

    /// Quadrants split at the floor midpoints (TL, TR, BL, BR).
    fn quadrants(&self) -> [Rect; 4] {
        let xm = self.x0 + (self.x1 - self.x0) / 2;
        let ym = self.y0 + (self.y1 - self.y0) / 2;
        [
            Rect { x0: self.x0, y0: self.y0, x1: xm, y1: ym },
            Rect { x0: xm, y0: self.y0, x1: self.x1, y1: ym },
            Rect { x0: self.x0, y0: ym, x1: xm, y1: self.y1 },
            Rect { x0: xm, y0: ym, x1: self.x1, y1: self.y1 },
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadNode {
    pub rect: Rect,
    pub children: Option<Box<[QuadNode; 4]>>,
    /// Loss recorded during the current epoch.
    pub loss_sum: f64,
    pub loss_count: u64,
    /// Mean loss of the previous epoch, rolled over when the accumulators
    /// reset; planning reads this. Fresh and newly split leaves hold none.
    pub prev_mean: Option<f64>,
}

impl QuadNode {
    fn leaf(rect: Rect) -> Self {
        QuadNode { rect, children: None, loss_sum: 0.0, loss_count: 0, prev_mean: None }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    pub fn mean_loss(&self) -> Option<f64> {
        (self.loss_count > 0).then(|| self.loss_sum / self.loss_count as f64)
    }

    fn split(&mut self) {
        debug_assert!(self.is_leaf() && self.rect.splittable());
        let q = self.rect.quadrants();
        self.children =
            Some(Box::new([QuadNode::leaf(q[0]), QuadNode::leaf(q[1]), QuadNode::leaf(q[2]), QuadNode::leaf(q[3])]));
    }
}

pub const DEFAULT_MIN_AREA: usize = 625;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadTree {
    pub root: QuadNode,
    pub width: usize,
    pub height: usize,
}

/// Builds a per-view tree, pre-subdivided twice so planning starts from 16
/// leaves (fewer when the minimum leaf area intervenes).
pub fn init_tree(width: usize, height: usize) -> Result<QuadTree> {
    if width < 4 || height < 4 {
        return Err(Error::validation(format!("quadtree needs >= 4x4 image, got {width}x{height}")));
    }
    let mut tree = QuadTree {
        root: QuadNode::leaf(Rect { x0: 0, y0: 0, x1: width, y1: height }),
        width,
        height,
    };
    for _ in 0..2 {
        split_all_leaves(&mut tree.root, DEFAULT_MIN_AREA);
    }
    Ok(tree)
}

/// Splits every current leaf above the area floor exactly once.
fn split_all_leaves(node: &mut QuadNode, min_area: usize) {
    match node.children.as_deref_mut() {
        Some(children) => children.iter_mut().for_each(|c| split_all_leaves(c, min_area)),
        None => {
            if node.rect.area() > min_area && node.rect.splittable() {
                node.split();
            }
        }
    }
}

impl QuadTree {
    pub fn leaves(&self) -> Vec<&QuadNode> {
        let mut out = Vec::new();
        fn walk<'a>(n: &'a QuadNode, out: &mut Vec<&'a QuadNode>) {
            match n.children.as_deref() {
                None => out.push(n),
                Some(children) => children.iter().for_each(|c| walk(c, out)),
            }
        }
        walk(&self.root, &mut out);
        out
    }

    /// Leaves with their depths, root depth zero.
    pub fn leaves_with_depth(&self) -> Vec<(&QuadNode, usize)> {
        let mut out = Vec::new();
        fn walk<'a>(n: &'a QuadNode, d: usize, out: &mut Vec<(&'a QuadNode, usize)>) {
            match n.children.as_deref() {
                None => out.push((n, d)),
                Some(children) => children.iter().for_each(|c| walk(c, d + 1, out)),
            }
        }
        walk(&self.root, 0, &mut out);
        out
    }

    pub fn max_leaf_depth(&self) -> usize {
        self.leaves_with_depth().iter().map(|(_, d)| *d).max().unwrap_or(0)
    }

    /// Routes a sampled pixel's loss to its containing leaf.
    pub fn record_loss(&mut self, x: usize, y: usize, loss: f64) {
        debug_assert!(x < self.width && y < self.height);
        let mut node = &mut self.root;
        while let Some(children) = node.children.as_deref_mut() {
            let idx = children
                .iter()
                .position(|c| c.rect.contains(x, y))
                .expect("children tile the parent rect");
            node = &mut children[idx];
        }
        node.loss_sum += loss;
        node.loss_count += 1;
    }

    /// Splits every deepest-level leaf whose recorded mean loss exceeds
    /// `s_divide`, unless its area is at or below `min_area`. All loss
    /// accumulators are then reset, with each surviving leaf's mean rolled
    /// into `prev_mean` for the next epoch's planning (children of a split
    /// start blank). Returns the split rects.
    pub fn subdivide_pass(&mut self, s_divide: f64, min_area: usize) -> Vec<Rect> {
        let deepest = self.max_leaf_depth();
        let mut report = Vec::new();
        fn walk(
            n: &mut QuadNode,
            d: usize,
            deepest: usize,
            s_divide: f64,
            min_area: usize,
            report: &mut Vec<Rect>,
        ) {
            match n.children.as_deref_mut() {
                Some(children) => {
                    for c in children {
                        walk(c, d + 1, deepest, s_divide, min_area, report);
                    }
                }
                None => {
                    let qualifies = d == deepest
                        && n.loss_count > 0
                        && n.loss_sum / n.loss_count as f64 > s_divide
                        && n.rect.area() > min_area
                        && n.rect.splittable();
                    if qualifies {
                        report.push(n.rect);
                        n.split();
                    }
                }
            }
        }
        walk(&mut self.root, 0, deepest, s_divide, min_area, &mut report);
        self.reset_losses();
        report
    }

    /// Clears the recording accumulators, keeping each leaf's mean as its
    /// previous-epoch value.
    pub fn reset_losses(&mut self) {
        fn walk(n: &mut QuadNode) {
            if n.is_leaf() {
                n.prev_mean = (n.loss_count > 0).then(|| n.loss_sum / n.loss_count as f64);
            }
            n.loss_sum = 0.0;
            n.loss_count = 0;
            if let Some(children) = n.children.as_deref_mut() {
                children.iter_mut().for_each(walk);
            }
        }
        walk(&mut self.root);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tree serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::validation(format!("bad tree state: {e}")))
    }
}

/// Local detail measure: population standard deviation of the luminance
/// `(R+G+B)/3` over the pixel's edge-clamped 3x3 neighborhood.
pub fn pixel_importance(img: &ImageBuffer, x: usize, y: usize) -> f64 {
    let mut vals = [0.0f64; 9];
    let mut i = 0;
    for dy in -1..=1isize {
        for dx in -1..=1isize {
            let p = img.get_clamped(x as isize + dx, y as isize + dy);
            vals[i] = (p[0] + p[1] + p[2]) / 3.0;
            i += 1;
        }
    }
    let mean = vals.iter().sum::<f64>() / 9.0;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 9.0;
    var.sqrt()
}

/// Per-pixel sampling probabilities: importance normalized by the leaf
/// maximum, so every leaf's best pixel has probability one. Leaves with no
/// variance at all fall back to uniform probability one.
pub fn leaf_probabilities(tree: &QuadTree, img: &ImageBuffer) -> Vec<f64> {
    assert_eq!((img.width(), img.height()), (tree.width, tree.height));
    let mut map = vec![0.0f64; tree.width * tree.height];
    for leaf in tree.leaves() {
        let r = leaf.rect;
        let mut max_g = 0.0f64;
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let g = pixel_importance(img, x, y);
                map[y * tree.width + x] = g;
                max_g = max_g.max(g);
            }
        }
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let p = &mut map[y * tree.width + x];
                *p = if max_g > 0.0 { *p / max_g } else { 1.0 };
            }
        }
    }
    map
}

/// Settings of the planner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadtreeConfig {
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Leaves with mean loss below this are well-learned and get the
    /// reduced budget.
    #[serde(default = "default_s_sample")]
    pub s_sample: f64,
    #[serde(default = "default_s_divide")]
    pub s_divide: f64,
    #[serde(default = "default_min_area")]
    pub min_area: usize,
}

fn default_mu() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.1
}
fn default_s_sample() -> f64 {
    0.01
}
fn default_s_divide() -> f64 {
    0.02
}
fn default_min_area() -> usize {
    DEFAULT_MIN_AREA
}

impl Default for QuadtreeConfig {
    fn default() -> Self {
        QuadtreeConfig {
            mu: default_mu(),
            alpha: default_alpha(),
            s_sample: default_s_sample(),
            s_divide: default_s_divide(),
            min_area: default_min_area(),
        }
    }
}

/// One epoch's pixel plan across all views.
#[derive(Debug, Clone)]
pub struct EpochPlan {
    /// Importance-sampled pixels as `(view, x, y)`.
    pub pixels: Vec<(usize, usize, usize)>,
    /// The uniform 20% share.
    pub uniform_pixels: Vec<(usize, usize, usize)>,
    pub rays_budgeted: u64,
}

impl EpochPlan {
    pub fn total_pixels(&self) -> usize {
        self.pixels.len() + self.uniform_pixels.len()
    }
}

/// Plans one epoch: per leaf `D` the budget is `mu * area(D)`, reduced by
/// `alpha` when the previous epoch's rolled-over mean loss in `D` fell
/// below `s_sample`; unvisited leaves keep full density. Pixels are drawn by
/// rejection against the probability map, without replacement inside one
/// leaf's draw, then a uniform share of one quarter of the planned count
/// (20% of the final set) is appended.
pub fn plan_epoch(
    trees: &[QuadTree],
    prob_maps: &[Vec<f64>],
    cfg: &QuadtreeConfig,
    rays_per_pixel: u64,
    rng: &mut Stream,
) -> EpochPlan {
    assert_eq!(trees.len(), prob_maps.len());
    let mut pixels = Vec::new();
    for (view, (tree, probs)) in trees.iter().zip(prob_maps).enumerate() {
        for leaf in tree.leaves() {
            let r = leaf.rect;
            let well_learned = leaf.prev_mean.is_some_and(|m| m < cfg.s_sample);
            let density = if well_learned { cfg.alpha * cfg.mu } else { cfg.mu };
            let budget = ((density * r.area() as f64) + 0.5).floor() as usize;
            let budget = budget.min(r.area());
            if budget == 0 {
                continue;
            }
            if budget == r.area() {
                for y in r.y0..r.y1 {
                    for x in r.x0..r.x1 {
                        pixels.push((view, x, y));
                    }
                }
                continue;
            }
            let (w, h) = (r.x1 - r.x0, r.y1 - r.y0);
            let mut chosen = vec![false; w * h];
            let mut accepted = 0usize;
            let mut attempts = 0usize;
            let max_attempts = 100 * budget + 1000;
            while accepted < budget && attempts < max_attempts {
                attempts += 1;
                let lx = rng.random_range(0..w);
                let ly = rng.random_range(0..h);
                if chosen[ly * w + lx] {
                    continue;
                }
                let (x, y) = (r.x0 + lx, r.y0 + ly);
                let p = probs[y * tree.width + x];
                if rng.random::<f64>() < p {
                    chosen[ly * w + lx] = true;
                    pixels.push((view, x, y));
                    accepted += 1;
                }
            }
            if accepted < budget {
                // pathological acceptance rate: top up deterministically
                // with the highest-probability unchosen pixels
                let mut rest: Vec<(usize, usize)> = (0..w * h)
                    .filter(|i| !chosen[*i])
                    .map(|i| (r.x0 + i % w, r.y0 + i / w))
                    .collect();
                rest.sort_by(|a, b| {
                    let pa = probs[a.1 * tree.width + a.0];
                    let pb = probs[b.1 * tree.width + b.0];
                    pb.partial_cmp(&pa).unwrap().then(a.cmp(b))
                });
                for &(x, y) in rest.iter().take(budget - accepted) {
                    pixels.push((view, x, y));
                }
            }
        }
    }

    // 20% uniform share: a quarter of the importance count makes the
    // uniform pixels one fifth of the final set
    let uniform_count = ((pixels.len() as f64) / 4.0).round() as usize;
    let mut uniform_pixels = Vec::with_capacity(uniform_count);
    for _ in 0..uniform_count {
        let view = rng.random_range(0..trees.len());
        let x = rng.random_range(0..trees[view].width);
        let y = rng.random_range(0..trees[view].height);
        uniform_pixels.push((view, x, y));
    }
    let rays_budgeted = (pixels.len() + uniform_pixels.len()) as u64 * rays_per_pixel;
    EpochPlan { pixels, uniform_pixels, rays_budgeted }
}

/// Copies the image with every leaf boundary drawn in a highlight color.
/// Only interior edges are drawn, so a fresh double-subdivided tree shows
/// a 3+3 grid.
pub fn render_tree_overlay(tree: &QuadTree, img: &ImageBuffer) -> ImageBuffer {
    const HIGHLIGHT: [f64; 3] = [1.0, 0.15, 0.1];
    assert_eq!((img.width(), img.height()), (tree.width, tree.height));
    let mut out = img.clone();
    fn walk(n: &QuadNode, out: &mut ImageBuffer) {
        let Some(children) = n.children.as_deref() else { return };
        let r = n.rect;
        let xm = children[1].rect.x0;
        let ym = children[2].rect.y0;
        for y in r.y0..r.y1 {
            out.set(xm, y, HIGHLIGHT);
        }
        for x in r.x0..r.x1 {
            out.set(x, ym, HIGHLIGHT);
        }
        children.iter().for_each(|c| walk(c, out));
    }
    walk(&tree.root, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn audit_tiling(tree: &QuadTree) {
        // leaf areas sum to the image area and no pixel lies in two leaves
        let leaves = tree.leaves();
        let total: usize = leaves.iter().map(|l| l.rect.area()).sum();
        assert_eq!(total, tree.width * tree.height);
        let mut covered = vec![false; tree.width * tree.height];
        for l in leaves {
            for y in l.rect.y0..l.rect.y1 {
                for x in l.rect.x0..l.rect.x1 {
                    assert!(!covered[y * tree.width + x], "pixel ({x},{y}) covered twice");
                    covered[y * tree.width + x] = true;
                }
            }
        }
        assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn double_subdivision_yields_sixteen_200px_leaves() {
        let tree = init_tree(800, 800).unwrap();
        let leaves = tree.leaves();
        assert_eq!(leaves.len(), 16);
        for l in &leaves {
            assert_eq!((l.rect.x1 - l.rect.x0, l.rect.y1 - l.rect.y0), (200, 200));
        }
        audit_tiling(&tree);
    }

    #[test]
    fn odd_dimensions_still_tile_exactly() {
        let tree = init_tree(801, 801).unwrap();
        audit_tiling(&tree);
        let tree = init_tree(37, 53).unwrap();
        audit_tiling(&tree);
    }

    #[test]
    fn importance_is_zero_on_constant_images() {
        let img = ImageBuffer::filled(8, 8, [0.3, 0.7, 0.2]);
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(pixel_importance(&img, x, y), 0.0);
            }
        }
    }

    #[test]
    fn importance_matches_nine_value_variance_oracle() {
        // neighborhood with five ones and four zeros:
        // mean 5/9, variance 20/81, g = sqrt(20/81)
        let img = ImageBuffer::from_fn(5, 5, |x, y| {
            let v = if (x + y) % 2 == 0 { 1.0 } else { 0.0 };
            [v, v, v]
        });
        // center (2,2): corners+center are 1 (five), edges 0 (four)
        let g = pixel_importance(&img, 2, 2);
        assert!((g - (20.0f64 / 81.0).sqrt()).abs() < 1e-12);
        assert!((g - 0.4969).abs() < 1e-4);
    }

    #[test]
    fn importance_is_shift_invariant() {
        let base = ImageBuffer::from_fn(6, 6, |x, y| {
            let v = 0.2 + 0.05 * ((x * 7 + y * 3) % 5) as f64;
            [v, v * 0.9, v * 1.1]
        });
        let mut shifted = base.clone();
        for v in shifted.data_mut() {
            *v += 0.1;
        }
        for y in 0..6 {
            for x in 0..6 {
                let a = pixel_importance(&base, x, y);
                let b = pixel_importance(&shifted, x, y);
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn probabilities_normalize_per_leaf() {
        let tree = init_tree(16, 16).unwrap();
        // constant leaves get probability one everywhere
        let flat = ImageBuffer::filled(16, 16, [0.5; 3]);
        let map = leaf_probabilities(&tree, &flat);
        assert!(map.iter().all(|&p| p == 1.0));

        // a textured image: max within each leaf is exactly one and the map
        // equals the elementwise g / max oracle
        let img = ImageBuffer::from_fn(16, 16, |x, y| {
            let v = 0.5 + 0.5 * ((x as f64 * 1.3).sin() * (y as f64 * 0.7).cos());
            [v, v, v]
        });
        let map = leaf_probabilities(&tree, &img);
        for leaf in tree.leaves() {
            let r = leaf.rect;
            let mut max_g = 0.0f64;
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    max_g = max_g.max(pixel_importance(&img, x, y));
                }
            }
            let mut saw_one = false;
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    let expect = pixel_importance(&img, x, y) / max_g;
                    let got = map[y * 16 + x];
                    assert!((got - expect).abs() < 1e-12);
                    saw_one |= (got - 1.0).abs() < 1e-12;
                }
            }
            assert!(saw_one, "leaf must contain a probability-one pixel");
        }
    }

    #[test]
    fn record_loss_routes_to_the_containing_leaf() {
        let mut tree = init_tree(16, 16).unwrap();
        assert!(tree.leaves().iter().all(|l| l.loss_count == 0));
        tree.record_loss(1, 1, 0.1);
        tree.record_loss(2, 2, 0.3);
        let leaf = tree
            .leaves()
            .into_iter()
            .find(|l| l.rect.contains(1, 1))
            .unwrap();
        assert_eq!(leaf.loss_count, 2);
        assert!((leaf.mean_loss().unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn thousand_random_records_match_hashmap_oracle() {
        let mut tree = init_tree(64, 48).unwrap();
        let mut oracle: HashMap<Rect, (f64, u64)> = HashMap::new();
        let rects: Vec<Rect> = tree.leaves().iter().map(|l| l.rect).collect();
        let mut rng = crate::rng::stream(31, "quadtest", 0);
        for _ in 0..1000 {
            let x = rng.random_range(0..64);
            let y = rng.random_range(0..48);
            let loss = rng.random::<f64>();
            tree.record_loss(x, y, loss);
            let rect = *rects.iter().find(|r| r.contains(x, y)).unwrap();
            let e = oracle.entry(rect).or_insert((0.0, 0));
            e.0 += loss;
            e.1 += 1;
        }
        for leaf in tree.leaves() {
            match oracle.get(&leaf.rect) {
                None => assert_eq!(leaf.loss_count, 0),
                Some(&(sum, count)) => {
                    assert_eq!(leaf.loss_count, count);
                    assert!((leaf.loss_sum - sum).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn no_split_when_losses_stay_low() {
        let mut tree = init_tree(800, 800).unwrap();
        for leaf_rect in tree.leaves().iter().map(|l| l.rect).collect::<Vec<_>>() {
            tree.record_loss(leaf_rect.x0, leaf_rect.y0, 0.02);
        }
        let report = tree.subdivide_pass(0.02, DEFAULT_MIN_AREA);
        assert!(report.is_empty());
        assert_eq!(tree.leaves().len(), 16);
        // accumulators reset regardless
        assert!(tree.leaves().iter().all(|l| l.loss_count == 0));
    }

    #[test]
    fn area_floor_blocks_small_leaves() {
        // a 100x100 image double-subdivides to 25x25 leaves (area 625),
        // which may never split no matter the loss
        let mut tree = init_tree(100, 100).unwrap();
        for _ in 0..5 {
            for rect in tree.leaves().iter().map(|l| l.rect).collect::<Vec<_>>() {
                tree.record_loss(rect.x0, rect.y0, 100.0);
            }
            let report = tree.subdivide_pass(0.02, DEFAULT_MIN_AREA);
            assert!(report.is_empty());
        }
        assert_eq!(tree.leaves().len(), 16);
    }

    #[test]
    fn hot_leaf_splits_into_quadrants() {
        let mut tree = init_tree(800, 800).unwrap();
        tree.record_loss(10, 10, 0.05);
        let report = tree.subdivide_pass(0.02, DEFAULT_MIN_AREA);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0], Rect { x0: 0, y0: 0, x1: 200, y1: 200 });
        let leaves = tree.leaves();
        assert_eq!(leaves.len(), 19);
        let new: Vec<_> = leaves.iter().filter(|l| l.rect.x1 <= 200 && l.rect.y1 <= 200).collect();
        assert_eq!(new.len(), 4);
        for l in new {
            assert_eq!(l.rect.area(), 100 * 100);
        }
        audit_tiling(&tree);
    }

    #[test]
    fn only_deepest_leaves_split() {
        let mut tree = init_tree(800, 800).unwrap();
        tree.record_loss(10, 10, 0.05);
        tree.subdivide_pass(0.02, DEFAULT_MIN_AREA); // depth 3 appears
        assert_eq!(tree.max_leaf_depth(), 3);
        // a hot depth-2 leaf (outside the split corner) may not split now
        tree.record_loss(790, 790, 1.0);
        let report = tree.subdivide_pass(0.02, DEFAULT_MIN_AREA);
        assert!(report.is_empty(), "depth-2 leaf split although depth 3 exists");
        // but a hot depth-3 leaf does
        tree.record_loss(10, 10, 1.0);
        let report = tree.subdivide_pass(0.02, DEFAULT_MIN_AREA);
        assert_eq!(report.len(), 1);
    }

    #[test]
    fn random_subdivision_storm_keeps_tiling() {
        let mut rng = crate::rng::stream(32, "quadtest", 0);
        let mut tree = init_tree(257, 129).unwrap();
        let depth_bound = (257f64.min(129.0)).log2() as usize + 1;
        for _ in 0..1000 {
            let x = rng.random_range(0..257);
            let y = rng.random_range(0..129);
            tree.record_loss(x, y, rng.random::<f64>());
            if rng.random_bool(0.2) {
                tree.subdivide_pass(0.02, 64);
            }
        }
        audit_tiling(&tree);
        assert!(tree.max_leaf_depth() <= depth_bound);
    }

    #[test]
    fn tree_state_round_trips_through_json() {
        let mut tree = init_tree(64, 64).unwrap();
        tree.record_loss(5, 5, 0.7);
        let json = tree.to_json();
        let back = QuadTree::from_json(&json).unwrap();
        assert_eq!(back.leaves().len(), tree.leaves().len());
        assert_eq!(back.root.rect, tree.root.rect);
        let a = tree.leaves().into_iter().find(|l| l.rect.contains(5, 5)).unwrap();
        let b = back.leaves().into_iter().find(|l| l.rect.contains(5, 5)).unwrap();
        assert_eq!(a.loss_sum, b.loss_sum);
    }

    fn flat_probs(tree: &QuadTree) -> Vec<f64> {
        vec![1.0; tree.width * tree.height]
    }

    #[test]
    fn budgets_follow_the_well_learned_rule() {
        let cfg = QuadtreeConfig::default();
        let mut tree = init_tree(64, 64).unwrap();
        // all leaves well-learned: budget is alpha * mu * area each, and
        // the uniform share adds a quarter on top
        for rect in tree.leaves().iter().map(|l| l.rect).collect::<Vec<_>>() {
            tree.record_loss(rect.x0, rect.y0, 0.001);
        }
        tree.reset_losses(); // roll the epoch so planning sees the means
        let probs = flat_probs(&tree);
        let mut rng = crate::rng::stream(33, "quadtest", 0);
        let plan = plan_epoch(&[tree.clone()], &[probs.clone()], &cfg, 4, &mut rng);
        let expected: usize = tree
            .leaves()
            .iter()
            .map(|l| ((0.1 * l.rect.area() as f64) + 0.5).floor() as usize)
            .sum();
        assert_eq!(plan.pixels.len(), expected);
        assert!((plan.pixels.len() as f64 - 0.1 * 64.0 * 64.0).abs() <= 16.0);
        assert_eq!(plan.uniform_pixels.len(), (plan.pixels.len() as f64 / 4.0).round() as usize);
        // spec'd invariant: uniform count ~ 20% of the union
        let union = plan.total_pixels() as f64;
        assert!((plan.uniform_pixels.len() as f64 - 0.2 * union).abs() <= 1.0);
        assert_eq!(plan.rays_budgeted, plan.total_pixels() as u64 * 4);

        // alpha = 1 ignores loss history
        let cfg_full = QuadtreeConfig { alpha: 1.0, ..QuadtreeConfig::default() };
        let mut rng = crate::rng::stream(33, "quadtest", 1);
        let plan = plan_epoch(&[tree.clone()], &[probs], &cfg_full, 4, &mut rng);
        assert_eq!(plan.pixels.len(), 64 * 64);
    }

    #[test]
    fn unvisited_leaves_keep_full_density() {
        let cfg = QuadtreeConfig::default();
        let tree = init_tree(64, 64).unwrap();
        let probs = flat_probs(&tree);
        let mut rng = crate::rng::stream(34, "quadtest", 0);
        let plan = plan_epoch(&[tree], &[probs], &cfg, 1, &mut rng);
        assert_eq!(plan.pixels.len(), 64 * 64);
    }

    #[test]
    fn noisy_half_attracts_the_samples() {
        // left half constant (well-learned, uniform probabilities but tiny
        // budget), right half textured with recorded high loss
        let img = ImageBuffer::from_fn(64, 64, |x, y| {
            if x < 32 {
                [0.5; 3]
            } else {
                let v = 0.5 + 0.45 * (((x * 31 + y * 17) % 7) as f64 / 3.0 - 1.0);
                [v, 1.0 - v, v]
            }
        });
        let mut tree = init_tree(64, 64).unwrap();
        for rect in tree.leaves().iter().map(|l| l.rect).collect::<Vec<_>>() {
            let loss = if rect.x0 < 32 { 0.001 } else { 0.5 };
            tree.record_loss(rect.x0 + 1, rect.y0 + 1, loss);
        }
        tree.reset_losses();
        let probs = leaf_probabilities(&tree, &img);
        let cfg = QuadtreeConfig::default();
        let mut left = 0usize;
        let mut right = 0usize;
        for trial in 0..100u64 {
            let mut rng = crate::rng::stream(35, "quadtest", trial);
            let plan = plan_epoch(&[tree.clone()], &[probs.clone()], &cfg, 1, &mut rng);
            for &(_, x, _) in &plan.pixels {
                if x < 32 {
                    left += 1;
                } else {
                    right += 1;
                }
            }
        }
        assert!(right as f64 >= 3.0 * left as f64, "left {left} right {right}");
    }

    #[test]
    fn plans_are_deterministic_under_a_fixed_seed() {
        let tree = init_tree(32, 32).unwrap();
        let img = ImageBuffer::from_fn(32, 32, |x, y| {
            let v = ((x ^ y) & 7) as f64 / 7.0;
            [v, v, v]
        });
        let probs = leaf_probabilities(&tree, &img);
        let cfg = QuadtreeConfig::default();
        let a = plan_epoch(
            &[tree.clone()],
            &[probs.clone()],
            &cfg,
            4,
            &mut crate::rng::stream(36, "plan", 0),
        );
        let b = plan_epoch(&[tree], &[probs], &cfg, 4, &mut crate::rng::stream(36, "plan", 0));
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.uniform_pixels, b.uniform_pixels);
    }

    #[test]
    fn overlay_draws_exactly_the_interior_grid() {
        let tree = init_tree(800, 800).unwrap();
        let img = ImageBuffer::filled(800, 800, [0.0; 3]);
        let overlay = render_tree_overlay(&tree, &img);
        assert_eq!((overlay.width(), overlay.height()), (800, 800));
        let mut drawn = 0usize;
        for y in 0..800 {
            for x in 0..800 {
                if overlay.get(x, y)[0] > 0.5 {
                    drawn += 1;
                    assert!(
                        x == 200 || x == 400 || x == 600 || y == 200 || y == 400 || y == 600,
                        "unexpected line pixel at ({x},{y})"
                    );
                }
            }
        }
        // 3 columns + 3 rows minus the 9 shared intersections
        assert_eq!(drawn, 3 * 800 + 3 * 800 - 9);
    }
}
