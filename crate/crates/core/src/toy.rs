//! Procedural toy scenes for tests and demos.
//!
//! A hand-built dense field holds a few colored primitives (a checkered
//! sphere, a cube, a small satellite sphere) over empty space; train and
//! test cameras orbit it and their images are rendered by the crate's own
//! renderer, so no external data is needed anywhere in the pipeline.

use nalgebra::{Matrix4, Vector3};
use rand::RngExt;

use crate::error::{Error, Result};
use crate::field::{render_view, RenderOpts, VoxelField};
use crate::rng;
use crate::scene::{Aabb, CameraView, SceneSet};

pub const TOY_CAMERA_DISTANCE: f64 = 3.0;
pub const TOY_CAMERA_ANGLE_X: f64 = 0.6;

fn logit(c: f64) -> f64 {
    (c / (1.0 - c)).ln()
}

/// Builds the ground-truth field: opaque primitives in an empty unit cube.
pub fn toy_field(grid: [usize; 3]) -> VoxelField {
    let mut field = VoxelField::new(grid, Aabb::unit_cube());
    field.density_raw.fill(-15.0);
    field.color_raw.fill(0.0);

    let solid = 40.0f64;
    let red = [logit(0.9), logit(0.15), logit(0.1)];
    let yellow = [logit(0.95), logit(0.85), logit(0.1)];
    let blue = [logit(0.12), logit(0.35), logit(0.9)];
    let green = [logit(0.15), logit(0.85), logit(0.25)];

    let sphere_c = Vector3::new(-0.05, 0.0, 0.0);
    let sphere_r = 0.42;
    let cube_c = Vector3::new(0.42, -0.28, 0.3);
    let cube_half = 0.16;
    let sat_c = Vector3::new(0.3, 0.4, -0.35);
    let sat_r = 0.14;

    for z in 0..grid[2] {
        for y in 0..grid[1] {
            for x in 0..grid[0] {
                let p = field.voxel_center(x, y, z);
                let idx = field.index(x, y, z);
                let mut color: Option<[f64; 3]> = None;

                let d_sphere = (p - sphere_c).norm();
                if d_sphere <= sphere_r {
                    // checkered by angular octants for high-frequency detail
                    let q = p - sphere_c;
                    let theta = q.y.atan2(q.x);
                    let phi = (q.z / d_sphere.max(1e-9)).acos();
                    let cell = ((theta / 0.52).floor() + (phi / 0.52).floor()) as i64;
                    color = Some(if cell.rem_euclid(2) == 0 { red } else { yellow });
                } else if (p - cube_c).amax() <= cube_half {
                    color = Some(blue);
                } else if (p - sat_c).norm() <= sat_r {
                    color = Some(green);
                }

                if let Some(c) = color {
                    field.density_raw[idx] = solid;
                    for ch in 0..3 {
                        field.color_raw[idx * 3 + ch] = c[ch];
                    }
                }
            }
        }
    }
    field
}

/// A camera on the orbit sphere looking at the origin.
fn orbit_camera(azimuth: f64, elevation: f64, size: usize) -> CameraView {
    let eye = Vector3::new(
        TOY_CAMERA_DISTANCE * elevation.cos() * azimuth.cos(),
        TOY_CAMERA_DISTANCE * elevation.sin(),
        TOY_CAMERA_DISTANCE * elevation.cos() * azimuth.sin(),
    );
    // camera -Z looks at the origin
    let z_axis = eye.normalize();
    let up = Vector3::y();
    let x_axis = up.cross(&z_axis).normalize();
    let y_axis = z_axis.cross(&x_axis);
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 1>(0, 0).copy_from(&x_axis);
    m.fixed_view_mut::<3, 1>(0, 1).copy_from(&y_axis);
    m.fixed_view_mut::<3, 1>(0, 2).copy_from(&z_axis);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&eye);
    let f = 0.5 * size as f64 / (TOY_CAMERA_ANGLE_X / 2.0).tan();
    CameraView {
        fx: f,
        fy: f,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        cam_to_world: m,
        image_path: String::new(),
        near: TOY_CAMERA_DISTANCE - 1.8,
        far: TOY_CAMERA_DISTANCE + 1.8,
    }
}

/// A generated scene pair: training and held-out test views of the same
/// ground-truth field.
#[derive(Debug)]
pub struct ToyScene {
    pub train: SceneSet,
    pub test: SceneSet,
    pub field: VoxelField,
}

/// Renders `train_views + test_views` orbit cameras against the toy field.
/// Azimuths are evenly spaced with seeded elevation jitter; every fourth
///-ish camera is held out for testing.
pub fn gen_toy(
    seed: u64,
    train_views: usize,
    test_views: usize,
    image_size: usize,
    grid: [usize; 3],
) -> Result<ToyScene> {
    if train_views == 0 || image_size < 16 {
        return Err(Error::validation("toy scene needs >= 1 train view and >= 16px images"));
    }
    let field = toy_field(grid);
    let total = train_views + test_views;
    let mut stream = rng::stream(seed, "toycam", 0);
    let opts = RenderOpts { background: [0.0; 3], early_stop: 1e-6 };
    let samples = 2 * grid[0].max(grid[1]).max(grid[2]);

    let mut train = SceneSet { views: Vec::new(), images: Vec::new(), bbox: Aabb::unit_cube() };
    let mut test = SceneSet { views: Vec::new(), images: Vec::new(), bbox: Aabb::unit_cube() };
    let hold_every = if test_views > 0 { total.div_ceil(test_views) } else { usize::MAX };
    for i in 0..total {
        let azimuth = i as f64 / total as f64 * std::f64::consts::TAU;
        let elevation = 0.1
            + 0.5 * stream.random::<f64>()
            + if i % 2 == 0 { 0.0 } else { -0.35 };
        let mut view = orbit_camera(azimuth, elevation, image_size);
        let img = render_view(&field, &view, image_size, image_size, samples, &opts);
        let is_test = i % hold_every == hold_every - 1 && test.views.len() < test_views;
        let set = if is_test { &mut test } else { &mut train };
        view.image_path = format!("view_{:03}", set.views.len());
        set.views.push(view);
        set.images.push(img);
    }
    // top up the holdout if rounding starved it
    while test.views.len() < test_views {
        let v = train.views.pop().expect("train views available");
        let img = train.images.pop().expect("parallel image");
        test.views.push(v);
        test.images.push(img);
    }
    Ok(ToyScene { train, test, field })
}
