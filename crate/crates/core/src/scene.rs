//! Multi-view scene descriptions: camera poses, intrinsics and manifests.
//!
//! The on-disk scene format is a JSON manifest with a shared horizontal
//! field of view and one `transform_matrix` per frame:
//!
//! ```json
//! {
//!   "camera_angle_x": 0.6911,
//!   "aabb": [[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]],
//!   "frames": [
//!     { "file_path": "images/view_000.png",
//!       "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]],
//!       "near": 0.1, "far": 6.0 }
//!   ]
//! }
//! ```
//!
//! Cameras are right-handed and look along `-Z`, with `+X` right and `+Y`
//! up in camera space. Pixel `(i, j)` spans `[i, i+1) x [j, j+1)`, so its
//! center sits at `(i + 0.5, j + 0.5)`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_buf::ImageBuffer;

pub const DEFAULT_NEAR: f64 = 0.1;
pub const DEFAULT_FAR: f64 = 6.0;

/// Axis-aligned bounding box in scene units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn unit_cube() -> Self {
        Self { min: [-1.0; 3], max: [1.0; 3] }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }
}

/// One ray in world space with a unit direction.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub near: f64,
    pub far: f64,
}

/// A posed pinhole camera plus the path of its image.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub cam_to_world: Matrix4<f64>,
    pub image_path: String,
    pub near: f64,
    pub far: f64,
}

impl CameraView {
    /// Validates the pose: rotation block orthonormal within 1e-5 and an
    /// invertible transform; `0 < near < far`.
    pub fn validate(&self) -> Result<()> {
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-5 {
            return Err(Error::validation(format!(
                "rotation block of {} is not orthonormal (max deviation {err:.2e})",
                self.image_path
            )));
        }
        if self.cam_to_world.determinant().abs() < 1e-12 {
            return Err(Error::validation(format!(
                "non-invertible transform for {}",
                self.image_path
            )));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::validation(format!(
                "invalid near/far ({}, {}) for {}",
                self.near, self.far, self.image_path
            )));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.cam_to_world.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.cam_to_world.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Optical axis in world coordinates (the camera looks along `-Z`).
    pub fn forward(&self) -> Vector3<f64> {
        -self.rotation().column(2)
    }

    /// Casts the ray through sub-pixel position `(u, v)`; `u` and `v` are
    /// real-valued, so pseudo-pixel offsets inside a pixel are allowed.
    /// The returned direction is unit-norm.
    pub fn ray(&self, u: f64, v: f64) -> Ray {
        let dir_cam = Vector3::new((u - self.cx) / self.fx, -(v - self.cy) / self.fy, -1.0);
        let direction = (self.rotation() * dir_cam).normalize();
        Ray { origin: self.center(), direction, near: self.near, far: self.far }
    }

    /// Pre-normalization ray direction; affine in `(u, v)`. Exposed so the
    /// frustum-convexity property can be tested directly.
    pub fn ray_direction_unnormalized(&self, u: f64, v: f64) -> Vector3<f64> {
        let dir_cam = Vector3::new((u - self.cx) / self.fx, -(v - self.cy) / self.fy, -1.0);
        self.rotation() * dir_cam
    }
}

/// An ordered set of posed views with their images and the scene bounds.
#[derive(Debug, Clone)]
pub struct SceneSet {
    pub views: Vec<CameraView>,
    pub images: Vec<ImageBuffer>,
    pub bbox: Aabb,
}

impl SceneSet {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() || self.views.len() != self.images.len() {
            return Err(Error::validation(format!(
                "scene must pair >= 1 view with its image ({} views, {} images)",
                self.views.len(),
                self.images.len()
            )));
        }
        let (w, h) = (self.images[0].width(), self.images[0].height());
        for (i, img) in self.images.iter().enumerate() {
            if img.width() != w || img.height() != h {
                return Err(Error::validation(format!(
                    "image {i} is {}x{}, expected {w}x{h}",
                    img.width(),
                    img.height()
                )));
            }
        }
        for view in &self.views {
            view.validate()?;
        }
        Ok(())
    }

    /// Largest distance between two camera centers; falls back to the bbox
    /// diagonal when all cameras coincide.
    pub fn camera_diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for a in 0..self.views.len() {
            for b in a + 1..self.views.len() {
                best = best.max((self.views[a].center() - self.views[b].center()).norm());
            }
        }
        if best > 0.0 {
            best
        } else {
            let d = Vector3::new(self.bbox.extent(0), self.bbox.extent(1), self.bbox.extent(2));
            d.norm().max(1.0)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestFrame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    near: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    far: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    camera_angle_x: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    aabb: Option<[[f64; 3]; 2]>,
    frames: Vec<ManifestFrame>,
}

fn matrix_from_rows(rows: &[[f64; 4]; 4]) -> Matrix4<f64> {
    Matrix4::from_fn(|r, c| rows[r][c])
}

fn matrix_to_rows(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    let mut rows = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            rows[r][c] = m[(r, c)];
        }
    }
    rows
}

/// Resolves a frame's image path relative to the manifest; a missing
/// extension is retried as `.png`.
fn resolve_image_path(base: &Path, file_path: &str) -> PathBuf {
    let p = base.join(file_path);
    if p.exists() || p.extension().is_some() {
        p
    } else {
        p.with_extension("png")
    }
}

/// Loads a scene manifest plus all referenced images.
///
/// Intrinsics follow from the shared field of view:
/// `fx = fy = 0.5 * width / tan(camera_angle_x / 2)`, principal point at the
/// image center. Frames keep their manifest order.
pub fn load_scene(manifest_path: impl AsRef<Path>) -> Result<SceneSet> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|source| Error::Json { path: manifest_path.into(), source })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    if manifest.frames.is_empty() {
        return Err(Error::validation(format!(
            "manifest {} lists no frames",
            manifest_path.display()
        )));
    }

    let mut views = Vec::with_capacity(manifest.frames.len());
    let mut images = Vec::with_capacity(manifest.frames.len());
    for frame in &manifest.frames {
        let img_path = resolve_image_path(base, &frame.file_path);
        let img = ImageBuffer::load(&img_path)?;
        let w = img.width() as f64;
        let h = img.height() as f64;
        let f = 0.5 * w / (manifest.camera_angle_x / 2.0).tan();
        let view = CameraView {
            fx: f,
            fy: f,
            cx: w / 2.0,
            cy: h / 2.0,
            cam_to_world: matrix_from_rows(&frame.transform_matrix),
            image_path: frame.file_path.clone(),
            near: frame.near.unwrap_or(DEFAULT_NEAR),
            far: frame.far.unwrap_or(DEFAULT_FAR),
        };
        views.push(view);
        images.push(img);
    }

    let bbox = match manifest.aabb {
        Some([min, max]) => Aabb { min, max },
        None => Aabb::unit_cube(),
    };
    let scene = SceneSet { views, images, bbox };
    scene.validate()?;
    Ok(scene)
}

/// Writes `manifest.json` plus one 8-bit PNG per view under `dir/images/`.
/// Returns the manifest path. Poses serialize at full f64 precision.
pub fn save_scene(scene: &SceneSet, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;

    let mut frames = Vec::with_capacity(scene.views.len());
    for (i, (view, img)) in scene.views.iter().zip(&scene.images).enumerate() {
        let rel = format!("images/view_{i:03}.png");
        img.save(dir.join(&rel))?;
        frames.push(ManifestFrame {
            file_path: rel,
            transform_matrix: matrix_to_rows(&view.cam_to_world),
            near: Some(view.near),
            far: Some(view.far),
        });
    }
    let v0 = &scene.views[0];
    let manifest = Manifest {
        camera_angle_x: 2.0 * (0.5 * scene.width() as f64 / v0.fx).atan(),
        aabb: Some([scene.bbox.min, scene.bbox.max]),
        frames,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|source| Error::Json { path: path.clone(), source })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn identity_view(w: usize, h: usize, angle_x: f64) -> CameraView {
        let f = 0.5 * w as f64 / (angle_x / 2.0).tan();
        CameraView {
            fx: f,
            fy: f,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            cam_to_world: Matrix4::identity(),
            image_path: "test".into(),
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        }
    }

    /// Rotation about an arbitrary axis for pose fuzzing.
    fn random_pose(rng: &mut impl RngExt) -> Matrix4<f64> {
        let axis = Vector3::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        )
        .normalize();
        let angle = rng.random::<f64>() * PI;
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&Vector3::new(
            rng.random::<f64>() * 4.0 - 2.0,
            rng.random::<f64>() * 4.0 - 2.0,
            rng.random::<f64>() * 4.0 - 2.0,
        ));
        m
    }

    #[test]
    fn right_angle_fov_gives_fx_fifty_on_100px() {
        let dir = tempfile::tempdir().unwrap();
        ImageBuffer::new(100, 100).save(dir.path().join("img.png")).unwrap();
        let manifest = serde_json::json!({
            "camera_angle_x": FRAC_PI_2,
            "frames": [{"file_path": "img.png",
                        "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]
        });
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, manifest.to_string()).unwrap();
        let scene = load_scene(&mpath).unwrap();
        assert!((scene.views[0].fx - 50.0).abs() < 1e-12);
        assert!((scene.views[0].cx - 50.0).abs() < 1e-12);
        assert_eq!(scene.views[0].near, DEFAULT_NEAR);
        assert_eq!(scene.bbox, Aabb::unit_cube());
    }

    #[test]
    fn frames_keep_manifest_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut frames = Vec::new();
        for i in 0..5 {
            let name = format!("img_{i}.png");
            ImageBuffer::filled(8, 8, [i as f64 / 5.0; 3]).save(dir.path().join(&name)).unwrap();
            frames.push(serde_json::json!({
                "file_path": name,
                "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]],
                "near": 0.5, "far": 4.0 + i as f64,
            }));
        }
        let mpath = dir.path().join("manifest.json");
        std::fs::write(
            &mpath,
            serde_json::json!({"camera_angle_x": 0.8, "frames": frames}).to_string(),
        )
        .unwrap();
        let scene = load_scene(&mpath).unwrap();
        assert_eq!(scene.len(), 5);
        for (i, v) in scene.views.iter().enumerate() {
            assert_eq!(v.image_path, format!("img_{i}.png"));
            assert_eq!(v.far, 4.0 + i as f64);
        }
    }

    #[test]
    fn missing_image_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("manifest.json");
        std::fs::write(
            &mpath,
            serde_json::json!({"camera_angle_x": 0.8, "frames": [{
                "file_path": "nowhere.png",
                "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]
            }]})
            .to_string(),
        )
        .unwrap();
        let err = load_scene(&mpath).unwrap_err();
        assert!(err.to_string().contains("nowhere.png"), "{err}");
    }

    #[test]
    fn degenerate_transform_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        ImageBuffer::new(8, 8).save(dir.path().join("img.png")).unwrap();
        let mpath = dir.path().join("manifest.json");
        std::fs::write(
            &mpath,
            serde_json::json!({"camera_angle_x": 0.8, "frames": [{
                "file_path": "img.png",
                "transform_matrix": [[0,0,0,0],[0,0,0,0],[0,0,0,0],[0,0,0,1]]
            }]})
            .to_string(),
        )
        .unwrap();
        assert!(matches!(load_scene(&mpath), Err(Error::Validation(_))));
    }

    #[test]
    fn pose_round_trip_is_lossless() {
        let mut rng = crate::rng::stream(3, "scenetest", 0);
        for case in 0..20 {
            let n = 1 + case % 4;
            let views: Vec<CameraView> = (0..n)
                .map(|i| {
                    let mut v = identity_view(16, 16, 0.9);
                    v.cam_to_world = random_pose(&mut rng);
                    v.image_path = format!("v{i}");
                    v
                })
                .collect();
            let images = vec![ImageBuffer::new(16, 16); n];
            let scene = SceneSet { views, images, bbox: Aabb::unit_cube() };
            let dir = tempfile::tempdir().unwrap();
            let mpath = save_scene(&scene, dir.path()).unwrap();
            let back = load_scene(&mpath).unwrap();
            for (a, b) in scene.views.iter().zip(&back.views) {
                let diff = (a.cam_to_world - b.cam_to_world).abs().max();
                assert!(diff < 1e-9, "pose drift {diff}");
            }
        }
    }

    #[test]
    fn principal_ray_is_forward_axis() {
        let view = identity_view(100, 80, FRAC_PI_2);
        let ray = view.ray(view.cx, view.cy);
        assert!((ray.direction - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-9);
        assert!(ray.origin.norm() < 1e-12);

        let mut rng = crate::rng::stream(5, "scenetest", 1);
        let mut posed = view.clone();
        posed.cam_to_world = random_pose(&mut rng);
        let ray = posed.ray(posed.cx, posed.cy);
        assert!((ray.direction - posed.forward()).norm() < 1e-9);
        assert!((ray.origin - posed.center()).norm() < 1e-12);
    }

    #[test]
    fn directions_are_unit_norm() {
        let mut rng = crate::rng::stream(5, "scenetest", 2);
        let mut view = identity_view(64, 48, 1.1);
        view.cam_to_world = random_pose(&mut rng);
        for _ in 0..1000 {
            let u = rng.random::<f64>() * 64.0;
            let v = rng.random::<f64>() * 48.0;
            let ray = view.ray(u, v);
            // oracle: explicit normalization of the unnormalized direction
            let pre = view.ray_direction_unnormalized(u, v);
            assert!((ray.direction.norm() - 1.0).abs() < 1e-12);
            assert!((ray.direction - pre / pre.norm()).norm() < 1e-12);
        }
    }

    #[test]
    fn interior_rays_are_bilinear_in_the_corner_frustum() {
        // Pre-normalization directions are affine in (u, v), so the bilinear
        // blend of the four pixel-corner directions reproduces any interior
        // sub-pixel direction exactly.
        let mut rng = crate::rng::stream(5, "scenetest", 3);
        let mut view = identity_view(32, 32, 0.7);
        view.cam_to_world = random_pose(&mut rng);
        let (w, h) = (32.0, 32.0);
        let c00 = view.ray_direction_unnormalized(0.0, 0.0);
        let c10 = view.ray_direction_unnormalized(w, 0.0);
        let c01 = view.ray_direction_unnormalized(0.0, h);
        let c11 = view.ray_direction_unnormalized(w, h);
        for _ in 0..200 {
            let a = rng.random::<f64>();
            let b = rng.random::<f64>();
            let blend = c00 * (1.0 - a) * (1.0 - b) + c10 * a * (1.0 - b)
                + c01 * (1.0 - a) * b
                + c11 * a * b;
            let direct = view.ray_direction_unnormalized(a * w, b * h);
            assert!((blend - direct).norm() < 1e-9);
        }
    }
}
