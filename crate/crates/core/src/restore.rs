//! Pose-based view selection and pluggable restoration.
//!
//! Reference views for a target are ranked by camera-pose similarity
//! alone (degraded image content is unreliable): the cosine of the optical
//! axes minus half the normalized center distance. Restoration itself is
//! an extension point; the built-in strategies are `identity` and
//! `exec:<program>`, which shells out to an external restorer.

use std::path::PathBuf;
use std::process::Command;

use crate::error::{Error, Result};
use crate::image_buf::ImageBuffer;
use crate::scene::SceneSet;

/// Distance penalty weight in the selection score.
const LAMBDA_D: f64 = 0.5;

/// Ranked references for one target view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSelection {
    pub target_index: usize,
    pub reference_indices: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Pairwise pose-similarity score.
fn pose_score(scene: &SceneSet, a: usize, b: usize, diameter: f64) -> f64 {
    let va = &scene.views[a];
    let vb = &scene.views[b];
    let cos = va.forward().dot(&vb.forward());
    let dist = (va.center() - vb.center()).norm();
    cos - LAMBDA_D * dist / diameter
}

/// Selects the `k` most relevant reference views for `target`, ties broken
/// by lower index. Deterministic and independent of image content.
pub fn select_views(scene: &SceneSet, target: usize, k: usize) -> Result<ViewSelection> {
    if target >= scene.len() {
        return Err(Error::validation(format!(
            "target index {target} out of range ({} views)",
            scene.len()
        )));
    }
    if k >= scene.len() {
        return Err(Error::validation(format!(
            "cannot select k = {k} references from {} views (target excluded)",
            scene.len()
        )));
    }
    let diameter = scene.camera_diameter();
    let mut scored: Vec<(usize, f64)> = (0..scene.len())
        .filter(|&i| i != target)
        .map(|i| (i, pose_score(scene, target, i, diameter)))
        .collect();
    scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    scored.truncate(k);
    Ok(ViewSelection {
        target_index: target,
        reference_indices: scored.iter().map(|(i, _)| *i).collect(),
        scores: scored.iter().map(|(_, s)| *s).collect(),
    })
}

/// A restoration strategy maps a degraded target plus its reference views
/// to a restored image.
pub trait Restorer: Send + Sync {
    fn name(&self) -> &str;
    fn restore(&self, target: &ImageBuffer, references: &[&ImageBuffer]) -> Result<ImageBuffer>;
}

/// Passes the degraded target through unchanged.
pub struct IdentityRestorer;

impl Restorer for IdentityRestorer {
    fn name(&self) -> &str {
        "identity"
    }

    fn restore(&self, target: &ImageBuffer, _references: &[&ImageBuffer]) -> Result<ImageBuffer> {
        Ok(target.clone())
    }
}

/// Shells out to `program target.png out.png ref_0.png ref_1.png ...`; the
/// program must write its result to the second argument.
pub struct ExternalCommandRestorer {
    pub program: PathBuf,
}

impl Restorer for ExternalCommandRestorer {
    fn name(&self) -> &str {
        "external-command"
    }

    fn restore(&self, target: &ImageBuffer, references: &[&ImageBuffer]) -> Result<ImageBuffer> {
        let dir = tempfile::tempdir().map_err(|e| Error::io("restore-tmp", e))?;
        let target_path = dir.path().join("target.png");
        let out_path = dir.path().join("out.png");
        target.save(&target_path)?;
        let mut cmd = Command::new(&self.program);
        cmd.arg(&target_path).arg(&out_path);
        for (i, reference) in references.iter().enumerate() {
            let p = dir.path().join(format!("ref_{i}.png"));
            reference.save(&p)?;
            cmd.arg(p);
        }
        let status = cmd.status().map_err(|e| Error::io(&self.program, e))?;
        if !status.success() {
            return Err(Error::validation(format!(
                "external restorer {} exited with {status}",
                self.program.display()
            )));
        }
        ImageBuffer::load(&out_path)
    }
}

/// Parses a strategy specifier: `identity` or `exec:<path>`.
pub fn restorer_from_spec(spec: &str) -> Result<Box<dyn Restorer>> {
    if spec == "identity" {
        return Ok(Box::new(IdentityRestorer));
    }
    if let Some(path) = spec.strip_prefix("exec:") {
        if path.is_empty() {
            return Err(Error::validation("exec: strategy needs a program path"));
        }
        return Ok(Box::new(ExternalCommandRestorer { program: PathBuf::from(path) }));
    }
    Err(Error::validation(format!(
        "unknown restoration strategy '{spec}' (expected 'identity' or 'exec:<path>')"
    )))
}

/// Restores every view against its `k` selected references. Poses and
/// bounds are untouched.
pub fn restore_scene(scene: &SceneSet, restorer: &dyn Restorer, k: usize) -> Result<SceneSet> {
    scene.validate()?;
    if k >= scene.len() && scene.len() > 1 {
        return Err(Error::validation(format!(
            "k = {k} references unavailable in a {}-view scene",
            scene.len()
        )));
    }
    let k = k.min(scene.len() - 1);
    let mut images = Vec::with_capacity(scene.len());
    for target in 0..scene.len() {
        let selection = select_views(scene, target, k)?;
        let refs: Vec<&ImageBuffer> =
            selection.reference_indices.iter().map(|&i| &scene.images[i]).collect();
        images.push(restorer.restore(&scene.images[target], &refs)?);
    }
    Ok(SceneSet { views: scene.views.clone(), images, bbox: scene.bbox })
}
