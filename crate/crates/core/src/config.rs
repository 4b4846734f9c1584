//! Merged run configuration: JSON file settings overridden by CLI flags.
//!
//! Every field has a default, so `{}` is a valid config. Unknown keys
//! (such as `_comment` annotations) are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::TrainConfig;
use crate::guidance::GuidanceConfig;
use crate::quadtree::QuadtreeConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Training scene manifest.
    #[serde(default)]
    pub scene: Option<PathBuf>,
    /// Held-out evaluation manifest; defaults to the clean training scene.
    #[serde(default)]
    pub test_scene: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Restoration strategy: `identity` or `exec:<path>`.
    #[serde(default = "default_strategy")]
    pub strategy: String,
    /// Reference views per restoration target.
    #[serde(default = "default_k")]
    pub k_references: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_true")]
    pub guidance_enabled: bool,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default = "default_true")]
    pub quadtree_enabled: bool,
    #[serde(default)]
    pub quadtree: QuadtreeConfig,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_seed() -> u64 {
    1
}
fn default_strategy() -> String {
    "identity".into()
}
fn default_k() -> usize {
    3
}
fn default_true() -> bool {
    true
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })
    }

    /// Coupling rule: quadtree plans exist to ration supersampled rays, so
    /// they require guidance's fine stage.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.quadtree_enabled && !self.guidance_enabled {
            return Err(Error::validation(
                "quadtree planning requires guidance (use --guidance on or --quadtree off)",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_fully_defaulted() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.strategy, "identity");
        assert_eq!(cfg.k_references, 3);
        assert!(cfg.guidance_enabled && cfg.quadtree_enabled);
        assert_eq!(cfg.guidance.s, 2);
        assert!((cfg.quadtree.alpha - 0.1).abs() < 1e-12);
        cfg.validate().unwrap();
    }

    #[test]
    fn comment_keys_are_ignored_and_partial_files_merge_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{
                "_comment": "tuning notes live here",
                "seed": 99,
                "train": { "coarse_epochs": 2, "_comment": "short run" },
                "guidance": { "s": 3 }
            }"#,
        )
        .unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.train.coarse_epochs, 2);
        assert_eq!(cfg.train.fine_epochs, TrainConfig::default().fine_epochs);
        assert_eq!(cfg.guidance.s, 3);
    }

    #[test]
    fn quadtree_without_guidance_is_invalid() {
        let cfg = RunConfig { guidance_enabled: false, ..RunConfig::default() };
        assert!(cfg.validate().is_err());
        let ok = RunConfig {
            guidance_enabled: false,
            quadtree_enabled: false,
            ..RunConfig::default()
        };
        ok.validate().unwrap();
    }
}
