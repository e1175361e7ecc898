use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::read_json;
use crate::error::{Error, Result};
use crate::init::InitConfig;
use crate::tracking::TrackingConfig;
use crate::train::TrainConfig;

/// Scene description: input files (relative paths resolve against the config's directory)
/// and every hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub cameras: PathBuf,
    /// Raw tracker output: a PNG id-map directory or an RLE JSON file.
    pub masks: PathBuf,
    /// Consolidated masks; when absent, `masks` is consolidated on load.
    #[serde(default)]
    pub tracked_masks: Option<PathBuf>,
    pub point_cloud: PathBuf,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tracking: TrackingConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl SceneConfig {
    /// Read and validate a config, resolving its paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: SceneConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.cameras = resolve(base, &cfg.cameras);
        cfg.masks = resolve(base, &cfg.masks);
        cfg.point_cloud = resolve(base, &cfg.point_cloud);
        cfg.tracked_masks = cfg.tracked_masks.map(|p| resolve(base, &p));
        cfg.embeddings = cfg.embeddings.map(|p| resolve(base, &p));
        let problems = cfg.validate();
        if !problems.is_empty() {
            return Err(Error::format(
                "scene config",
                format!("{}:\n  {}", path.display(), problems.join("\n  ")),
            ));
        }
        Ok(cfg)
    }

    /// Every problem found, one message each.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let t = &self.tracking;
        if t.detect_interval == 0 {
            out.push("tracking.detect_interval must be at least 1".into());
        }
        for (name, v) in [
            ("tracking.decline_threshold", t.decline_threshold),
            ("tracking.overlap_threshold", t.overlap_threshold),
            ("tracking.multi_track_iou", t.multi_track_iou),
        ] {
            if !(v > 0.0 && v < 1.0) {
                out.push(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        out.extend(self.init.validate());
        out.extend(self.train.validate());
        out
    }
}
