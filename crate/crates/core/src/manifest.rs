//! Scene manifest: a TOML file listing posed frames and global settings.
//!
//! ```toml
//! voxel_size = 0.2
//! max_tokens = 750
//! rope_base = 10000.0
//! fourier_seed = 0            # or: fourier_weights = "fourier.cfgt"
//! origin = [0.0, 0.0, 0.0]    # optional; omitted means auto
//!
//! [[frames]]
//! frame_id = "000"
//! depth = "depth_000.cfgt"        # (H, W) meters
//! features = "features_000.cfgt"  # (h, w, d)
//! intrinsics = [fx, fy, cx, cy]
//! pose = [16 numbers, row-major camera-to-world]
//!
//! [anchor]
//! min = [x, y, z]
//! max = [x, y, z]
//! vector = "anchor.cfgt"          # (d,)
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub frame_id: String,
    pub depth: PathBuf,
    pub features: PathBuf,
    pub intrinsics: [f64; 4],
    pub pose: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorEntry {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub vector: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxel_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rope_base: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fourier_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fourier_weights: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 3]>,
    #[serde(default)]
    pub frames: Vec<FrameEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<AnchorEntry>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl SceneManifest {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest: SceneManifest =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        manifest.base_dir = base_dir.into();
        if manifest.fourier_seed.is_some() && manifest.fourier_weights.is_some() {
            return Err(Error::InvalidConfig(
                "set at most one of `fourier_seed` and `fourier_weights`".into(),
            ));
        }
        for f in &manifest.frames {
            if f.pose.len() != 16 {
                return Err(Error::InvalidConfig(format!(
                    "frame `{}`: pose needs 16 numbers, got {}",
                    f.frame_id,
                    f.pose.len()
                )));
            }
        }
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, base).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
        voxel_size = 0.25
        fourier_seed = 3

        [[frames]]
        frame_id = "a"
        depth = "d.cfgt"
        features = "f.cfgt"
        intrinsics = [1.0, 1.0, 0.0, 0.0]
        pose = [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1]
    "#;

    #[test]
    fn parses_and_resolves() {
        let m = SceneManifest::from_toml_str(TEXT, "/scenes/x").unwrap();
        assert_eq!(m.voxel_size, Some(0.25));
        assert_eq!(m.max_tokens, None);
        assert_eq!(m.frames.len(), 1);
        assert_eq!(m.resolve(&m.frames[0].depth), PathBuf::from("/scenes/x/d.cfgt"));
        assert_eq!(m.resolve(Path::new("/abs/f")), PathBuf::from("/abs/f"));
    }

    #[test]
    fn toml_round_trip() {
        let m = SceneManifest::from_toml_str(TEXT, "").unwrap();
        let again = SceneManifest::from_toml_str(&m.to_toml_string(), "").unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn rejects_bad_manifests() {
        let both = format!("fourier_weights = \"w.cfgt\"\n{TEXT}");
        assert!(SceneManifest::from_toml_str(&both, "").is_err());
        let short_pose = TEXT.replace("0, 0, 0, 1]", "0, 0, 1]");
        assert!(SceneManifest::from_toml_str(&short_pose, "").is_err());
        let unknown = format!("colour = 1\n{TEXT}");
        assert!(SceneManifest::from_toml_str(&unknown, "").is_err());
    }
}
