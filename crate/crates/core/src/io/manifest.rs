//! Run and camera manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::scalar::Real;

/// Provenance record written atomically at the end of every command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub command: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<PathBuf>,
}

pub fn config_hash(config_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    format!("{:x}", hasher.finalize())
}

impl RunManifest {
    /// Write via a temp file + rename so a crash never leaves a partial
    /// manifest.
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))
    }
}

/// One text line per camera: intrinsics then the 4x4 world-to-camera matrix
/// row-major.
pub fn write_camera_manifest<T: Real>(path: &Path, cameras: &[Camera<T>]) -> Result<()> {
    let mut text = String::from("# id fx fy cx cy width height extrinsic_4x4_row_major\n");
    for (i, cam) in cameras.iter().enumerate() {
        let mut line = format!(
            "{} {} {} {} {} {} {}",
            i,
            cam.fx.f64(),
            cam.fy.f64(),
            cam.cx.f64(),
            cam.cy.f64(),
            cam.width,
            cam.height
        );
        for r in 0..3 {
            for c in 0..3 {
                line.push_str(&format!(" {}", cam.rotation[(r, c)].f64()));
            }
            line.push_str(&format!(" {}", cam.translation[r].f64()));
        }
        line.push_str(" 0 0 0 1\n");
        text.push_str(&line);
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_roundtrip_and_hash_stability() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        let m = RunManifest {
            config_hash: config_hash("seed = 1"),
            seed: 1,
            version: "0.1.0".into(),
            command: "train".into(),
            started_at: "2026-01-01T00:00:00Z".into(),
            finished_at: "2026-01-01T00:01:00Z".into(),
            outputs: vec![PathBuf::from("model.ply")],
        };
        m.write(&p).unwrap();
        let back = RunManifest::read(&p).unwrap();
        assert_eq!(back.config_hash, m.config_hash);
        assert_eq!(config_hash("seed = 1"), config_hash("seed = 1"));
        assert_ne!(config_hash("seed = 1"), config_hash("seed = 2"));
        assert!(!dir.path().join("manifest.json.tmp").exists());
    }

    #[test]
    fn camera_manifest_has_one_line_per_camera() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cameras.txt");
        let cams: Vec<Camera<f64>> = (0..3)
            .map(|_| crate::scene::testgen::front_camera(16, 2.0))
            .collect();
        write_camera_manifest(&p, &cams).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4); // header + 3 cameras
        assert!(text.lines().nth(1).unwrap().ends_with("0 0 0 1"));
    }
}
