//! JSON scene and camera files.
//!
//! Scene: `{"sh_degree", "background", "gaussians": [{"pos", "rot", "log_scale",
//! "opacity_logit", "sh"}]}`. Cameras: a list of `{"world_to_camera"` (row-major
//! 3×4), `"fx", "fy", "cx", "cy", "width", "height"}`. Floats are written in
//! shortest round-trip form, so save/load is bit-exact.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Camera, GaussianScene};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub world_to_camera: [f64; 12],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let mut m = [0.0; 12];
        for r in 0..3 {
            for k in 0..3 {
                m[4 * r + k] = c.rotation[(r, k)];
            }
            m[4 * r + 3] = c.translation[r];
        }
        CameraRecord {
            world_to_camera: m,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl TryFrom<&CameraRecord> for Camera {
    type Error = Error;

    fn try_from(r: &CameraRecord) -> Result<Camera> {
        let m = &r.world_to_camera;
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        Camera::new(
            rotation,
            translation,
            r.fx,
            r.fy,
            r.cx,
            r.cy,
            r.width,
            r.height,
        )
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

pub fn save_scene(path: impl AsRef<Path>, scene: &GaussianScene) -> Result<()> {
    write_json(path.as_ref(), scene)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let path = path.as_ref();
    let scene: GaussianScene = read_json(path)?;
    scene.validate().map_err(|e| Error::format(path, e))?;
    Ok(scene)
}

pub fn save_cameras(path: impl AsRef<Path>, cameras: &[Camera]) -> Result<()> {
    let records: Vec<CameraRecord> = cameras.iter().map(CameraRecord::from).collect();
    write_json(path.as_ref(), &records)
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let records: Vec<CameraRecord> = read_json(path)?;
    records
        .iter()
        .map(|r| Camera::try_from(r).map_err(|e| Error::format(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian;

    #[test]
    fn scene_json_round_trip_is_bit_exact() {
        let scene = GaussianScene::new(
            1,
            [0.1, 1.0 / 3.0, 0.0],
            vec![Gaussian {
                position: [0.1 + 0.2, -1e-300, std::f64::consts::PI],
                rotation: [1.0, 1e-17, -0.25, 7.0 / 9.0],
                log_scale: [-std::f64::consts::LN_10, -1.0, 0.5],
                opacity_logit: 0.123_456_789_012_345_68,
                sh: (0..12).map(|i| (i as f64).sqrt() / 7.0).collect(),
            }],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        save_scene(&path, &scene).unwrap();
        let back = load_scene(&path).unwrap();
        assert_eq!(back, scene);
        for (a, b) in back.gaussians[0].sh.iter().zip(&scene.gaussians[0].sh) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn camera_json_round_trip() {
        let cam = Camera::look_at(
            Vector3::new(0.3, -1.0, -4.0),
            Vector3::new(0.0, 0.1, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            61.7,
            40,
            30,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cameras.json");
        save_cameras(&path, std::slice::from_ref(&cam)).unwrap();
        assert_eq!(load_cameras(&path).unwrap(), vec![cam]);
    }

    #[test]
    fn malformed_scene_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, r#"{"sh_degree": 1, "background": [0,0,0], "gaussians": [{"pos":[0,0,0],"rot":[1,0,0,0],"log_scale":[0,0,0],"opacity_logit":0,"sh":[0.0]}]}"#).unwrap();
        let err = load_scene(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }
}
