//! Dataset directory layout:
//!
//! ```text
//! manifest.json  scene.json  init.json  cameras.json
//! gt_000.pfm  gt_000.png  gt_001.pfm ...
//! ```

use std::path::{Path, PathBuf};

use gslm::rasterizer::{read_pfm, write_pfm, write_png};
use gslm::scene::{load_cameras, save_cameras, save_scene, Dataset, DatasetSpec, SyntheticDataset};
use gslm::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const TRUTH: &str = "scene.json";
pub const INIT: &str = "init.json";
pub const CAMERAS: &str = "cameras.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub spec: DatasetSpec,
    pub perturb: f64,
    pub images: Vec<String>,
}

pub fn image_name(view: usize, ext: &str) -> String {
    format!("gt_{view:03}.{ext}")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_dataset(
    dir: &Path,
    data: &SyntheticDataset,
    init: &gslm::scene::GaussianScene,
    manifest: &Manifest,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    save_scene(dir.join(TRUTH), &data.truth)?;
    save_scene(dir.join(INIT), init)?;
    save_cameras(dir.join(CAMERAS), &data.dataset.cameras)?;
    for (v, image) in data.dataset.images.iter().enumerate() {
        write_pfm(&dir.join(image_name(v, "pfm")), image)?;
        write_png(&dir.join(image_name(v, "png")), image)?;
    }
    write_json(&dir.join(MANIFEST), manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let cameras = load_cameras(dir.join(CAMERAS))?;
    let images = (0..cameras.len())
        .map(|v| read_pfm(&dir.join(image_name(v, "pfm"))))
        .collect::<Result<Vec<_>>>()?;
    for (v, (c, img)) in cameras.iter().zip(&images).enumerate() {
        if c.width != img.width || c.height != img.height {
            return Err(Error::Format {
                path: dir.join(image_name(v, "pfm")),
                message: format!(
                    "image is {}x{} but camera {v} is {}x{}",
                    img.width, img.height, c.width, c.height
                ),
            });
        }
    }
    Dataset::new(cameras, images)
}

pub fn init_path(dir: &Path) -> PathBuf {
    dir.join(INIT)
}
