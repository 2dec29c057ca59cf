use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{sh_basis_count, Camera, Gaussian, GaussianScene, ParamClass};
use crate::error::{Error, Result};
use crate::rasterizer::{render_image, Image, RenderOptions, SH_C0};

/// Posed images of one scene.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
}

impl Dataset {
    pub fn new(cameras: Vec<Camera>, images: Vec<Image>) -> Result<Self> {
        if cameras.len() != images.len() {
            return Err(Error::LengthMismatch {
                what: "dataset images",
                expected: cameras.len(),
                found: images.len(),
            });
        }
        for (c, i) in cameras.iter().zip(&images) {
            if (c.width, c.height) != (i.width, i.height) {
                return Err(Error::SizeMismatch(c.width, c.height, i.width, i.height));
            }
        }
        Ok(Dataset { cameras, images })
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub gaussian_count: usize,
    pub camera_count: usize,
    pub width: usize,
    pub height: usize,
    pub sh_degree: usize,
}

impl DatasetSpec {
    /// The 64×64, 100-Gaussian, 8-camera scene used by the convergence runs.
    pub fn bundled() -> Self {
        DatasetSpec {
            seed: 0,
            gaussian_count: 100,
            camera_count: 8,
            width: 64,
            height: 64,
            sh_degree: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub truth: GaussianScene,
    pub dataset: Dataset,
}

const CAMERA_DISTANCE: f64 = 4.0;
const SCENE_RADIUS: f64 = 1.0;

/// Random scene inside a unit ball, observed by cameras on a ring around it.
///
/// Scales are drawn with an anisotropy ratio of at most 2.5 per Gaussian so
/// that no projection degenerates to a line.
pub fn make_synthetic_dataset(spec: &DatasetSpec) -> Result<SyntheticDataset> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::DegenerateSpec(format!(
            "resolution {}x{}",
            spec.width, spec.height
        )));
    }
    if spec.gaussian_count == 0 || spec.camera_count == 0 {
        return Err(Error::DegenerateSpec(
            "gaussian and camera counts must be at least 1".into(),
        ));
    }
    if spec.sh_degree > super::MAX_SH_DEGREE {
        return Err(Error::DegenerateSpec(format!(
            "sh_degree {}",
            spec.sh_degree
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let coeffs = sh_basis_count(spec.sh_degree);
    let gaussians = (0..spec.gaussian_count)
        .map(|_| {
            // Uniform in the ball via rejection.
            let position = loop {
                let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                    break p.map(|v| v * SCENE_RADIUS);
                }
            };
            let axis = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            let angle = rng.random_range(0.0..PI);
            let q = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
            let base = rng.random_range(0.06f64.ln()..0.14f64.ln());
            let log_scale: [f64; 3] =
                std::array::from_fn(|_| base + rng.random_range(0.0..2.5f64.ln()));
            let opacity: f64 = rng.random_range(0.5..0.95);
            let mut sh = vec![0.0; 3 * coeffs];
            for ch in 0..3 {
                let color: f64 = rng.random_range(0.15..0.85);
                sh[ch] = (color - 0.5) / SH_C0;
            }
            for v in sh.iter_mut().skip(3) {
                *v = rng.random_range(-0.1..0.1);
            }
            Gaussian {
                position,
                rotation: [q.w, q.i, q.j, q.k],
                log_scale,
                opacity_logit: (opacity / (1.0 - opacity)).ln(),
                sh,
            }
        })
        .collect();
    let truth = GaussianScene::new(spec.sh_degree, [0.0; 3], gaussians)?;

    let focal = 1.1 * spec.width.max(spec.height) as f64;
    let cameras = (0..spec.camera_count)
        .map(|j| {
            let azimuth = 2.0 * PI * j as f64 / spec.camera_count as f64;
            let elevation = 0.35 * (3.0 * azimuth).sin();
            let eye = CAMERA_DISTANCE
                * Vector3::new(
                    elevation.cos() * azimuth.sin(),
                    elevation.sin(),
                    -elevation.cos() * azimuth.cos(),
                );
            Camera::look_at(
                eye,
                Vector3::zeros(),
                Vector3::new(0.0, 1.0, 0.0),
                focal,
                spec.width,
                spec.height,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let options = RenderOptions::default();
    let images = cameras
        .iter()
        .map(|c| render_image(&truth, c, &options))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        truth,
        dataset: Dataset::new(cameras, images)?,
    })
}

/// Per-class standard deviations (before multiplying by the magnitude).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbScales {
    pub position: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity_logit: f64,
    pub sh: f64,
}

impl Default for PerturbScales {
    fn default() -> Self {
        PerturbScales {
            position: 0.5,
            rotation: 1.0,
            log_scale: 1.0,
            opacity_logit: 2.0,
            sh: 2.0,
        }
    }
}

impl PerturbScales {
    pub fn for_class(&self, class: ParamClass) -> f64 {
        match class {
            ParamClass::Position => self.position,
            ParamClass::Rotation => self.rotation,
            ParamClass::LogScale => self.log_scale,
            ParamClass::Opacity => self.opacity_logit,
            ParamClass::Sh => self.sh,
        }
    }
}

/// Adds `magnitude · scale(class) · N(0, 1)` to every parameter.
pub fn perturb(
    scene: &GaussianScene,
    seed: u64,
    magnitude: f64,
    scales: &PerturbScales,
) -> Result<GaussianScene> {
    if !(magnitude >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "perturbation magnitude must be >= 0, got {magnitude}"
        )));
    }
    if magnitude == 0.0 {
        return Ok(scene.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = |class: ParamClass| {
        magnitude * scales.for_class(class) * rng.sample::<f64, _>(StandardNormal)
    };
    let mut out = scene.clone();
    for g in &mut out.gaussians {
        for v in &mut g.position {
            *v += noise(ParamClass::Position);
        }
        for v in &mut g.rotation {
            *v += noise(ParamClass::Rotation);
        }
        for v in &mut g.log_scale {
            *v += noise(ParamClass::LogScale);
        }
        g.opacity_logit += noise(ParamClass::Opacity);
        for v in &mut g.sh {
            *v += noise(ParamClass::Sh);
        }
    }
    Ok(out)
}
