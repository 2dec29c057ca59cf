//! Scene representation: 3D Gaussians, pinhole cameras, flat parameter
//! vectors and the synthetic datasets used for desk-scale experiments.
//!
//! Every Gaussian owns `11 + 3(L+1)²` scalars laid out as
//!
//! ```text
//! [ px py pz | qw qx qy qz | log sx log sy log sz | opacity logit | sh[k][rgb] ... ]
//! ```
//!
//! Opacity and scale are stored in unconstrained form (logit and log) and the
//! quaternion is normalized only when the Gaussian is projected, so any real
//! vector is a valid parameter set.

mod io;
mod params;
mod synthetic;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_cameras, load_scene, save_cameras, save_scene, CameraRecord};
pub(crate) use params::flatten_unchecked;
pub use params::{flatten, sort_x, unflatten, unsort_x, Layout, ParamVector};
pub use synthetic::{
    make_synthetic_dataset, perturb, Dataset, DatasetSpec, PerturbScales, SyntheticDataset,
};

/// Offset of the position block inside one Gaussian's parameters.
pub const POSITION: usize = 0;
pub const ROTATION: usize = 3;
pub const LOG_SCALE: usize = 7;
pub const OPACITY: usize = 10;
/// Offset of the first spherical-harmonics coefficient.
pub const SH: usize = 11;
/// Number of parameters that influence the projected footprint.
pub const GEOMETRY_PARAMS: usize = 10;

pub const MAX_SH_DEGREE: usize = 3;

/// Number of SH basis functions for degree `l`.
pub fn sh_basis_count(sh_degree: usize) -> usize {
    (sh_degree + 1) * (sh_degree + 1)
}

pub fn params_per_gaussian(sh_degree: usize) -> usize {
    SH + 3 * sh_basis_count(sh_degree)
}

/// Parameter groups that share a learning rate / noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamClass {
    Position,
    Rotation,
    LogScale,
    Opacity,
    Sh,
}

impl ParamClass {
    pub fn of_attribute(attribute: usize) -> ParamClass {
        match attribute {
            a if a < ROTATION => ParamClass::Position,
            a if a < LOG_SCALE => ParamClass::Rotation,
            a if a < OPACITY => ParamClass::LogScale,
            OPACITY => ParamClass::Opacity,
            _ => ParamClass::Sh,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    #[serde(rename = "pos")]
    pub position: [f64; 3],
    /// Quaternion `(w, x, y, z)`, not necessarily normalized.
    #[serde(rename = "rot")]
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    /// SH coefficients, coefficient-major: `sh[3 * k + channel]`.
    pub sh: Vec<f64>,
}

impl Gaussian {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub(crate) fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.position
            .iter()
            .chain(&self.rotation)
            .chain(&self.log_scale)
            .chain(std::iter::once(&self.opacity_logit))
            .chain(&self.sh)
            .copied()
    }

    fn is_finite(&self) -> bool {
        self.params().all(f64::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianScene {
    pub sh_degree: usize,
    #[serde(rename = "background")]
    pub background: [f64; 3],
    pub gaussians: Vec<Gaussian>,
}

impl GaussianScene {
    pub fn new(sh_degree: usize, background: [f64; 3], gaussians: Vec<Gaussian>) -> Result<Self> {
        let scene = GaussianScene {
            sh_degree,
            background,
            gaussians,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn empty(sh_degree: usize, background: [f64; 3]) -> Self {
        GaussianScene {
            sh_degree,
            background,
            gaussians: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(Error::InvalidArgument(format!(
                "sh_degree {} exceeds {}",
                self.sh_degree, MAX_SH_DEGREE
            )));
        }
        let coeffs = 3 * sh_basis_count(self.sh_degree);
        for g in &self.gaussians {
            if g.sh.len() != coeffs {
                return Err(Error::LengthMismatch {
                    what: "sh coefficients",
                    expected: coeffs,
                    found: g.sh.len(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn params_per_gaussian(&self) -> usize {
        params_per_gaussian(self.sh_degree)
    }

    /// Total parameter count `M = G · (11 + 3(L+1)²)`.
    pub fn param_count(&self) -> usize {
        self.len() * self.params_per_gaussian()
    }

    pub fn is_finite(&self) -> bool {
        self.background.iter().all(|v| v.is_finite())
            && self.gaussians.iter().all(Gaussian::is_finite)
    }
}

/// Pinhole camera with an OpenCV-style frame: +z looks forward, +x right,
/// +y down. Pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let camera = Camera {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        camera.validate()?;
        Ok(camera)
    }

    /// Camera at `eye` looking at `target`. `up` only fixes the roll.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidCamera("up vector parallel to view".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Camera::new(
            rotation,
            translation,
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera(format!(
                "resolution {}x{}",
                self.width, self.height
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn pixel_center(&self, pixel: usize) -> (f64, f64) {
        let x = pixel % self.width;
        let y = pixel / self.width;
        (x as f64 + 0.5, y as f64 + 0.5)
    }
}
