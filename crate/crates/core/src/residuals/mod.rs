//! Residuals of the photometric energy and the per-slot weights needed to
//! form Jacobian products in color space.
//!
//! For every pixel and channel (a "slot") with error `e = c - C`:
//!
//! ```text
//! r_abs  = sqrt(λ1 |e|)            d_abs  = ∂r_abs/∂c
//! r_ssim = sqrt(λ2 (1 - SSIM))     d_ssim = ∂r_ssim/∂c   (center pixel only)
//! ```
//!
//! so every residual row of `J` is `d · ∂c/∂x`, `JᵀJ = Jcᵀ diag(d_abs² + d_ssim²) Jc`
//! and `JᵀF = Jcᵀ (d_abs r_abs + d_ssim r_ssim)`.

mod ssim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rasterizer::Image;

pub use ssim::{reflect_101, ssim_center_grad, ssim_map, ssim_score, SsimWindow, SSIM_C1, SSIM_C2};

/// Guard on the denominators of the square-root derivatives.
pub const EPS_DEN: f64 = 1e-8;
pub const PSNR_CAP: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LossMode {
    #[default]
    #[serde(rename = "l1ssim")]
    L1Ssim,
    /// Plain differences `r = c - C`, no SSIM rows.
    #[serde(rename = "l2")]
    L2,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1ssim" => Ok(LossMode::L1Ssim),
            "l2" => Ok(LossMode::L2),
            other => Err(Error::Config(format!(
                "unknown loss mode {other:?} (expected l1ssim or l2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Loss {
    pub mode: LossMode,
    pub lambda1: f64,
    pub lambda2: f64,
    pub window: SsimWindow,
}

impl Default for Loss {
    fn default() -> Self {
        Loss {
            mode: LossMode::L1Ssim,
            lambda1: 0.8,
            lambda2: 0.2,
            window: SsimWindow::default(),
        }
    }
}

impl Loss {
    pub fn l2() -> Self {
        Loss {
            mode: LossMode::L2,
            ..Loss::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be non-negative, got λ1={} λ2={}",
                self.lambda1, self.lambda2
            )));
        }
        self.window.validate()
    }

    fn uses_ssim(&self) -> bool {
        self.mode == LossMode::L1Ssim
    }
}

/// Residuals of one image. Slot `i` is pixel `i / 3`, channel `i % 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBundle {
    pub width: usize,
    pub height: usize,
    pub loss: Loss,
    /// `sqrt(λ1 |e|)`, or the signed error `e` in L2 mode.
    pub r_abs: Vec<f64>,
    pub d_abs: Vec<f64>,
    /// Empty in L2 mode.
    pub r_ssim: Vec<f64>,
    pub d_ssim: Vec<f64>,
    /// `(∂r_abs/∂c)² + (∂r_ssim/∂c)²`.
    pub grad_r_sq: Vec<f64>,
}

impl ResidualBundle {
    pub fn slot_count(&self) -> usize {
        self.r_abs.len()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn has_ssim_rows(&self) -> bool {
        !self.r_ssim.is_empty()
    }

    /// Number of rows of `F`.
    pub fn residual_count(&self) -> usize {
        self.r_abs.len() + self.r_ssim.len()
    }

    /// `F = [r_abs…, r_ssim…]`.
    pub fn residual_vector(&self) -> Vec<f64> {
        self.r_abs.iter().chain(&self.r_ssim).copied().collect()
    }

    /// Derivative of residual row `row` with respect to its slot's color.
    pub fn row_derivative(&self, row: usize) -> (usize, f64) {
        let n = self.slot_count();
        if row < n {
            (row, self.d_abs[row])
        } else {
            (row - n, self.d_ssim[row - n])
        }
    }

    /// `‖F‖²`.
    pub fn energy(&self) -> f64 {
        self.r_abs.iter().chain(&self.r_ssim).map(|r| r * r).sum()
    }

    /// Per-slot `Σ_rows d·r`, so that `JᵀF = Jcᵀ q`.
    pub fn gradient_weights(&self) -> Vec<f64> {
        (0..self.slot_count())
            .map(|i| {
                let mut q = self.d_abs[i] * self.r_abs[i];
                if self.has_ssim_rows() {
                    q += self.d_ssim[i] * self.r_ssim[i];
                }
                q
            })
            .collect()
    }

    /// `‖F + J v‖²` given `û = Jc v` in color space.
    pub fn model_energy(&self, u_hat: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, u) in u_hat.iter().enumerate() {
            let a = self.r_abs[i] + self.d_abs[i] * u;
            total += a * a;
            if self.has_ssim_rows() {
                let s = self.r_ssim[i] + self.d_ssim[i] * u;
                total += s * s;
            }
        }
        total
    }
}

fn check_pair(rendered: &Image, gt: &Image, loss: &Loss) -> Result<()> {
    rendered.same_size(gt)?;
    loss.validate()
}

pub fn compute_residuals(rendered: &Image, gt: &Image, loss: &Loss) -> Result<ResidualBundle> {
    check_pair(rendered, gt, loss)?;
    let n = rendered.rgb.len();
    let mut bundle = ResidualBundle {
        width: rendered.width,
        height: rendered.height,
        loss: *loss,
        r_abs: Vec::with_capacity(n),
        d_abs: Vec::with_capacity(n),
        r_ssim: Vec::new(),
        d_ssim: Vec::new(),
        grad_r_sq: Vec::with_capacity(n),
    };
    if !loss.uses_ssim() {
        for (c, g) in rendered.rgb.iter().zip(&gt.rgb) {
            bundle.r_abs.push(c - g);
            bundle.d_abs.push(1.0);
            bundle.grad_r_sq.push(1.0);
        }
        return Ok(bundle);
    }
    let (l1, l2) = (loss.lambda1, loss.lambda2);
    let (score, sgrad) = ssim::ssim_map_and_center_grad(rendered, gt, &loss.window)?;
    bundle.r_ssim.reserve(n);
    bundle.d_ssim.reserve(n);
    for i in 0..n {
        let e = rendered.rgb[i] - gt.rgb[i];
        let abs_e = e.abs();
        let r1 = (l1 * abs_e).sqrt();
        let d1 = e.signum() * (l1 / (4.0 * abs_e.max(EPS_DEN))).sqrt();
        let d1 = if e == 0.0 { 0.0 } else { d1 };
        let dissim = 1.0 - score[i];
        let r2 = (l2 * dissim.max(0.0)).sqrt();
        let d2 = -sgrad[i] * (l2 / (4.0 * dissim.max(EPS_DEN))).sqrt();
        bundle.r_abs.push(r1);
        bundle.d_abs.push(d1);
        bundle.r_ssim.push(r2);
        bundle.d_ssim.push(d2);
        bundle.grad_r_sq.push(d1 * d1 + d2 * d2);
    }
    Ok(bundle)
}

/// The per-slot squared color weights `(∂r/∂c)²` summed over both terms.
pub fn compute_grad_r_sq(rendered: &Image, gt: &Image, loss: &Loss) -> Result<Vec<f64>> {
    Ok(compute_residuals(rendered, gt, loss)?.grad_r_sq)
}

/// The energy alone, skipping the derivative work.
pub fn energy(rendered: &Image, gt: &Image, loss: &Loss) -> Result<f64> {
    check_pair(rendered, gt, loss)?;
    match loss.mode {
        LossMode::L2 => Ok(rendered
            .rgb
            .iter()
            .zip(&gt.rgb)
            .map(|(c, g)| (c - g) * (c - g))
            .sum()),
        LossMode::L1Ssim => {
            let map = ssim_map(rendered, gt, &loss.window)?;
            let l1: f64 = rendered
                .rgb
                .iter()
                .zip(&gt.rgb)
                .map(|(c, g)| (c - g).abs())
                .sum();
            let dssim: f64 = map.iter().map(|s| (1.0 - s).max(0.0)).sum();
            Ok(loss.lambda1 * l1 + loss.lambda2 * dssim)
        }
    }
}

pub fn mse(img: &Image, reference: &Image) -> Result<f64> {
    img.same_size(reference)?;
    let sum: f64 = img
        .rgb
        .iter()
        .zip(&reference.rgb)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / img.rgb.len() as f64)
}

/// PSNR for a unit dynamic range, capped at [`PSNR_CAP`].
pub fn psnr(img: &Image, reference: &Image) -> Result<f64> {
    let m = mse(img, reference)?;
    if m < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// One evaluation of a model against a set of images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: usize,
    pub time_s: f64,
    pub energy: f64,
    pub psnr: f64,
    pub ssim: f64,
}
