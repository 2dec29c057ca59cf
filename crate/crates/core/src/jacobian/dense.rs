//! Dense Jacobians for small scenes, used to check the cached products.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rasterizer::{project_with_jacobian, render, RenderOptions, SplatVec};
use crate::residuals::ResidualBundle;
use crate::scene::{Camera, GaussianScene};

/// Upper bound on `rows × columns` of the residual Jacobian.
pub const DENSE_ORACLE_LIMIT: usize = 10_000_000;

#[derive(Debug, Clone)]
pub struct DenseJacobianOracle {
    /// `∂c_slot/∂x_k`, `3·pixels × M`, columns attribute-major.
    pub color: DMatrix<f64>,
    /// `∂r_i/∂x_k` with rows ordered like `F`.
    pub residual: DMatrix<f64>,
}

/// Builds both Jacobians by walking every ray explicitly (no cache).
pub fn dense_jacobian(
    scene: &GaussianScene,
    camera: &Camera,
    bundle: &ResidualBundle,
    options: &RenderOptions,
) -> Result<DenseJacobianOracle> {
    if bundle.width != camera.width || bundle.height != camera.height {
        return Err(Error::SizeMismatch(
            bundle.width,
            bundle.height,
            camera.width,
            camera.height,
        ));
    }
    let m = scene.param_count();
    let g_count = scene.len();
    let p = scene.params_per_gaussian();
    let rows = bundle.residual_count();
    if rows * m > DENSE_ORACLE_LIMIT {
        return Err(Error::OracleTooLarge {
            entries: rows * m,
            limit: DENSE_ORACLE_LIMIT,
        });
    }
    let (_, traversals) = render(scene, camera, options)?;
    let projected: Vec<_> = scene
        .gaussians
        .iter()
        .enumerate()
        .map(|(id, g)| project_with_jacobian(g, id, scene.sh_degree, camera, options))
        .collect();

    let slots = 3 * camera.pixel_count();
    let mut color = DMatrix::zeros(slots, m);
    let mut row = vec![0.0; p];
    for t in &traversals {
        let (px, py) = camera.pixel_center(t.pixel);
        for (k, step) in t.steps.iter().enumerate() {
            let (splat, jac) = projected[step.gaussian_id]
                .as_ref()
                .expect("traversed splats are visible");
            let partials = if step.clamped {
                [0.0; 6]
            } else {
                splat.alpha_partials(&splat.sample(px, py))
            };
            for ch in 0..3 {
                let behind: f64 = t.steps[k + 1..]
                    .iter()
                    .map(|s| s.color[ch] * s.alpha * s.transmittance)
                    .sum::<f64>()
                    + scene.background[ch] * t.final_transmittance;
                let dc_dalpha = step.color[ch] * step.transmittance - behind / (1.0 - step.alpha);
                let mut cot = SplatVec::default();
                cot.add_alpha_part(dc_dalpha, &partials);
                cot.color[ch] = step.alpha * step.transmittance;
                row.iter_mut().for_each(|v| *v = 0.0);
                jac.pull_back(&cot, &mut row);
                for (a, v) in row.iter().enumerate() {
                    color[(3 * t.pixel + ch, a * g_count + step.gaussian_id)] += v;
                }
            }
        }
    }

    let mut residual = DMatrix::zeros(rows, m);
    for r in 0..rows {
        let (slot, d) = bundle.row_derivative(r);
        if d != 0.0 {
            residual.row_mut(r).copy_from(&(color.row(slot) * d));
        }
    }
    Ok(DenseJacobianOracle { color, residual })
}
