use rayon::prelude::*;

use super::{CacheOrder, GradientCache};
use crate::error::{Error, Result};
use crate::rasterizer::SplatVec;
use crate::scene::{Layout, ParamVector};

fn check_params(p: &ParamVector, cache: &GradientCache) -> Result<()> {
    p.expect_layout(Layout::GaussianMajor)?;
    if p.gaussian_count() != cache.gaussian_count()
        || p.params_per_gaussian() != cache.params_per_gaussian()
    {
        return Err(Error::LengthMismatch {
            what: "parameter vector",
            expected: cache.param_count(),
            found: p.len(),
        });
    }
    Ok(())
}

fn check_slots(len: usize, cache: &GradientCache) -> Result<()> {
    if len != 3 * cache.pixel_count() {
        return Err(Error::LengthMismatch {
            what: "color-space vector",
            expected: 3 * cache.pixel_count(),
            found: len,
        });
    }
    Ok(())
}

/// `û = Jc p` in color space (length `3 · pixels`). `p` must be gaussian-major.
pub fn apply_j(p: &ParamVector, cache: &GradientCache) -> Result<Vec<f64>> {
    check_params(p, cache)?;
    let dy: Vec<Option<SplatVec>> = (0..cache.gaussian_count())
        .into_par_iter()
        .map(|g| {
            cache
                .jacobian(g)
                .map(|j| j.push_forward(p.gaussian_slice(g)))
        })
        .collect();
    let per_pixel: Vec<[f64; 3]> = (0..cache.pixel_count())
        .into_par_iter()
        .map(|pixel| {
            let mut u = [0.0; 3];
            cache.for_pixel_entries(pixel, |e| {
                let d = dy[e.gaussian as usize]
                    .as_ref()
                    .expect("cached gaussians are visible");
                let da = if e.clamped {
                    0.0
                } else {
                    let partials = cache.alpha_partials(e);
                    let part = d.alpha_part();
                    (0..6).map(|k| partials[k] * part[k]).sum::<f64>()
                };
                for ch in 0..3 {
                    u[ch] += e.dc_dalpha[ch] * da + e.dc_dcs * d.color[ch];
                }
            });
            u
        })
        .collect();
    Ok(per_pixel.into_iter().flatten().collect())
}

/// `u = û ⊙ grad_r_sq`.
pub fn weight_residuals(u_hat: &[f64], grad_r_sq: &[f64]) -> Result<Vec<f64>> {
    if u_hat.len() != grad_r_sq.len() {
        return Err(Error::LengthMismatch {
            what: "residual weights",
            expected: u_hat.len(),
            found: grad_r_sq.len(),
        });
    }
    Ok(u_hat.iter().zip(grad_r_sq).map(|(u, w)| u * w).collect())
}

/// Runs `block` for every Gaussian group in parallel and scatters the
/// per-Gaussian results into an attribute-major vector.
fn per_gaussian(cache: &GradientCache, block: impl Fn(usize, &mut [f64]) + Sync) -> ParamVector {
    let p = cache.params_per_gaussian();
    let g_count = cache.gaussian_count();
    let mut blocks = vec![0.0; g_count * p];
    blocks
        .par_chunks_mut(p.max(1))
        .enumerate()
        .for_each(|(g, out)| block(g, out));
    let mut result = ParamVector::zeros(Layout::AttributeMajor, g_count, p);
    let values = result.values_mut();
    for g in 0..g_count {
        for a in 0..p {
            values[a * g_count + g] = blocks[g * p + a];
        }
    }
    result
}

/// `g = Jcᵀ u` (attribute-major). Requires a gaussian-sorted cache; each
/// Gaussian's group is reduced sequentially.
pub fn apply_jt(u: &[f64], cache: &GradientCache) -> Result<ParamVector> {
    cache.expect_order(CacheOrder::GaussianSorted)?;
    check_slots(u.len(), cache)?;
    Ok(per_gaussian(cache, |g, out| {
        let Some(jac) = cache.jacobian(g) else { return };
        let mut cot = SplatVec::default();
        for e in cache.group(g) {
            let px = 3 * e.pixel as usize;
            cache.splat_cotangent(e, [u[px], u[px + 1], u[px + 2]], &mut cot);
        }
        jac.pull_back(&cot, out);
    }))
}

/// `diag(JᵀJ) = Σ_slots grad_r_sq · (∂c_slot/∂x)²` (attribute-major).
pub fn diag_jtj(cache: &GradientCache, grad_r_sq: &[f64]) -> Result<ParamVector> {
    cache.expect_order(CacheOrder::GaussianSorted)?;
    check_slots(grad_r_sq.len(), cache)?;
    let p = cache.params_per_gaussian();
    Ok(per_gaussian(cache, |g, out| {
        let Some(jac) = cache.jacobian(g) else { return };
        let mut row = vec![0.0; p];
        for e in cache.group(g) {
            let partials = cache.alpha_partials(e);
            for ch in 0..3 {
                let w = grad_r_sq[3 * e.pixel as usize + ch];
                if w == 0.0 {
                    continue;
                }
                let mut cot = SplatVec::default();
                cot.add_alpha_part(e.dc_dalpha[ch], &partials);
                cot.color[ch] = e.dc_dcs;
                row.iter_mut().for_each(|v| *v = 0.0);
                jac.pull_back(&cot, &mut row);
                for (o, r) in out.iter_mut().zip(&row) {
                    *o += w * r * r;
                }
            }
        }
    }))
}
