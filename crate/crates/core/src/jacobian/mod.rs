//! The gradient cache and matrix-free products with the color Jacobian.
//!
//! For a pixel with front-to-back splats `s` the cache stores `T_s`,
//! `∂c/∂α_s` and `∂c/∂c_s = α_s T_s`. Together with the per-Gaussian
//! projection Jacobians `∂y/∂x` this is enough to apply `Jc = ∂c/∂x` and its
//! transpose entry by entry without walking rays again:
//!
//! ```text
//! (Jc p)_pixel  = Σ_entries ∂c/∂α_s · (∂α_s/∂y · dy_g) + ∂c/∂c_s · dy_g.color
//! (Jcᵀ u)_g     = (∂y/∂x)ᵀ Σ_entries of g [ (∂α_s/∂y)ᵀ (∂c/∂α_s · u_pixel), ∂c/∂c_s · u_pixel ]
//! ```
//!
//! Residual weighting is split out: `JᵀJ p = Jcᵀ (grad_r_sq ⊙ Jc p)` and
//! `JᵀF = Jcᵀ q` with the per-slot weights of
//! [`ResidualBundle::gradient_weights`](crate::residuals::ResidualBundle::gradient_weights).

mod dense;
mod dump;
mod products;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rasterizer::{
    blend_pixel, project_scene_with_jacobians, Image, RenderOptions, Splat2D, SplatJacobian,
    SplatVec,
};
use crate::residuals::ResidualBundle;
use crate::scene::{Camera, GaussianScene, Layout, ParamVector};

pub use dense::{dense_jacobian, DenseJacobianOracle, DENSE_ORACLE_LIMIT};
pub use dump::read_dump;
pub use products::{apply_j, apply_jt, diag_jtj, weight_residuals};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CacheOrder {
    PixelSorted,
    GaussianSorted,
}

/// Blending state of one splat along one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheEntry {
    pub pixel: u32,
    pub gaussian: u32,
    /// Transmittance in front of the splat.
    pub transmittance: f64,
    /// `∂c/∂α_s` per channel.
    pub dc_dalpha: [f64; 3],
    /// `∂c/∂c_s = α_s T_s`.
    pub dc_dcs: f64,
    pub alpha: f64,
    /// Alpha hit the upper clamp, so it does not depend on the splat shape.
    pub clamped: bool,
}

#[derive(Debug, Clone)]
pub struct GradientCache {
    view: usize,
    order: CacheOrder,
    entries: Vec<CacheEntry>,
    /// Group boundaries for the current order: pixels or Gaussians.
    offsets: Vec<usize>,
    pixel_offsets: Vec<usize>,
    /// Entry indices in pixel order; empty while pixel sorted.
    pixel_sequence: Vec<u32>,
    width: usize,
    height: usize,
    params_per_gaussian: usize,
    splats: Vec<Option<Splat2D>>,
    jacobians: Vec<Option<SplatJacobian>>,
}

impl GradientCache {
    pub fn view(&self) -> usize {
        self.view
    }

    pub fn order(&self) -> CacheOrder {
        self.order
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn gaussian_count(&self) -> usize {
        self.splats.len()
    }

    pub fn params_per_gaussian(&self) -> usize {
        self.params_per_gaussian
    }

    pub fn param_count(&self) -> usize {
        self.gaussian_count() * self.params_per_gaussian
    }

    /// Entries of group `i` in the current order.
    pub fn group(&self, i: usize) -> &[CacheEntry] {
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn splat(&self, gaussian: usize) -> Option<&Splat2D> {
        self.splats[gaussian].as_ref()
    }

    /// Approximate heap footprint.
    pub fn memory_bytes(&self) -> usize {
        use std::mem::size_of;
        self.entries.len() * size_of::<CacheEntry>()
            + (self.offsets.len() + self.pixel_offsets.len()) * size_of::<usize>()
            + self.pixel_sequence.len() * size_of::<u32>()
            + self.splats.len()
                * (size_of::<Option<Splat2D>>() + size_of::<Option<SplatJacobian>>())
    }

    pub(crate) fn expect_order(&self, expected: CacheOrder) -> Result<()> {
        if self.order != expected {
            return Err(Error::WrongCacheOrder {
                expected,
                found: self.order,
            });
        }
        Ok(())
    }

    /// Calls `f` on the entries of `pixel`, front to back, in either order.
    #[inline]
    pub(crate) fn for_pixel_entries(&self, pixel: usize, mut f: impl FnMut(&CacheEntry)) {
        let range = self.pixel_offsets[pixel]..self.pixel_offsets[pixel + 1];
        match self.order {
            CacheOrder::PixelSorted => self.entries[range].iter().for_each(f),
            CacheOrder::GaussianSorted => {
                for &i in &self.pixel_sequence[range] {
                    f(&self.entries[i as usize]);
                }
            }
        }
    }

    /// `∂α/∂(mean, conic, opacity)` for an entry, zero when clamped.
    #[inline]
    pub(crate) fn alpha_partials(&self, entry: &CacheEntry) -> [f64; 6] {
        if entry.clamped {
            return [0.0; 6];
        }
        let splat = self.splats[entry.gaussian as usize]
            .as_ref()
            .expect("cached gaussians are visible");
        let (px, py) = pixel_center(entry.pixel as usize, self.width);
        splat.alpha_partials(&splat.sample(px, py))
    }

    /// Cotangent on the splat attributes from color cotangent `u` at the
    /// entry's pixel.
    #[inline]
    pub(crate) fn splat_cotangent(&self, entry: &CacheEntry, u: [f64; 3], out: &mut SplatVec) {
        let s = entry.dc_dalpha[0] * u[0] + entry.dc_dalpha[1] * u[1] + entry.dc_dalpha[2] * u[2];
        if s != 0.0 && !entry.clamped {
            out.add_alpha_part(s, &self.alpha_partials(entry));
        }
        for ch in 0..3 {
            out.color[ch] += entry.dc_dcs * u[ch];
        }
    }

    pub(crate) fn jacobian(&self, gaussian: usize) -> Option<&SplatJacobian> {
        self.jacobians[gaussian].as_ref()
    }
}

#[inline]
fn pixel_center(pixel: usize, width: usize) -> (f64, f64) {
    ((pixel % width) as f64 + 0.5, (pixel / width) as f64 + 0.5)
}

/// A view rendered with everything needed to linearize it.
pub(crate) struct TracedView {
    pub image: Image,
    pub cache: GradientCache,
}

/// Renders `scene` and records the cache in pixel order.
pub(crate) fn trace_view(
    scene: &GaussianScene,
    camera: &Camera,
    view: usize,
    options: &RenderOptions,
) -> Result<TracedView> {
    let projected = project_scene_with_jacobians(scene, camera, options)?;
    let sorted = projected.sorted();
    let per_pixel: Vec<([f64; 3], Vec<CacheEntry>)> = (0..camera.pixel_count())
        .into_par_iter()
        .map(|pixel| {
            let (px, py) = camera.pixel_center(pixel);
            let mut steps: Vec<(usize, [f64; 3], f64, f64, bool)> = Vec::new();
            let (color, t_final) = blend_pixel(
                &sorted,
                px,
                py,
                options,
                scene.background,
                |s, sample, a, t| {
                    steps.push((
                        s.gaussian_id,
                        s.color,
                        a,
                        t,
                        sample.alpha_raw > options.alpha_max,
                    ))
                },
            );
            // Back to front: acc holds the color contributed behind splat s.
            let mut acc = scene.background.map(|b| b * t_final);
            let mut entries = vec![
                CacheEntry {
                    pixel: 0,
                    gaussian: 0,
                    transmittance: 0.0,
                    dc_dalpha: [0.0; 3],
                    dc_dcs: 0.0,
                    alpha: 0.0,
                    clamped: false,
                };
                steps.len()
            ];
            for (k, &(id, c, alpha, t, clamped)) in steps.iter().enumerate().rev() {
                let mut dc_dalpha = [0.0; 3];
                for ch in 0..3 {
                    dc_dalpha[ch] = t * c[ch] - acc[ch] / (1.0 - alpha);
                    acc[ch] += c[ch] * alpha * t;
                }
                entries[k] = CacheEntry {
                    pixel: pixel as u32,
                    gaussian: id as u32,
                    transmittance: t,
                    dc_dalpha,
                    dc_dcs: alpha * t,
                    alpha,
                    clamped,
                };
            }
            (color, entries)
        })
        .collect();

    let mut image = Image::new(camera.width, camera.height);
    let total: usize = per_pixel.iter().map(|(_, e)| e.len()).sum();
    let mut entries = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(per_pixel.len() + 1);
    offsets.push(0);
    for (pixel, (color, e)) in per_pixel.into_iter().enumerate() {
        image.set(pixel, color);
        entries.extend(e);
        offsets.push(entries.len());
    }
    let cache = GradientCache {
        view,
        order: CacheOrder::PixelSorted,
        entries,
        pixel_offsets: offsets.clone(),
        offsets,
        pixel_sequence: Vec::new(),
        width: camera.width,
        height: camera.height,
        params_per_gaussian: scene.params_per_gaussian(),
        splats: projected.splats,
        jacobians: projected.jacobians,
    };
    Ok(TracedView { image, cache })
}

/// `b = -JᵀF` for one view, accumulated over the pixel-sorted entries.
pub(crate) fn gradient_rhs(cache: &GradientCache, bundle: &ResidualBundle) -> ParamVector {
    let g_count = cache.gaussian_count();
    let p = cache.params_per_gaussian;
    let q = bundle.gradient_weights();
    let mut cot = vec![SplatVec::default(); g_count];
    for pixel in 0..cache.pixel_count() {
        let u = [q[3 * pixel], q[3 * pixel + 1], q[3 * pixel + 2]];
        if u == [0.0; 3] {
            continue;
        }
        cache.for_pixel_entries(pixel, |e| {
            cache.splat_cotangent(e, u, &mut cot[e.gaussian as usize])
        });
    }
    let mut b = ParamVector::zeros(Layout::AttributeMajor, g_count, p);
    let mut block = vec![0.0; p];
    for (g, c) in cot.iter().enumerate() {
        let Some(jac) = cache.jacobian(g) else {
            continue;
        };
        block.iter_mut().for_each(|v| *v = 0.0);
        jac.pull_back(c, &mut block);
        for (a, v) in block.iter().enumerate() {
            let i = b.index(g, a);
            b.values_mut()[i] = -v;
        }
    }
    b
}

fn check_bundle(camera: &Camera, bundle: &ResidualBundle) -> Result<()> {
    if bundle.width != camera.width || bundle.height != camera.height {
        return Err(Error::SizeMismatch(
            bundle.width,
            bundle.height,
            camera.width,
            camera.height,
        ));
    }
    Ok(())
}

/// Builds the pixel-sorted cache of one view and `b = -JᵀF` (attribute-major).
///
/// `bundle` must come from rendering `scene` through `camera` with the same
/// options, since the cache replays that traversal.
pub fn build_cache(
    scene: &GaussianScene,
    camera: &Camera,
    view: usize,
    bundle: &ResidualBundle,
    options: &RenderOptions,
) -> Result<(ParamVector, GradientCache)> {
    check_bundle(camera, bundle)?;
    let traced = trace_view(scene, camera, view, options)?;
    let b = gradient_rhs(&traced.cache, bundle);
    Ok((b, traced.cache))
}

/// Stable counting sort of a pixel-sorted cache by Gaussian id.
pub fn sort_cache_by_gaussians(cache: GradientCache) -> Result<GradientCache> {
    cache.expect_order(CacheOrder::PixelSorted)?;
    let g_count = cache.gaussian_count();
    let mut offsets = vec![0usize; g_count + 1];
    for e in &cache.entries {
        offsets[e.gaussian as usize + 1] += 1;
    }
    for g in 0..g_count {
        offsets[g + 1] += offsets[g];
    }
    let mut cursor = offsets.clone();
    let mut position = vec![0u32; cache.entries.len()];
    let mut sorted = vec![None; cache.entries.len()];
    for (i, e) in cache.entries.iter().enumerate() {
        let slot = &mut cursor[e.gaussian as usize];
        position[i] = *slot as u32;
        sorted[*slot] = Some(*e);
        *slot += 1;
    }
    Ok(GradientCache {
        order: CacheOrder::GaussianSorted,
        entries: sorted
            .into_iter()
            .map(|e| e.expect("every slot filled"))
            .collect(),
        offsets,
        pixel_sequence: position,
        ..cache
    })
}

/// Inverse of [`sort_cache_by_gaussians`].
pub fn sort_cache_by_pixels(cache: GradientCache) -> Result<GradientCache> {
    cache.expect_order(CacheOrder::GaussianSorted)?;
    let entries = cache
        .pixel_sequence
        .iter()
        .map(|&i| cache.entries[i as usize])
        .collect();
    Ok(GradientCache {
        order: CacheOrder::PixelSorted,
        entries,
        offsets: cache.pixel_offsets.clone(),
        pixel_sequence: Vec::new(),
        ..cache
    })
}
