//! Forward rendering: SH color evaluation, EWA splat projection, depth
//! sorting and front-to-back alpha blending at pixel centers.
//!
//! A pixel's color is `Σ_s c_s α_s T_s + T_final · background` with
//! `T_s = Π_{j<s} (1 - α_j)`. Contributions with `α < alpha_min` are skipped
//! and the ray stops before a splat would push `T` under
//! `transmittance_min`. The traversal records kept by [`render`] are exactly
//! the `(splat, α, T)` triples the gradient cache is built from.

mod image_io;
mod projection;
mod render;
mod sh;

use serde::{Deserialize, Serialize};

pub use image_io::{read_pfm, write_pfm, write_png};
pub use projection::{
    project, project_with_jacobian, Splat2D, SplatJacobian, SplatSample, SplatVec,
};
pub(crate) use render::blend_pixel;
pub use render::{
    project_scene, project_scene_with_jacobians, render, render_image, PixelTraversal,
    ProjectedScene, TraversalStep,
};
pub use sh::{eval_sh, eval_sh_raw, sh_basis, ShBasis, SH_C0};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub transmittance_min: f64,
    /// Added to the diagonal of every screen-space covariance (px²).
    pub lowpass: f64,
    pub near_plane: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            transmittance_min: 1e-4,
            lowpass: 0.3,
            near_plane: 0.2,
        }
    }
}

/// Row-major RGB image; pixel `i` channel `ch` is `rgb[3 * i + ch]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            rgb: vec![0.0; 3 * width * height],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut rgb = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            for x in 0..width {
                for ch in 0..3 {
                    rgb.push(f(x, y, ch));
                }
            }
        }
        Image { width, height, rgb }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, pixel: usize) -> [f64; 3] {
        [
            self.rgb[3 * pixel],
            self.rgb[3 * pixel + 1],
            self.rgb[3 * pixel + 2],
        ]
    }

    #[inline]
    pub fn set(&mut self, pixel: usize, color: [f64; 3]) {
        self.rgb[3 * pixel..3 * pixel + 3].copy_from_slice(&color);
    }

    pub fn same_size(&self, other: &Image) -> crate::Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(crate::Error::SizeMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_synthetic_dataset, DatasetSpec, GaussianScene};
    use proptest::prelude::*;

    fn small_scene() -> (GaussianScene, crate::scene::Camera) {
        let data = make_synthetic_dataset(&DatasetSpec {
            seed: 11,
            gaussian_count: 15,
            camera_count: 1,
            width: 24,
            height: 20,
            sh_degree: 1,
        })
        .unwrap();
        (data.truth, data.dataset.cameras[0].clone())
    }

    #[test]
    fn traversals_reproduce_image_and_transmittance_decreases() {
        let (scene, cam) = small_scene();
        let (image, traversals) = render(&scene, &cam, &RenderOptions::default()).unwrap();
        for t in &traversals {
            let c = t.composite(scene.background);
            let expected = image.get(t.pixel);
            for ch in 0..3 {
                assert!((c[ch] - expected[ch]).abs() < 1e-12);
            }
            let mut prev = 1.0;
            for (i, s) in t.steps.iter().enumerate() {
                if i == 0 {
                    assert_eq!(s.transmittance, 1.0);
                }
                assert!(s.transmittance <= prev && s.transmittance > 0.0);
                assert!(s.alpha > 0.0 && s.alpha < 1.0);
                prev = s.transmittance;
            }
            assert!(t.final_transmittance <= prev && t.final_transmittance > 0.0);
        }
        assert!(traversals.iter().any(|t| t.steps.len() > 1));
    }

    #[test]
    fn transparent_scene_shows_background() {
        let (mut scene, cam) = small_scene();
        scene.background = [0.2, 0.4, 0.6];
        for g in &mut scene.gaussians {
            g.opacity_logit = -40.0;
        }
        let image = render_image(&scene, &cam, &RenderOptions::default()).unwrap();
        for p in 0..image.pixel_count() {
            assert_eq!(image.get(p), [0.2, 0.4, 0.6]);
        }
    }

    #[test]
    fn render_and_render_image_agree() {
        let (scene, cam) = small_scene();
        let options = RenderOptions::default();
        let (a, _) = render(&scene, &cam, &options).unwrap();
        let b = render_image(&scene, &cam, &options).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn rendering_ignores_gaussian_order(seed in 0u64..1000) {
            let (scene, cam) = small_scene();
            let mut permuted = scene.clone();
            let n = permuted.gaussians.len();
            // Deterministic shuffle driven by the seed.
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                permuted.gaussians.swap(i, j);
            }
            let options = RenderOptions::default();
            let a = render_image(&scene, &cam, &options).unwrap();
            let b = render_image(&permuted, &cam, &options).unwrap();
            prop_assert_eq!(a.rgb, b.rgb);
        }
    }
}
