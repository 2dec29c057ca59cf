use rayon::prelude::*;

use super::projection::{project, project_with_jacobian, Splat2D, SplatJacobian, SplatSample};
use super::{Image, RenderOptions};
use crate::error::{Error, Result};
use crate::scene::{Camera, GaussianScene};

/// One splat contributing to a pixel, in front-to-back order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraversalStep {
    pub gaussian_id: usize,
    pub alpha: f64,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
    pub color: [f64; 3],
    /// The alpha hit the `alpha_max` clamp; its gradient is zero.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelTraversal {
    pub pixel: usize,
    pub steps: Vec<TraversalStep>,
    pub final_transmittance: f64,
}

impl PixelTraversal {
    /// Re-evaluates the blending sum from the recorded steps.
    pub fn composite(&self, background: [f64; 3]) -> [f64; 3] {
        let mut c = [0.0; 3];
        for s in &self.steps {
            for ch in 0..3 {
                c[ch] += s.color[ch] * s.alpha * s.transmittance;
            }
        }
        for ch in 0..3 {
            c[ch] += background[ch] * self.final_transmittance;
        }
        c
    }
}

/// All Gaussians projected into one view, with the visible ones depth sorted.
#[derive(Debug, Clone)]
pub struct ProjectedScene {
    /// Indexed by gaussian id; `None` when culled.
    pub splats: Vec<Option<Splat2D>>,
    /// Present only when requested from [`project_scene_with_jacobians`].
    pub jacobians: Vec<Option<SplatJacobian>>,
    /// Visible gaussian ids sorted by `(depth, id)`.
    pub order: Vec<usize>,
}

impl ProjectedScene {
    pub fn sorted(&self) -> Vec<&Splat2D> {
        self.order
            .iter()
            .map(|&id| self.splats[id].as_ref().expect("sorted ids are visible"))
            .collect()
    }
}

fn check_inputs(scene: &GaussianScene, camera: &Camera) -> Result<()> {
    camera.validate()?;
    scene.validate()?;
    if !scene.is_finite() {
        return Err(Error::NonFinite("scene parameters"));
    }
    Ok(())
}

fn depth_order(splats: &[Option<Splat2D>]) -> Vec<usize> {
    let mut order: Vec<usize> = splats
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.as_ref().map(|_| i))
        .collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (splats[a].as_ref().unwrap(), splats[b].as_ref().unwrap());
        sa.depth.total_cmp(&sb.depth).then(a.cmp(&b))
    });
    order
}

pub fn project_scene(
    scene: &GaussianScene,
    camera: &Camera,
    options: &RenderOptions,
) -> Result<ProjectedScene> {
    check_inputs(scene, camera)?;
    let splats: Vec<Option<Splat2D>> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(id, g)| project(g, id, scene.sh_degree, camera, options))
        .collect();
    let order = depth_order(&splats);
    Ok(ProjectedScene {
        splats,
        jacobians: Vec::new(),
        order,
    })
}

pub fn project_scene_with_jacobians(
    scene: &GaussianScene,
    camera: &Camera,
    options: &RenderOptions,
) -> Result<ProjectedScene> {
    check_inputs(scene, camera)?;
    let (splats, jacobians): (Vec<_>, Vec<_>) = scene
        .gaussians
        .par_iter()
        .enumerate()
        .map(
            |(id, g)| match project_with_jacobian(g, id, scene.sh_degree, camera, options) {
                Some((s, j)) => (Some(s), Some(j)),
                None => (None, None),
            },
        )
        .unzip();
    let order = depth_order(&splats);
    Ok(ProjectedScene {
        splats,
        jacobians,
        order,
    })
}

/// Front-to-back blending of one pixel. `visit` sees every contributing
/// splat with its sample, blended alpha and the transmittance in front of it.
#[inline]
pub(crate) fn blend_pixel<F>(
    sorted: &[&Splat2D],
    px: f64,
    py: f64,
    options: &RenderOptions,
    background: [f64; 3],
    mut visit: F,
) -> ([f64; 3], f64)
where
    F: FnMut(&Splat2D, &SplatSample, f64, f64),
{
    let mut color = [0.0; 3];
    let mut transmittance = 1.0;
    for splat in sorted {
        if !splat.covers(px, py) {
            continue;
        }
        let sample = splat.sample(px, py);
        let alpha = sample.alpha_raw.min(options.alpha_max);
        if alpha < options.alpha_min {
            continue;
        }
        let next = transmittance * (1.0 - alpha);
        if next < options.transmittance_min {
            break;
        }
        for ch in 0..3 {
            color[ch] += splat.color[ch] * alpha * transmittance;
        }
        visit(splat, &sample, alpha, transmittance);
        transmittance = next;
    }
    for ch in 0..3 {
        color[ch] += background[ch] * transmittance;
    }
    (color, transmittance)
}

/// Renders an image and records the per-pixel traversals.
pub fn render(
    scene: &GaussianScene,
    camera: &Camera,
    options: &RenderOptions,
) -> Result<(Image, Vec<PixelTraversal>)> {
    let projected = project_scene(scene, camera, options)?;
    let sorted = projected.sorted();
    let per_pixel: Vec<([f64; 3], PixelTraversal)> = (0..camera.pixel_count())
        .into_par_iter()
        .map(|pixel| {
            let (px, py) = camera.pixel_center(pixel);
            let mut steps = Vec::new();
            let (color, t_final) = blend_pixel(
                &sorted,
                px,
                py,
                options,
                scene.background,
                |s, sample, a, t| {
                    steps.push(TraversalStep {
                        gaussian_id: s.gaussian_id,
                        alpha: a,
                        transmittance: t,
                        color: s.color,
                        clamped: sample.alpha_raw > options.alpha_max,
                    })
                },
            );
            (
                color,
                PixelTraversal {
                    pixel,
                    steps,
                    final_transmittance: t_final,
                },
            )
        })
        .collect();
    let mut image = Image::new(camera.width, camera.height);
    let mut traversals = Vec::with_capacity(per_pixel.len());
    for (pixel, (color, trav)) in per_pixel.into_iter().enumerate() {
        image.set(pixel, color);
        traversals.push(trav);
    }
    Ok((image, traversals))
}

/// Renders without keeping traversals.
pub fn render_image(
    scene: &GaussianScene,
    camera: &Camera,
    options: &RenderOptions,
) -> Result<Image> {
    let projected = project_scene(scene, camera, options)?;
    let sorted = projected.sorted();
    let colors: Vec<[f64; 3]> = (0..camera.pixel_count())
        .into_par_iter()
        .map(|pixel| {
            let (px, py) = camera.pixel_center(pixel);
            blend_pixel(&sorted, px, py, options, scene.background, |_, _, _, _| {}).0
        })
        .collect();
    let mut image = Image::new(camera.width, camera.height);
    for (pixel, c) in colors.into_iter().enumerate() {
        image.set(pixel, c);
    }
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rasterizer::SH_C0;
    use crate::scene::Gaussian;
    use nalgebra::{Matrix3, Vector3};

    fn camera(width: usize, height: usize) -> Camera {
        Camera::new(
            Matrix3::identity(),
            Vector3::zeros(),
            20.0,
            20.0,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
        )
        .unwrap()
    }

    /// SH DC coefficients giving exactly `color` (before clamping).
    fn dc(color: [f64; 3]) -> Vec<f64> {
        color.iter().map(|c| (c - 0.5) / SH_C0).collect()
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn splat_at(x: f64, y: f64, z: f64, opacity: f64, color: [f64; 3]) -> Gaussian {
        Gaussian {
            position: [x, y, z],
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [-1.0; 3],
            opacity_logit: logit(opacity),
            sh: dc(color),
        }
    }

    #[test]
    fn empty_scene_renders_background() {
        let scene = GaussianScene::empty(0, [0.0; 3]);
        let (image, trav) = render(&scene, &camera(4, 3), &RenderOptions::default()).unwrap();
        assert!(image.rgb.iter().all(|&v| v == 0.0));
        assert!(trav.iter().all(|t| t.steps.is_empty()));
    }

    #[test]
    fn single_splat_at_pixel_center() {
        // 1x1 image whose only pixel center is the principal point.
        let scene = GaussianScene::new(
            0,
            [0.0; 3],
            vec![splat_at(0.0, 0.0, 5.0, 0.5, [1.0, 0.0, 0.0])],
        )
        .unwrap();
        let (image, _) = render(&scene, &camera(1, 1), &RenderOptions::default()).unwrap();
        let c = image.get(0);
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert!(c[1].abs() < 1e-12 && c[2].abs() < 1e-12);
    }

    #[test]
    fn two_stacked_splats() {
        let scene = GaussianScene::new(
            0,
            [0.0; 3],
            vec![
                splat_at(0.0, 0.0, 6.0, 0.5, [0.0, 1.0, 0.0]),
                splat_at(0.0, 0.0, 5.0, 0.5, [1.0, 0.0, 0.0]),
            ],
        )
        .unwrap();
        let (image, trav) = render(&scene, &camera(1, 1), &RenderOptions::default()).unwrap();
        let c = image.get(0);
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert!((c[1] - 0.25).abs() < 1e-12);
        assert!(c[2].abs() < 1e-12);
        assert_eq!(trav[0].steps[0].gaussian_id, 1);
        assert_eq!(trav[0].steps[0].transmittance, 1.0);
        assert!((trav[0].steps[1].transmittance - 0.5).abs() < 1e-15);
    }

    #[test]
    fn alpha_is_clamped_and_termination_applies() {
        let mut scene = GaussianScene::new(
            0,
            [1.0; 3],
            (0..4)
                .map(|i| splat_at(0.0, 0.0, 5.0 + i as f64, 0.9999, [0.2; 3]))
                .collect(),
        )
        .unwrap();
        scene.gaussians[0].opacity_logit = 20.0;
        let (image, trav) = render(&scene, &camera(1, 1), &RenderOptions::default()).unwrap();
        let t = &trav[0];
        assert!(t.steps[0].clamped);
        assert_eq!(t.steps[0].alpha, 0.99);
        // T after two 0.99 steps is 1e-4, the third would fall below it.
        assert_eq!(t.steps.len(), 2);
        assert!(t.final_transmittance >= 1e-4 * (1.0 - 1e-12));
        let c = t.composite(scene.background);
        assert!((c[0] - image.get(0)[0]).abs() < 1e-15);
    }

    #[test]
    fn ties_break_by_gaussian_id() {
        let scene = GaussianScene::new(
            0,
            [0.0; 3],
            vec![
                splat_at(0.0, 0.0, 5.0, 0.5, [1.0, 0.0, 0.0]),
                splat_at(0.0, 0.0, 5.0, 0.5, [0.0, 1.0, 0.0]),
            ],
        )
        .unwrap();
        let (image, _) = render(&scene, &camera(1, 1), &RenderOptions::default()).unwrap();
        let c = image.get(0);
        assert!((c[0] - 0.5).abs() < 1e-12 && (c[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn non_finite_scene_is_an_error() {
        let mut g = splat_at(0.0, 0.0, 5.0, 0.5, [1.0, 0.0, 0.0]);
        g.position[0] = f64::NAN;
        let scene = GaussianScene::new(0, [0.0; 3], vec![g]).unwrap();
        assert!(matches!(
            render(&scene, &camera(2, 2), &RenderOptions::default()),
            Err(Error::NonFinite(_))
        ));
    }
}
