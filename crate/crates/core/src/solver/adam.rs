use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::history::{IterationRecord, PhaseTimings, Stage};
use super::{FitResult, GaussianProblem, LeastSquaresProblem};
use crate::error::{Error, Result};
use crate::rasterizer::{project_with_jacobian, render, RenderOptions, SplatVec};
use crate::residuals::{ssim_center_grad, Loss, LossMode};
use crate::scene::{
    flatten_unchecked, Camera, Dataset, GaussianScene, Layout, ParamClass, ParamVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub sh: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            rotation: 1e-3,
            log_scale: 5e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
        }
    }
}

impl LearningRates {
    pub fn for_class(&self, class: ParamClass) -> f64 {
        match class {
            ParamClass::Position => self.position,
            ParamClass::Rotation => self.rotation,
            ParamClass::LogScale => self.log_scale,
            ParamClass::Opacity => self.opacity,
            ParamClass::Sh => self.sh,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        LearningRates {
            position: self.position * factor,
            rotation: self.rotation * factor,
            log_scale: self.log_scale * factor,
            opacity: self.opacity * factor,
            sh: self.sh * factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub iterations: usize,
    pub learning_rates: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seeds the per-step view choice.
    pub seed: u64,
    /// Evaluate on all views every this many steps (and at the end).
    pub eval_every: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            iterations: 200,
            learning_rates: LearningRates::default(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
            seed: 0,
            eval_every: 50,
        }
    }
}

/// Gradient of the per-image loss
/// `(1/N) Σ_slots λ1 |c - C| + λ2 (1 - SSIM)` (or `(1/N) Σ (c - C)²` in L2
/// mode), `N = 3 · pixels`, by a direct back-to-front pass over every ray.
/// Returned attribute-major. The SSIM term uses the center-pixel derivative.
pub fn adam_gradient(
    scene: &GaussianScene,
    camera: &Camera,
    gt: &crate::rasterizer::Image,
    loss: &Loss,
    options: &RenderOptions,
) -> Result<(f64, ParamVector)> {
    let (image, traversals) = render(scene, camera, options)?;
    image.same_size(gt)?;
    let n = image.rgb.len() as f64;
    let (value, dl_dc): (f64, Vec<f64>) = match loss.mode {
        LossMode::L2 => {
            let e: Vec<f64> = image.rgb.iter().zip(&gt.rgb).map(|(c, g)| c - g).collect();
            (
                e.iter().map(|v| v * v).sum::<f64>() / n,
                e.iter().map(|v| 2.0 * v / n).collect(),
            )
        }
        LossMode::L1Ssim => {
            let map = crate::residuals::ssim_map(&image, gt, &loss.window)?;
            let sgrad = ssim_center_grad(&image, gt, &loss.window)?;
            let mut value = 0.0;
            let grad = (0..image.rgb.len())
                .map(|i| {
                    let e = image.rgb[i] - gt.rgb[i];
                    value += loss.lambda1 * e.abs() + loss.lambda2 * (1.0 - map[i]);
                    let sign = if e == 0.0 { 0.0 } else { e.signum() };
                    (loss.lambda1 * sign - loss.lambda2 * sgrad[i]) / n
                })
                .collect();
            (value / n, grad)
        }
    };

    let projected: Vec<_> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(id, g)| project_with_jacobian(g, id, scene.sh_degree, camera, options))
        .collect();

    // Per-pixel cotangent contributions, reduced per Gaussian in pixel order.
    let contributions: Vec<Vec<(usize, SplatVec)>> = traversals
        .par_iter()
        .map(|t| {
            let (px, py) = camera.pixel_center(t.pixel);
            let g = [
                dl_dc[3 * t.pixel],
                dl_dc[3 * t.pixel + 1],
                dl_dc[3 * t.pixel + 2],
            ];
            let mut behind = scene.background.map(|b| b * t.final_transmittance);
            let mut out = Vec::with_capacity(t.steps.len());
            for s in t.steps.iter().rev() {
                let mut dl_dalpha = 0.0;
                let mut cot = SplatVec::default();
                for ch in 0..3 {
                    dl_dalpha +=
                        g[ch] * (s.color[ch] * s.transmittance - behind[ch] / (1.0 - s.alpha));
                    behind[ch] += s.color[ch] * s.alpha * s.transmittance;
                    cot.color[ch] = g[ch] * s.alpha * s.transmittance;
                }
                if !s.clamped {
                    let (splat, _) = projected[s.gaussian_id]
                        .as_ref()
                        .expect("traversed splats are visible");
                    cot.add_alpha_part(dl_dalpha, &splat.alpha_partials(&splat.sample(px, py)));
                }
                out.push((s.gaussian_id, cot));
            }
            out
        })
        .collect();
    let mut cot = vec![SplatVec::default(); scene.len()];
    for pixel in &contributions {
        for (id, c) in pixel {
            cot[*id].add(c);
        }
    }

    let p = scene.params_per_gaussian();
    let mut grad = ParamVector::zeros(Layout::AttributeMajor, scene.len(), p);
    let mut block = vec![0.0; p];
    for (g, c) in cot.iter().enumerate() {
        let Some((_, jac)) = projected[g].as_ref() else {
            continue;
        };
        block.iter_mut().for_each(|v| *v = 0.0);
        jac.pull_back(c, &mut block);
        for (a, v) in block.iter().enumerate() {
            let i = grad.index(g, a);
            grad.values_mut()[i] = *v;
        }
    }
    if grad.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ADAM gradient"));
    }
    Ok((value, grad))
}

/// ADAM with one randomly drawn view per step.
pub fn adam_fit(
    scene: &GaussianScene,
    dataset: &Dataset,
    loss: &Loss,
    options: &RenderOptions,
    config: &AdamConfig,
) -> Result<FitResult> {
    let start = Instant::now();
    let problem = GaussianProblem::new(scene, dataset, *loss, *options)?;
    let mut timings = PhaseTimings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let g_count = scene.len();
    let mut x = flatten_unchecked(scene, Layout::AttributeMajor).into_values();
    let lr: Vec<f64> = (0..x.len())
        .map(|i| {
            config
                .learning_rates
                .for_class(ParamClass::of_attribute(i / g_count))
        })
        .collect();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut history = Vec::new();

    let record = |iter: usize,
                  x: &[f64],
                  timings: &mut PhaseTimings,
                  history: &mut Vec<IterationRecord>|
     -> Result<()> {
        let t = Instant::now();
        let all: Vec<usize> = (0..dataset.len()).collect();
        let energy = problem.energy(x, &all)?;
        let q = problem.quality(x)?;
        timings.evaluation += t.elapsed().as_secs_f64();
        history.push(IterationRecord::evaluation(
            Stage::Adam,
            iter,
            start.elapsed().as_secs_f64(),
            energy,
            q.psnr,
            q.ssim,
        ));
        Ok(())
    };
    record(0, &x, &mut timings, &mut history)?;

    let mut current = scene.clone();
    for t in 1..=config.iterations {
        let view = rng.random_range(0..dataset.len());
        let tg = Instant::now();
        let (_, grad) = adam_gradient(
            &current,
            &dataset.cameras[view],
            &dataset.images[view],
            loss,
            options,
        )?;
        timings.gradient += tg.elapsed().as_secs_f64();
        let bc1 = 1.0 - config.beta1.powi(t as i32);
        let bc2 = 1.0 - config.beta2.powi(t as i32);
        for (k, g) in grad.values().iter().enumerate() {
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g;
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            x[k] -= lr[k] * m_hat / (v_hat.sqrt() + config.epsilon);
        }
        current = problem.scene_from(&x)?;
        if t % config.eval_every.max(1) == 0 || t == config.iterations {
            record(t, &x, &mut timings, &mut history)?;
        }
    }
    Ok(FitResult {
        scene: current,
        history,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jacobian::build_cache;
    use crate::rasterizer::render_image;
    use crate::residuals::compute_residuals;
    use crate::scene::{make_synthetic_dataset, perturb, DatasetSpec, PerturbScales};

    fn fixture() -> (GaussianScene, Dataset) {
        let data = make_synthetic_dataset(&DatasetSpec {
            seed: 5,
            gaussian_count: 12,
            camera_count: 3,
            width: 20,
            height: 16,
            sh_degree: 1,
        })
        .unwrap();
        let start = perturb(&data.truth, 1, 0.2, &PerturbScales::default()).unwrap();
        (start, data.dataset)
    }

    #[test]
    fn gradient_is_scaled_normal_equation_rhs() {
        let (scene, data) = fixture();
        let options = RenderOptions::default();
        for loss in [Loss::default(), Loss::l2()] {
            let cam = &data.cameras[0];
            let gt = &data.images[0];
            let (value, grad) = adam_gradient(&scene, cam, gt, &loss, &options).unwrap();
            let image = render_image(&scene, cam, &options).unwrap();
            let bundle = compute_residuals(&image, gt, &loss).unwrap();
            let n = image.rgb.len() as f64;
            assert!((value - bundle.energy() / n).abs() < 1e-12 * (1.0 + value));
            let (b, _) = build_cache(&scene, cam, 0, &bundle, &options).unwrap();
            let scale = grad.norm().max(1e-300);
            for (g, bv) in grad.values().iter().zip(b.values()) {
                assert!(
                    (g + 2.0 / n * bv).abs() < 1e-9 * scale,
                    "{g} vs {}",
                    -2.0 / n * bv
                );
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_scene() {
        let (scene, data) = fixture();
        let config = AdamConfig {
            iterations: 3,
            learning_rates: LearningRates::default().scaled(0.0),
            eval_every: 1,
            ..AdamConfig::default()
        };
        let fit = adam_fit(
            &scene,
            &data,
            &Loss::default(),
            &RenderOptions::default(),
            &config,
        )
        .unwrap();
        assert_eq!(fit.scene, scene);
        assert_eq!(fit.history.len(), 4);
        assert!(fit.history.iter().all(|r| r.stage == Stage::Adam));
    }

    #[test]
    fn adam_reduces_energy_and_is_deterministic() {
        let (scene, data) = fixture();
        let config = AdamConfig {
            iterations: 60,
            eval_every: 30,
            ..AdamConfig::default()
        };
        let loss = Loss::default();
        let options = RenderOptions::default();
        let a = adam_fit(&scene, &data, &loss, &options, &config).unwrap();
        let b = adam_fit(&scene, &data, &loss, &options, &config).unwrap();
        assert_eq!(a.scene, b.scene);
        let first = a.history.first().unwrap().energy.unwrap();
        let last = a.history.last().unwrap().energy.unwrap();
        assert!(last < first, "{last} >= {first}");
    }
}
