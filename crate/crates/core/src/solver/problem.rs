use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LeastSquaresProblem, NormalSystem, PhaseTimings};
use crate::error::{Error, Result};
use crate::jacobian::{
    apply_j, apply_jt, diag_jtj, gradient_rhs, sort_cache_by_gaussians, trace_view,
    weight_residuals, GradientCache,
};
use crate::rasterizer::{render_image, RenderOptions};
use crate::residuals::{compute_residuals, energy, psnr, ssim_score, Loss, ResidualBundle};
use crate::scene::{flatten_unchecked, unflatten, Dataset, GaussianScene, Layout, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    /// Mean over views.
    pub psnr: f64,
    pub ssim: f64,
}

/// Fitting a Gaussian scene to a set of posed images. Parameter vectors are
/// attribute-major flattenings of scenes shaped like the template.
#[derive(Debug, Clone)]
pub struct GaussianProblem<'a> {
    template: GaussianScene,
    dataset: &'a Dataset,
    loss: Loss,
    options: RenderOptions,
    cache_budget: Option<usize>,
}

impl<'a> GaussianProblem<'a> {
    pub fn new(
        template: &GaussianScene,
        dataset: &'a Dataset,
        loss: Loss,
        options: RenderOptions,
    ) -> Result<Self> {
        if template.is_empty() {
            return Err(Error::EmptyScene);
        }
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("dataset has no views".into()));
        }
        loss.validate()?;
        template.validate()?;
        Ok(GaussianProblem {
            template: template.clone(),
            dataset,
            loss,
            options,
            cache_budget: None,
        })
    }

    /// Limits the summed cache size of one batch.
    pub fn with_cache_budget(mut self, bytes: Option<usize>) -> Self {
        self.cache_budget = bytes;
        self
    }

    pub fn initial_params(&self) -> Vec<f64> {
        flatten_unchecked(&self.template, Layout::AttributeMajor).into_values()
    }

    pub fn scene_from(&self, x: &[f64]) -> Result<GaussianScene> {
        let v = ParamVector::from_values(
            x.to_vec(),
            Layout::AttributeMajor,
            self.template.len(),
            self.template.params_per_gaussian(),
        )?;
        unflatten(&v, &self.template)
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn loss(&self) -> &Loss {
        &self.loss
    }

    /// Energy of each view, in view order.
    pub fn view_energies(&self, x: &[f64], views: &[usize]) -> Result<Vec<f64>> {
        let scene = self.scene_from(x)?;
        views
            .par_iter()
            .map(|&v| {
                let image = render_image(&scene, &self.dataset.cameras[v], &self.options)?;
                energy(&image, &self.dataset.images[v], &self.loss)
            })
            .collect()
    }
}

impl LeastSquaresProblem for GaussianProblem<'_> {
    type System = GaussianSystem;

    fn num_params(&self) -> usize {
        self.template.param_count()
    }

    fn num_views(&self) -> usize {
        self.dataset.len()
    }

    fn energy(&self, x: &[f64], views: &[usize]) -> Result<f64> {
        Ok(self.view_energies(x, views)?.iter().sum())
    }

    fn linearize(
        &self,
        x: &[f64],
        views: &[usize],
        timings: &mut PhaseTimings,
    ) -> Result<GaussianSystem> {
        let scene = self.scene_from(x)?;
        let t = Instant::now();
        let traced: Vec<(GradientCache, ResidualBundle, ParamVector)> = views
            .par_iter()
            .map(|&v| {
                let traced = trace_view(&scene, &self.dataset.cameras[v], v, &self.options)?;
                let bundle = compute_residuals(&traced.image, &self.dataset.images[v], &self.loss)?;
                let b = gradient_rhs(&traced.cache, &bundle);
                Ok((traced.cache, bundle, b))
            })
            .collect::<Result<_>>()?;
        timings.cache_build += t.elapsed().as_secs_f64();
        if let Some(budget) = self.cache_budget {
            let needed: usize = traced.iter().map(|(c, _, _)| c.memory_bytes()).sum();
            if needed > budget {
                return Err(Error::CacheBudget { needed, budget });
            }
        }

        let t = Instant::now();
        let sorted: Vec<(GradientCache, ResidualBundle, ParamVector)> = traced
            .into_par_iter()
            .map(|(c, bundle, b)| Ok((sort_cache_by_gaussians(c)?, bundle, b)))
            .collect::<Result<_>>()?;
        timings.sort += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let m = self.num_params();
        let mut rhs = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut residual_energy = 0.0;
        let mut caches = Vec::with_capacity(sorted.len());
        for (cache, bundle, b) in sorted {
            let d = diag_jtj(&cache, &bundle.grad_r_sq)?;
            for k in 0..m {
                rhs[k] += b.values()[k];
                diag[k] += d.values()[k];
            }
            residual_energy += bundle.energy();
            caches.push((cache, bundle));
        }
        timings.cache_build += t.elapsed().as_secs_f64();
        Ok(GaussianSystem {
            views: caches,
            rhs,
            diag,
            residual_energy,
            gaussian_count: self.template.len(),
            params_per_gaussian: self.template.params_per_gaussian(),
        })
    }

    fn quality(&self, x: &[f64]) -> Result<Quality> {
        let scene = self.scene_from(x)?;
        let per_view: Vec<(f64, f64)> = (0..self.dataset.len())
            .into_par_iter()
            .map(|v| {
                let image = render_image(&scene, &self.dataset.cameras[v], &self.options)?;
                let gt = &self.dataset.images[v];
                Ok((
                    psnr(&image, gt)?,
                    ssim_score(&image, gt, &self.loss.window)?,
                ))
            })
            .collect::<Result<_>>()?;
        let n = per_view.len() as f64;
        Ok(Quality {
            psnr: per_view.iter().map(|q| q.0).sum::<f64>() / n,
            ssim: per_view.iter().map(|q| q.1).sum::<f64>() / n,
        })
    }
}

/// The linearization of a batch of views: one gaussian-sorted cache and
/// residual bundle per view. Products sum over views in order.
#[derive(Debug, Clone)]
pub struct GaussianSystem {
    views: Vec<(GradientCache, ResidualBundle)>,
    rhs: Vec<f64>,
    diag: Vec<f64>,
    residual_energy: f64,
    gaussian_count: usize,
    params_per_gaussian: usize,
}

impl GaussianSystem {
    pub fn caches(&self) -> impl Iterator<Item = (&GradientCache, &ResidualBundle)> {
        self.views.iter().map(|(c, b)| (c, b))
    }

    fn color_products(&self, p: &[f64]) -> Result<Vec<Vec<f64>>> {
        let pv = ParamVector::from_values(
            p.to_vec(),
            Layout::AttributeMajor,
            self.gaussian_count,
            self.params_per_gaussian,
        )?
        .to_layout(Layout::GaussianMajor);
        self.views
            .iter()
            .map(|(cache, _)| apply_j(&pv, cache))
            .collect()
    }
}

impl NormalSystem for GaussianSystem {
    fn dim(&self) -> usize {
        self.rhs.len()
    }

    fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    fn jtj_diag(&self) -> &[f64] {
        &self.diag
    }

    fn apply_jtj(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; p.len()];
        for ((cache, bundle), u_hat) in self.views.iter().zip(self.color_products(p)?) {
            let u = weight_residuals(&u_hat, &bundle.grad_r_sq)?;
            let g = apply_jt(&u, cache)?;
            for (o, v) in out.iter_mut().zip(g.values()) {
                *o += v;
            }
        }
        Ok(out)
    }

    fn residual_energy(&self) -> f64 {
        self.residual_energy
    }

    fn model_energy(&self, step: &[f64]) -> Result<f64> {
        let products = self.color_products(step)?;
        Ok(self
            .views
            .iter()
            .zip(&products)
            .map(|((_, bundle), u_hat)| bundle.model_energy(u_hat))
            .sum())
    }
}
