//! Optimizers for the photometric energy.
//!
//! [`lm_fit`] runs damped Gauss–Newton steps: every outer iteration
//! linearizes one or more batches of views, solves
//! `(JᵀJ + λ diag(JᵀJ)) Δ = -JᵀF` per batch with [`pcg_solve`], merges the
//! batch solutions with [`combine_updates`], scales the result with
//! [`line_search`] and accepts or reverts it based on the gain ratio from
//! [`compute_rho`]. [`adam_fit`] is the first-order baseline on the same
//! energy and [`two_stage_fit`] chains the two.
//!
//! The outer loop is written against [`LeastSquaresProblem`] so it can be
//! exercised on small dense problems as well as on Gaussian scenes.

mod adam;
mod config;
mod history;
mod linear;
mod lm;
mod pcg;
mod problem;

pub use adam::{adam_fit, adam_gradient, AdamConfig, LearningRates};
pub use config::FitConfig;
pub use history::{write_convergence_csv, IterationRecord, PhaseTimings, Stage};
pub use linear::{LinearProblem, LinearSystem};
pub use lm::{
    combine_updates, compute_rho, line_search, line_search_subset, lm_fit, trust_region_update,
    BatchSchedule, LineSearchOptions, LmConfig, LmOutcome, Selection, RHO_ACCEPT,
};
pub use pcg::{pcg_solve, PcgOptions, PcgResult, PRECONDITIONER_FLOOR};
pub use problem::{GaussianProblem, GaussianSystem, Quality};

use crate::error::Result;
use crate::scene::GaussianScene;

/// The damped normal equations of one batch, accessed only through products.
/// Vectors are attribute-major.
pub trait NormalSystem {
    fn dim(&self) -> usize;
    /// `b = -JᵀF`.
    fn rhs(&self) -> &[f64];
    /// `diag(JᵀJ)`, not floored.
    fn jtj_diag(&self) -> &[f64];
    fn apply_jtj(&self, p: &[f64]) -> Result<Vec<f64>>;
    /// `‖F‖²` at the linearization point.
    fn residual_energy(&self) -> f64;
    /// `‖F + J step‖²`.
    fn model_energy(&self, step: &[f64]) -> Result<f64>;
}

/// A sum-of-squares energy over a set of views.
pub trait LeastSquaresProblem {
    type System: NormalSystem;

    fn num_params(&self) -> usize;
    fn num_views(&self) -> usize;
    fn energy(&self, x: &[f64], views: &[usize]) -> Result<f64>;
    fn linearize(
        &self,
        x: &[f64],
        views: &[usize],
        timings: &mut PhaseTimings,
    ) -> Result<Self::System>;
    /// Image metrics over all views; problems without images return NaN.
    fn quality(&self, _x: &[f64]) -> Result<Quality> {
        Ok(Quality {
            psnr: f64::NAN,
            ssim: f64::NAN,
        })
    }
}

/// Result of a fit: the final scene and its iteration history.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub scene: GaussianScene,
    pub history: Vec<IterationRecord>,
    pub timings: PhaseTimings,
}

/// `adam_fit` for `config.stage1_iters` iterations followed by `lm_fit`.
pub fn two_stage_fit(
    scene: &GaussianScene,
    dataset: &crate::scene::Dataset,
    config: &FitConfig,
) -> Result<FitResult> {
    let mut history = Vec::new();
    let mut timings = PhaseTimings::default();
    let mut current = scene.clone();
    let mut offset = 0.0;
    if config.stage1_iters > 0 {
        let adam_cfg = AdamConfig {
            iterations: config.stage1_iters,
            ..config.adam.clone()
        };
        let stage1 = adam_fit(&current, dataset, &config.loss, &config.render, &adam_cfg)?;
        offset = stage1.history.last().map_or(0.0, |r| r.time_s);
        current = stage1.scene;
        history.extend(stage1.history);
        timings.add(&stage1.timings);
    }
    history.push(IterationRecord::boundary(config.stage1_iters, offset));
    let problem = GaussianProblem::new(&current, dataset, config.loss, config.render)?
        .with_cache_budget(config.cache_budget);
    let stage2 = lm_fit(&problem, &problem.initial_params(), &config.lm)?;
    let mut lm_history = stage2.history;
    for r in &mut lm_history {
        r.time_s += offset;
    }
    history.extend(lm_history);
    timings.add(&stage2.timings);
    Ok(FitResult {
        scene: problem.scene_from(&stage2.x)?,
        history,
        timings,
    })
}
