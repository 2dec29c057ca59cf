use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, LearningRates};
use super::lm::{BatchSchedule, LineSearchOptions, LmConfig, Selection};
use super::pcg::PcgOptions;
use crate::error::{Error, Result};
use crate::rasterizer::RenderOptions;
use crate::residuals::{Loss, LossMode, SsimWindow};

/// Everything a fit needs besides the scene and the images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub seed: u64,
    pub loss: Loss,
    pub render: RenderOptions,
    pub lm: LmConfig,
    pub adam: AdamConfig,
    /// ADAM iterations before switching to LM in a two-stage fit.
    pub stage1_iters: usize,
    /// Byte limit on the gradient caches of one batch.
    pub cache_budget: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig::from(FlatConfig::default())
    }
}

/// The on-disk form: one flat TOML table, every key optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatConfig {
    pub seed: u64,
    pub loss: LossMode,
    pub lambda1: f64,
    pub lambda2: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,

    pub alpha_min: f64,
    pub alpha_max: f64,
    pub transmittance_min: f64,
    pub lowpass: f64,
    pub near_plane: f64,

    pub lm_iters: usize,
    pub lambda_init: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub pcg_iters: usize,
    pub pcg_rel_tol: f64,
    pub num_batches: usize,
    pub batch_size: usize,
    /// `"strided"` or `"random"` (seeded from `seed`).
    pub batch_selection: String,
    pub line_search_depth: u32,
    pub line_search_fraction: f64,

    pub stage1_iters: usize,
    pub adam_iters: usize,
    pub lr_position: f64,
    pub lr_rotation: f64,
    pub lr_log_scale: f64,
    pub lr_opacity: f64,
    pub lr_sh: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub eval_every: usize,

    pub cache_budget_bytes: Option<usize>,
}

impl Default for FlatConfig {
    fn default() -> Self {
        let loss = Loss::default();
        let render = RenderOptions::default();
        let lm = LmConfig::default();
        let adam = AdamConfig::default();
        FlatConfig {
            seed: 0,
            loss: loss.mode,
            lambda1: loss.lambda1,
            lambda2: loss.lambda2,
            ssim_window: loss.window.size,
            ssim_sigma: loss.window.sigma,
            alpha_min: render.alpha_min,
            alpha_max: render.alpha_max,
            transmittance_min: render.transmittance_min,
            lowpass: render.lowpass,
            near_plane: render.near_plane,
            lm_iters: lm.iterations,
            lambda_init: lm.lambda_init,
            lambda_min: lm.lambda_min,
            lambda_max: lm.lambda_max,
            pcg_iters: lm.pcg.max_iters,
            pcg_rel_tol: lm.pcg.rel_tol,
            num_batches: lm.schedule.num_batches,
            batch_size: lm.schedule.batch_size,
            batch_selection: "strided".into(),
            line_search_depth: lm.line_search.depth,
            line_search_fraction: lm.line_search.subset_fraction,
            stage1_iters: 200,
            adam_iters: adam.iterations,
            lr_position: adam.learning_rates.position,
            lr_rotation: adam.learning_rates.rotation,
            lr_log_scale: adam.learning_rates.log_scale,
            lr_opacity: adam.learning_rates.opacity,
            lr_sh: adam.learning_rates.sh,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            eval_every: adam.eval_every,
            cache_budget_bytes: None,
        }
    }
}

impl From<FlatConfig> for FitConfig {
    fn from(f: FlatConfig) -> Self {
        let selection = if f.batch_selection == "random" {
            Selection::Random { seed: f.seed }
        } else {
            Selection::Strided
        };
        FitConfig {
            seed: f.seed,
            loss: Loss {
                mode: f.loss,
                lambda1: f.lambda1,
                lambda2: f.lambda2,
                window: SsimWindow {
                    size: f.ssim_window,
                    sigma: f.ssim_sigma,
                },
            },
            render: RenderOptions {
                alpha_min: f.alpha_min,
                alpha_max: f.alpha_max,
                transmittance_min: f.transmittance_min,
                lowpass: f.lowpass,
                near_plane: f.near_plane,
            },
            lm: LmConfig {
                iterations: f.lm_iters,
                lambda_init: f.lambda_init,
                lambda_min: f.lambda_min,
                lambda_max: f.lambda_max,
                pcg: PcgOptions {
                    max_iters: f.pcg_iters,
                    rel_tol: f.pcg_rel_tol,
                },
                schedule: BatchSchedule {
                    num_batches: f.num_batches,
                    batch_size: f.batch_size,
                    selection,
                },
                line_search: LineSearchOptions {
                    depth: f.line_search_depth,
                    subset_fraction: f.line_search_fraction,
                },
            },
            adam: AdamConfig {
                iterations: f.adam_iters,
                learning_rates: LearningRates {
                    position: f.lr_position,
                    rotation: f.lr_rotation,
                    log_scale: f.lr_log_scale,
                    opacity: f.lr_opacity,
                    sh: f.lr_sh,
                },
                beta1: f.beta1,
                beta2: f.beta2,
                epsilon: f.adam_epsilon,
                seed: f.seed,
                eval_every: f.eval_every,
            },
            stage1_iters: f.stage1_iters,
            cache_budget: f.cache_budget_bytes,
        }
    }
}

impl FitConfig {
    /// Parses a flat TOML table. Errors carry the line and column.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let flat: FlatConfig = toml::from_str(text).map_err(|e| {
            let location = e
                .span()
                .map(|span| {
                    let before = &text[..span.start.min(text.len())];
                    let line = before.matches('\n').count() + 1;
                    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                    format!("line {line}, column {column}: ")
                })
                .unwrap_or_default();
            Error::Config(format!("{location}{}", e.message()))
        })?;
        if !matches!(flat.batch_selection.as_str(), "strided" | "random") {
            return Err(Error::Config(format!(
                "batch_selection must be \"strided\" or \"random\", got {:?}",
                flat.batch_selection
            )));
        }
        let config = FitConfig::from(flat);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FitConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Sets every seed-driven component from one seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.adam.seed = seed;
        if let Selection::Random { .. } = self.lm.schedule.selection {
            self.lm.schedule.selection = Selection::Random { seed };
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.loss
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        // View counts are checked again once the dataset is known.
        self.lm.validate(usize::MAX)?;
        let r = &self.render;
        if !(r.alpha_min >= 0.0 && r.alpha_min < r.alpha_max && r.alpha_max < 1.0) {
            return bad(format!(
                "need 0 <= alpha_min < alpha_max < 1, got {} / {}",
                r.alpha_min, r.alpha_max
            ));
        }
        if !(r.transmittance_min > 0.0 && r.transmittance_min < 1.0) {
            return bad(format!(
                "transmittance_min must be in (0, 1), got {}",
                r.transmittance_min
            ));
        }
        if !(r.lowpass >= 0.0 && r.near_plane > 0.0) {
            return bad(format!(
                "lowpass must be >= 0 and near_plane > 0, got {} / {}",
                r.lowpass, r.near_plane
            ));
        }
        let a = &self.adam;
        if !(a.beta1 >= 0.0 && a.beta1 < 1.0 && a.beta2 >= 0.0 && a.beta2 < 1.0 && a.epsilon > 0.0)
        {
            return bad(format!(
                "invalid ADAM moments: beta1 {} beta2 {} epsilon {}",
                a.beta1, a.beta2, a.epsilon
            ));
        }
        let lr = &a.learning_rates;
        if [lr.position, lr.rotation, lr.log_scale, lr.opacity, lr.sh]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return bad("learning rates must be non-negative".into());
        }
        if a.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        Ok(())
    }
}
