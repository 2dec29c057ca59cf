use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::history::{IterationRecord, PhaseTimings, Stage};
use super::pcg::{pcg_solve, PcgOptions};
use super::{LeastSquaresProblem, NormalSystem};
use crate::error::{Error, Result};

/// Steps with a gain ratio at or below this are reverted.
pub const RHO_ACCEPT: f64 = 1e-5;
const COMBINE_FLOOR: f64 = 1e-12;
const RHO_DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Batch `j` takes views `j, j + n_b, j + 2 n_b, …`.
    Strided,
    /// A fresh seeded shuffle per iteration, cut into consecutive batches.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSchedule {
    pub num_batches: usize,
    /// Views per batch; 0 takes every view the selection offers.
    pub batch_size: usize,
    pub selection: Selection,
}

impl Default for BatchSchedule {
    fn default() -> Self {
        BatchSchedule {
            num_batches: 1,
            batch_size: 0,
            selection: Selection::Strided,
        }
    }
}

impl BatchSchedule {
    pub fn validate(&self, views: usize) -> Result<()> {
        if self.num_batches == 0 || self.num_batches > views {
            return Err(Error::Config(format!(
                "num_batches must be in 1..={views}, got {}",
                self.num_batches
            )));
        }
        if self.batch_size > views {
            return Err(Error::Config(format!(
                "batch_size {} exceeds the {views} available views",
                self.batch_size
            )));
        }
        Ok(())
    }

    pub fn batches(&self, views: usize, iteration: usize) -> Vec<Vec<usize>> {
        let n_b = self.num_batches;
        match self.selection {
            Selection::Strided => (0..n_b)
                .map(|j| {
                    let all = (j..views).step_by(n_b);
                    if self.batch_size == 0 {
                        all.collect()
                    } else {
                        all.take(self.batch_size).collect()
                    }
                })
                .collect(),
            Selection::Random { seed } => {
                let mut order: Vec<usize> = (0..views).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(iteration as u64));
                order.shuffle(&mut rng);
                let size = if self.batch_size == 0 {
                    views.div_ceil(n_b)
                } else {
                    self.batch_size
                };
                (0..n_b)
                    .map(|j| {
                        order
                            .iter()
                            .cycle()
                            .skip(j * size)
                            .take(size.min(views))
                            .copied()
                            .collect()
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchOptions {
    /// Candidates are `2⁰ … 2^-depth` plus 0.
    pub depth: u32,
    pub subset_fraction: f64,
}

impl Default for LineSearchOptions {
    fn default() -> Self {
        LineSearchOptions {
            depth: 8,
            subset_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub iterations: usize,
    pub lambda_init: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub pcg: PcgOptions,
    pub schedule: BatchSchedule,
    pub line_search: LineSearchOptions,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            iterations: 5,
            lambda_init: 1e-4,
            lambda_min: 1e-4,
            lambda_max: 1e4,
            pcg: PcgOptions::default(),
            schedule: BatchSchedule::default(),
            line_search: LineSearchOptions::default(),
        }
    }
}

impl LmConfig {
    pub fn validate(&self, views: usize) -> Result<()> {
        if !(self.lambda_min > 0.0 && self.lambda_min <= self.lambda_max) {
            return Err(Error::Config(format!(
                "lambda bounds must satisfy 0 < min <= max, got [{}, {}]",
                self.lambda_min, self.lambda_max
            )));
        }
        if !(self.lambda_min..=self.lambda_max).contains(&self.lambda_init) {
            return Err(Error::Config(format!(
                "lambda_init {} outside [{}, {}]",
                self.lambda_init, self.lambda_min, self.lambda_max
            )));
        }
        if !(self.line_search.subset_fraction > 0.0 && self.line_search.subset_fraction <= 1.0) {
            return Err(Error::Config(
                "line-search subset fraction must be in (0, 1]".into(),
            ));
        }
        self.schedule.validate(views)
    }
}

/// Elementwise weighted mean `Σ Mᵢ Δᵢ / Σ Mᵢ`; a single batch is returned as is.
pub fn combine_updates(deltas: &[Vec<f64>], weights: &[Vec<f64>]) -> Result<Vec<f64>> {
    if deltas.is_empty() || deltas.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} updates with {} weight vectors",
            deltas.len(),
            weights.len()
        )));
    }
    if deltas.len() == 1 {
        return Ok(deltas[0].clone());
    }
    let n = deltas[0].len();
    let mut out = vec![0.0; n];
    for k in 0..n {
        let mut num = 0.0;
        let mut den = 0.0;
        for (d, w) in deltas.iter().zip(weights) {
            num += w[k] * d[k];
            den += w[k];
        }
        out[k] = num / den.max(COMBINE_FLOOR);
    }
    Ok(out)
}

/// Views used by the line search: `ceil(fraction · n)` of them, evenly strided.
pub fn line_search_subset(views: usize, fraction: f64) -> Vec<usize> {
    let count = ((fraction * views as f64 - 1e-9).ceil() as usize).clamp(1, views.max(1));
    (0..count).map(|j| j * views / count).collect()
}

/// Picks `γ ∈ {0} ∪ {2⁰, 2⁻¹, …, 2^-depth}` minimizing the energy of
/// `x + γΔ` on `views`. Only strict improvements replace the incumbent, so
/// `γ = 0` is returned when no candidate helps.
pub fn line_search<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    delta: &[f64],
    views: &[usize],
    depth: u32,
) -> Result<(f64, f64)> {
    let mut best_gamma = 0.0;
    let mut best_energy = problem.energy(x, views)?;
    let mut trial = vec![0.0; x.len()];
    for k in 0..=depth {
        let gamma = 0.5f64.powi(k as i32);
        for ((t, xi), di) in trial.iter_mut().zip(x).zip(delta) {
            *t = xi + gamma * di;
        }
        let e = problem.energy(&trial, views)?;
        if e < best_energy {
            best_energy = e;
            best_gamma = gamma;
        }
    }
    Ok((best_gamma, best_energy))
}

/// Gain ratio of actual to predicted energy reduction. Returns `-∞` for a
/// zero step or when the model predicts no reduction.
pub fn compute_rho(energy_before: f64, energy_after: f64, model_after: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return f64::NEG_INFINITY;
    }
    let predicted = energy_before - model_after;
    if !(predicted >= RHO_DENOMINATOR_FLOOR) {
        return f64::NEG_INFINITY;
    }
    (energy_before - energy_after) / predicted
}

/// Accepts when `ρ > 1e-5` and rescales `λ` by `1 - (2ρ - 1)³`, otherwise
/// rejects and doubles it; the result is clamped to `[min, max]`.
pub fn trust_region_update(lambda: f64, rho: f64, min: f64, max: f64) -> (bool, f64) {
    if rho > RHO_ACCEPT {
        let factor = 1.0 - (2.0 * rho - 1.0).powi(3);
        (true, (lambda * factor).clamp(min, max))
    } else {
        (false, (2.0 * lambda).clamp(min, max))
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    pub lambda: f64,
    pub history: Vec<IterationRecord>,
    pub timings: PhaseTimings,
}

/// Solves one batch, doubling `λ` after each loss of positive definiteness.
fn solve_batch<S: NormalSystem>(
    system: &S,
    lambda: &mut f64,
    config: &LmConfig,
) -> Result<Vec<f64>> {
    loop {
        match pcg_solve(system, *lambda, &config.pcg) {
            Ok(out) => return Ok(out.x),
            Err(Error::PcgBreakdown { .. }) => {
                if *lambda >= config.lambda_max {
                    return Err(Error::DampingExhausted {
                        lambda_max: config.lambda_max,
                    });
                }
                *lambda = (2.0 * *lambda).min(config.lambda_max);
            }
            Err(e) => return Err(e),
        }
    }
}

fn evaluate<P: LeastSquaresProblem + ?Sized>(problem: &P, x: &[f64]) -> Result<(f64, f64, f64)> {
    let all: Vec<usize> = (0..problem.num_views()).collect();
    let energy = problem.energy(x, &all)?;
    let q = problem.quality(x)?;
    Ok((energy, q.psnr, q.ssim))
}

/// Levenberg–Marquardt outer loop. Row 0 of the history is the starting
/// point; every later row is one outer iteration evaluated on all views.
pub fn lm_fit<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    config: &LmConfig,
) -> Result<LmOutcome> {
    config.validate(problem.num_views())?;
    let start = Instant::now();
    let mut timings = PhaseTimings::default();
    let mut x = x0.to_vec();
    let mut lambda = config.lambda_init;
    let subset = line_search_subset(problem.num_views(), config.line_search.subset_fraction);

    let t = Instant::now();
    let (e0, psnr0, ssim0) = evaluate(problem, &x)?;
    timings.evaluation += t.elapsed().as_secs_f64();
    let mut history = vec![IterationRecord {
        lambda_reg: Some(lambda),
        ..IterationRecord::evaluation(
            Stage::Lm,
            0,
            start.elapsed().as_secs_f64(),
            e0,
            psnr0,
            ssim0,
        )
    }];

    for iter in 1..=config.iterations {
        let batches = config.schedule.batches(problem.num_views(), iter - 1);
        let mut deltas = Vec::with_capacity(batches.len());
        let mut weights = Vec::with_capacity(batches.len());
        let mut first = None;
        for views in &batches {
            let system = problem.linearize(&x, views, &mut timings)?;
            let t = Instant::now();
            let delta = solve_batch(&system, &mut lambda, config)?;
            timings.pcg += t.elapsed().as_secs_f64();
            deltas.push(delta);
            weights.push(system.jtj_diag().to_vec());
            if first.is_none() {
                first = Some(system);
            }
        }
        let first = first.expect("at least one batch");
        let delta = combine_updates(&deltas, &weights)?;
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LM update"));
        }

        let t = Instant::now();
        let (gamma, _) = line_search(problem, &x, &delta, &subset, config.line_search.depth)?;
        let step: Vec<f64> = delta.iter().map(|d| gamma * d).collect();
        let rho = if gamma == 0.0 {
            f64::NEG_INFINITY
        } else {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
            let after = problem.energy(&trial, &batches[0])?;
            compute_rho(
                first.residual_energy(),
                after,
                first.model_energy(&step)?,
                gamma,
            )
        };
        timings.line_search += t.elapsed().as_secs_f64();

        let (accept, next_lambda) =
            trust_region_update(lambda, rho, config.lambda_min, config.lambda_max);
        lambda = next_lambda;
        if accept {
            for (xi, s) in x.iter_mut().zip(&step) {
                *xi += s;
            }
        }

        let t = Instant::now();
        let (energy, psnr, ssim) = evaluate(problem, &x)?;
        timings.evaluation += t.elapsed().as_secs_f64();
        history.push(IterationRecord {
            accepted: Some(accept),
            lambda_reg: Some(lambda),
            gamma: Some(gamma),
            rho: Some(rho),
            ..IterationRecord::evaluation(
                Stage::Lm,
                iter,
                start.elapsed().as_secs_f64(),
                energy,
                psnr,
                ssim,
            )
        });
    }
    Ok(LmOutcome {
        x,
        lambda,
        history,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trust_region_cases() {
        assert_eq!(trust_region_update(1.0, 0.5, 1e-4, 1e4), (true, 1.0));
        assert_eq!(trust_region_update(1.0, 1e-6, 1e-4, 1e4), (false, 2.0));
        assert_eq!(trust_region_update(1.0, 1.0, 1e-4, 1e4), (true, 1e-4));
        assert_eq!(
            trust_region_update(8e3, f64::NEG_INFINITY, 1e-4, 1e4),
            (false, 1e4)
        );
    }

    #[test]
    fn rho_guards() {
        assert_eq!(compute_rho(1.0, 0.5, 0.5, 0.0), f64::NEG_INFINITY);
        assert_eq!(compute_rho(1.0, 0.5, 1.0, 1.0), f64::NEG_INFINITY);
        assert_eq!(compute_rho(1.0, 0.5, 1.5, 1.0), f64::NEG_INFINITY);
        assert_eq!(compute_rho(1.0, 0.5, 0.5, 1.0), 1.0);
    }

    #[test]
    fn combine_single_batch_is_identity() {
        let d = vec![vec![0.1, -2.0, 3.5]];
        let w = vec![vec![0.0, 4.0, 1e-30]];
        assert_eq!(combine_updates(&d, &w).unwrap(), d[0]);
    }

    #[test]
    fn combine_equal_weights_is_mean() {
        let d = vec![vec![1.0, 2.0], vec![3.0, -2.0]];
        let w = vec![vec![0.5, 2.0], vec![0.5, 2.0]];
        assert_eq!(combine_updates(&d, &w).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn combine_unseen_parameter_gets_zero() {
        let d = vec![vec![1.0], vec![5.0]];
        let w = vec![vec![0.0], vec![0.0]];
        assert_eq!(combine_updates(&d, &w).unwrap(), vec![0.0]);
    }

    #[test]
    fn strided_batches() {
        let s = BatchSchedule {
            num_batches: 3,
            batch_size: 0,
            selection: Selection::Strided,
        };
        assert_eq!(
            s.batches(8, 0),
            vec![vec![0, 3, 6], vec![1, 4, 7], vec![2, 5]]
        );
        let s = BatchSchedule { batch_size: 2, ..s };
        assert_eq!(s.batches(8, 0), vec![vec![0, 3], vec![1, 4], vec![2, 5]]);
    }

    #[test]
    fn random_batches_are_seeded() {
        let s = BatchSchedule {
            num_batches: 2,
            batch_size: 3,
            selection: Selection::Random { seed: 9 },
        };
        assert_eq!(s.batches(8, 4), s.batches(8, 4));
        for b in s.batches(8, 1) {
            assert_eq!(b.len(), 3);
        }
    }

    #[test]
    fn subset_is_thirty_percent_strided() {
        assert_eq!(line_search_subset(8, 0.3), vec![0, 2, 5]);
        assert_eq!(line_search_subset(10, 0.3), vec![0, 3, 6]);
        assert_eq!(line_search_subset(1, 0.3), vec![0]);
    }
}
