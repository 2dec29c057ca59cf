use gslm::solver::{FitConfig, IterationRecord, PhaseTimings};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub energy: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    #[serde(flatten)]
    pub phases: PhaseTimings,
    /// Wall clock of the whole fit, including work outside the phases.
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub config: FitConfig,
    pub history: Vec<IterationRecord>,
    pub final_metrics: Metrics,
    pub timings: Timings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub energy: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ViewMetrics>,
    pub mean: Metrics,
}
