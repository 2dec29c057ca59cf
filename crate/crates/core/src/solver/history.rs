use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Adam,
    Lm,
    /// Marker between the stages of a two-stage fit.
    Boundary,
}

/// One row of a convergence curve. Fields that do not apply to a stage are
/// `None` (empty in CSV).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: Stage,
    pub iter: usize,
    pub time_s: f64,
    pub energy: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub accepted: Option<bool>,
    pub lambda_reg: Option<f64>,
    pub gamma: Option<f64>,
    pub rho: Option<f64>,
}

impl IterationRecord {
    pub(crate) fn evaluation(
        stage: Stage,
        iter: usize,
        time_s: f64,
        energy: f64,
        psnr: f64,
        ssim: f64,
    ) -> Self {
        IterationRecord {
            stage,
            iter,
            time_s,
            energy: Some(energy),
            psnr: Some(psnr).filter(|v| !v.is_nan()),
            ssim: Some(ssim).filter(|v| !v.is_nan()),
            accepted: None,
            lambda_reg: None,
            gamma: None,
            rho: None,
        }
    }

    pub fn boundary(iter: usize, time_s: f64) -> Self {
        IterationRecord {
            stage: Stage::Boundary,
            iter,
            time_s,
            energy: None,
            psnr: None,
            ssim: None,
            accepted: None,
            lambda_reg: None,
            gamma: None,
            rho: None,
        }
    }
}

/// Wall-clock seconds spent per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub cache_build: f64,
    pub sort: f64,
    pub pcg: f64,
    pub line_search: f64,
    pub gradient: f64,
    pub evaluation: f64,
}

impl PhaseTimings {
    pub fn add(&mut self, other: &PhaseTimings) {
        self.cache_build += other.cache_build;
        self.sort += other.sort;
        self.pcg += other.pcg;
        self.line_search += other.line_search;
        self.gradient += other.gradient;
        self.evaluation += other.evaluation;
    }

    pub fn total(&self) -> f64 {
        self.cache_build + self.sort + self.pcg + self.line_search + self.gradient + self.evaluation
    }
}

/// Writes `stage,iter,time_s,energy,psnr,ssim,accepted,lambda_reg,gamma,rho`.
pub fn write_convergence_csv(writer: impl Write, history: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| crate::Error::format("convergence.csv", e);
    for record in history {
        w.serialize(record).map_err(to_err)?;
    }
    w.flush()
        .map_err(|e| crate::Error::io("convergence.csv", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_empty_optional_fields() {
        let rows = vec![
            IterationRecord::evaluation(Stage::Adam, 0, 0.0, 1.5, 20.0, 0.9),
            IterationRecord::boundary(10, 0.5),
        ];
        let mut out = Vec::new();
        write_convergence_csv(&mut out, &rows).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "stage,iter,time_s,energy,psnr,ssim,accepted,lambda_reg,gamma,rho"
        );
        assert_eq!(lines[1], "adam,0,0.0,1.5,20.0,0.9,,,,");
        assert_eq!(lines[2], "boundary,10,0.5,,,,,,,");
    }
}
