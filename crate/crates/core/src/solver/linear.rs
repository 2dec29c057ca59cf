//! Dense affine least-squares problems, `F(x) = A x - y`, split into views by
//! row blocks. Useful for exercising the outer loop where the Gauss–Newton
//! model is exact.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::{LeastSquaresProblem, NormalSystem, PhaseTimings};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LinearSystem {
    jacobian: DMatrix<f64>,
    residual: DVector<f64>,
    rhs: Vec<f64>,
    diag: Vec<f64>,
}

impl LinearSystem {
    pub fn new(jacobian: DMatrix<f64>, residual: DVector<f64>) -> Self {
        let rhs = (-(jacobian.transpose() * &residual)).as_slice().to_vec();
        let diag = (0..jacobian.ncols())
            .map(|k| jacobian.column(k).norm_squared())
            .collect();
        LinearSystem {
            jacobian,
            residual,
            rhs,
            diag,
        }
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    /// Direct solve of `(JᵀJ + λ diag(JᵀJ)) Δ = -JᵀF`.
    pub fn damped_solve(&self, lambda: f64) -> DVector<f64> {
        let mut a = self.jacobian.transpose() * &self.jacobian;
        for k in 0..a.nrows() {
            a[(k, k)] += lambda * self.diag[k];
        }
        a.lu()
            .solve(&DVector::from_column_slice(&self.rhs))
            .expect("damped system is regular")
    }
}

impl NormalSystem for LinearSystem {
    fn dim(&self) -> usize {
        self.jacobian.ncols()
    }

    fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    fn jtj_diag(&self) -> &[f64] {
        &self.diag
    }

    fn apply_jtj(&self, p: &[f64]) -> Result<Vec<f64>> {
        let u = &self.jacobian * DVector::from_column_slice(p);
        Ok((self.jacobian.transpose() * u).as_slice().to_vec())
    }

    fn residual_energy(&self) -> f64 {
        self.residual.norm_squared()
    }

    fn model_energy(&self, step: &[f64]) -> Result<f64> {
        Ok((&self.residual + &self.jacobian * DVector::from_column_slice(step)).norm_squared())
    }
}

#[derive(Debug, Clone)]
pub struct LinearProblem {
    a: DMatrix<f64>,
    y: DVector<f64>,
    views: Vec<Range<usize>>,
}

impl LinearProblem {
    pub fn new(a: DMatrix<f64>, y: DVector<f64>, views: Vec<Range<usize>>) -> Result<Self> {
        if a.nrows() != y.len() {
            return Err(Error::LengthMismatch {
                what: "linear problem targets",
                expected: a.nrows(),
                found: y.len(),
            });
        }
        if views.iter().any(|r| r.end > a.nrows() || r.start > r.end) {
            return Err(Error::InvalidArgument("view rows out of range".into()));
        }
        Ok(LinearProblem { a, y, views })
    }

    fn rows(&self, views: &[usize]) -> Vec<usize> {
        views.iter().flat_map(|&v| self.views[v].clone()).collect()
    }

    fn restricted(&self, x: &[f64], views: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let rows = self.rows(views);
        let a = self.a.select_rows(&rows);
        let f = &a * DVector::from_column_slice(x) - self.y.select_rows(&rows);
        (a, f)
    }
}

impl LeastSquaresProblem for LinearProblem {
    type System = LinearSystem;

    fn num_params(&self) -> usize {
        self.a.ncols()
    }

    fn num_views(&self) -> usize {
        self.views.len()
    }

    fn energy(&self, x: &[f64], views: &[usize]) -> Result<f64> {
        Ok(self.restricted(x, views).1.norm_squared())
    }

    fn linearize(&self, x: &[f64], views: &[usize], _: &mut PhaseTimings) -> Result<LinearSystem> {
        let (a, f) = self.restricted(x, views);
        Ok(LinearSystem::new(a, f))
    }
}
