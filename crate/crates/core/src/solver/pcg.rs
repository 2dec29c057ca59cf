use serde::{Deserialize, Serialize};

use super::NormalSystem;
use crate::error::{Error, Result};

/// Lower bound applied to `diag(JᵀJ)` before it is inverted.
pub const PRECONDITIONER_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcgOptions {
    pub max_iters: usize,
    /// Stop once `‖r‖² < rel_tol · ‖b‖²`.
    pub rel_tol: f64,
}

impl Default for PcgOptions {
    fn default() -> Self {
        PcgOptions {
            max_iters: 8,
            rel_tol: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖r_i‖` for `i = 0..=iterations`.
    pub residual_norms: Vec<f64>,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned CG on `(JᵀJ + λ M) x = b` with `M = diag(JᵀJ)`,
/// started from `x₀ = M⁻¹ b`.
pub fn pcg_solve<S: NormalSystem + ?Sized>(
    system: &S,
    lambda: f64,
    options: &PcgOptions,
) -> Result<PcgResult> {
    let n = system.dim();
    let b = system.rhs();
    let b_sq = dot(b, b);
    if b_sq == 0.0 {
        return Ok(PcgResult {
            x: vec![0.0; n],
            iterations: 0,
            residual_norms: vec![0.0],
            converged: true,
        });
    }
    let m: Vec<f64> = system
        .jtj_diag()
        .iter()
        .map(|d| d.max(PRECONDITIONER_FLOOR))
        .collect();
    let damped = |v: &[f64]| -> Result<Vec<f64>> {
        let mut g = system.apply_jtj(v)?;
        for ((gi, mi), vi) in g.iter_mut().zip(&m).zip(v) {
            *gi += lambda * mi * vi;
        }
        Ok(g)
    };

    let mut x: Vec<f64> = b.iter().zip(&m).map(|(bi, mi)| bi / mi).collect();
    let g0 = damped(&x)?;
    let mut r: Vec<f64> = b.iter().zip(&g0).map(|(bi, gi)| bi - gi).collect();
    let mut z: Vec<f64> = r.iter().zip(&m).map(|(ri, mi)| ri / mi).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut norms = vec![dot(&r, &r).sqrt()];
    let mut iterations = 0;
    let mut converged = false;

    for i in 0..options.max_iters {
        if rz == 0.0 {
            converged = true;
            break;
        }
        let g = damped(&p)?;
        let curvature = dot(&p, &g);
        if !(curvature > 0.0) {
            return Err(Error::PcgBreakdown {
                iteration: i,
                curvature,
            });
        }
        let alpha = rz / curvature;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * g[k];
            z[k] = r[k] / m[k];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
        rz = rz_next;
        iterations = i + 1;
        let r_sq = dot(&r, &r);
        norms.push(r_sq.sqrt());
        if r_sq < options.rel_tol * b_sq {
            converged = true;
            break;
        }
    }
    Ok(PcgResult {
        x,
        iterations,
        residual_norms: norms,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::LinearSystem;
    use nalgebra::{DMatrix, DVector};

    fn spd_system(n: usize, seed: u64) -> LinearSystem {
        let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let j = DMatrix::from_fn(2 * n, n, |_, _| next());
        let f = DVector::from_fn(2 * n, |_, _| next());
        LinearSystem::new(j, f)
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let j = DMatrix::from_element(3, 2, 1.0);
        let sys = LinearSystem::new(j, DVector::zeros(3));
        let out = pcg_solve(&sys, 1e-4, &PcgOptions::default()).unwrap();
        assert_eq!(out.x, vec![0.0; 2]);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn full_iterations_match_direct_solve() {
        let sys = spd_system(12, 3);
        let lambda = 1e-3;
        let out = pcg_solve(
            &sys,
            lambda,
            &PcgOptions {
                max_iters: 12,
                rel_tol: 0.0,
            },
        )
        .unwrap();
        let direct = sys.damped_solve(lambda);
        let err = (DVector::from_vec(out.x) - &direct).norm() / direct.norm();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn heavy_damping_gives_scaled_gradient() {
        let sys = spd_system(6, 5);
        let lambda = 1e6;
        let out = pcg_solve(&sys, lambda, &PcgOptions::default()).unwrap();
        for ((x, b), m) in out.x.iter().zip(sys.rhs()).zip(sys.jtj_diag()) {
            let expect = b / (lambda * m);
            assert!((x - expect).abs() <= 0.01 * expect.abs());
        }
    }

    #[test]
    fn early_exit_satisfies_tolerance() {
        let sys = spd_system(30, 7);
        let opts = PcgOptions::default();
        let out = pcg_solve(&sys, 1e-4, &opts).unwrap();
        let b_norm = dot(sys.rhs(), sys.rhs()).sqrt();
        let last = *out.residual_norms.last().unwrap();
        assert!(out.iterations <= opts.max_iters);
        if out.converged {
            assert!(last * last < opts.rel_tol * b_norm * b_norm);
        } else {
            assert_eq!(out.iterations, opts.max_iters);
        }
    }

    #[test]
    fn indefinite_system_breaks_down() {
        struct Negative;
        impl NormalSystem for Negative {
            fn dim(&self) -> usize {
                2
            }
            fn rhs(&self) -> &[f64] {
                &[1.0, 1.0]
            }
            fn jtj_diag(&self) -> &[f64] {
                &[1.0, 1.0]
            }
            fn apply_jtj(&self, p: &[f64]) -> Result<Vec<f64>> {
                Ok(p.iter().map(|v| -3.0 * v).collect())
            }
            fn residual_energy(&self) -> f64 {
                0.0
            }
            fn model_energy(&self, _: &[f64]) -> Result<f64> {
                Ok(0.0)
            }
        }
        assert!(matches!(
            pcg_solve(&Negative, 1e-4, &PcgOptions::default()),
            Err(Error::PcgBreakdown { .. })
        ));
    }
}
