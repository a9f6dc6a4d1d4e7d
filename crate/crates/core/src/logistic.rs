//! Positive steady state `θ_α` of the spatial logistic equation
//! `αΔθ + θ(m − θ) = 0` with zero-flux boundary conditions.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{build_spatial_laplacian, LinearOperator, SpatialField, SpatialGrid};
use crate::linalg::BandedLu;

/// Default residual tolerance for [`solve_theta`].
pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_NEWTON: usize = 100;
const INITIAL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct LogisticSolution {
    pub theta: SpatialField,
    pub alpha: f64,
    pub residual_inf: f64,
    pub iterations: usize,
}

impl LogisticSolution {
    /// `∫ θ(m − θ)`, zero for an exact solution.
    pub fn balance(&self, m: &SpatialField) -> f64 {
        self.theta
            .values
            .iter()
            .zip(&m.values)
            .zip(self.theta.grid.weights())
            .map(|((t, mv), w)| w * t * (mv - t))
            .sum()
    }
}

fn residual(op: &LinearOperator, alpha: f64, m: &[f64], theta: &[f64]) -> Vec<f64> {
    let mut r = op.apply(theta);
    for i in 0..r.len() {
        r[i] = alpha * r[i] + theta[i] * (m[i] - theta[i]);
    }
    r
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Solves for `θ_α` with Newton's method from `θ₀ = max(m, 10⁻³)`.
pub fn solve_theta(alpha: f64, m: &SpatialField, grid: &SpatialGrid, tol: f64) -> Result<LogisticSolution> {
    let start: Vec<f64> = m.values.iter().map(|v| v.max(INITIAL_FLOOR)).collect();
    solve_theta_from(alpha, m, grid, tol, start)
}

/// As [`solve_theta`] with a caller-supplied positive initial guess.
pub fn solve_theta_from(
    alpha: f64,
    m: &SpatialField,
    grid: &SpatialGrid,
    tol: f64,
    start: Vec<f64>,
) -> Result<LogisticSolution> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("diffusivity must be positive, got {alpha}")));
    }
    if *m.grid != *grid {
        return Err(Error::GridMismatch("habitat sampled on a different grid".into()));
    }
    if start.len() != grid.len() || start.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("initial guess must be positive on every node".into()));
    }
    let total: f64 = m.integral();
    if !(total > 0.0) {
        return Err(Error::Habitat(format!(
            "integral of m is {total:.6e}; the only non-negative solution is zero"
        )));
    }
    let op = build_spatial_laplacian(grid);
    let mv = &m.values;
    let mut theta = start;
    let tol = tol.max(rounding_floor(grid, alpha, mv));
    // Newton from far below the carrying capacity can land on θ ≡ 0; march
    // such starts upward first. A positive solution has ∫θ ≥ ∫m.
    let weighted = |v: &[f64]| -> f64 { v.iter().zip(grid.weights()).map(|(a, w)| a * w).sum() };
    let mut marches = 0;
    while weighted(&theta) < total && marches < 10 {
        theta = pseudo_time(&op, alpha, mv, theta, 20);
        marches += 1;
    }
    let mut r = residual(&op, alpha, mv, &theta);
    let mut rnorm = sup(&r);
    let mut iterations = 0;
    let mut stalls = 0;
    while rnorm > tol {
        if iterations >= MAX_NEWTON {
            return Err(Error::NonConvergence {
                solver: "logistic Newton",
                iterations,
                residual: rnorm,
            });
        }
        iterations += 1;
        let diag: Vec<f64> = (0..theta.len()).map(|i| mv[i] - 2.0 * theta[i]).collect();
        let jac = op.matrix().scaled_plus_diagonal(alpha, &diag);
        let lu = BandedLu::factor(&jac)?;
        let mut step: Vec<f64> = r.iter().map(|v| -v).collect();
        lu.solve_in_place(&mut step);

        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda >= 1e-4 {
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(t, d)| t + lambda * d).collect();
            if trial.iter().all(|v| *v > 0.0) {
                let rt = residual(&op, alpha, mv, &trial);
                let nt = sup(&rt);
                if nt < (1.0 - 1e-4 * lambda) * rnorm || nt <= tol {
                    theta = trial;
                    r = rt;
                    rnorm = nt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            stalls += 1;
            if stalls > 20 {
                return Err(Error::NegativeSolution("logistic Newton"));
            }
            theta = pseudo_time(&op, alpha, mv, theta, 20);
            r = residual(&op, alpha, mv, &theta);
            rnorm = sup(&r);
        }
    }
    // One polishing step so the result does not depend on where the
    // tolerance was crossed.
    let diag: Vec<f64> = (0..theta.len()).map(|i| mv[i] - 2.0 * theta[i]).collect();
    let lu = BandedLu::factor(&op.matrix().scaled_plus_diagonal(alpha, &diag))?;
    let mut step: Vec<f64> = r.iter().map(|v| -v).collect();
    lu.solve_in_place(&mut step);
    let trial: Vec<f64> = theta.iter().zip(&step).map(|(t, d)| t + d).collect();
    let rt = residual(&op, alpha, mv, &trial);
    if trial.iter().all(|v| *v > 0.0) && sup(&rt) <= rnorm {
        theta = trial;
        rnorm = sup(&rt);
    }
    if theta.iter().any(|v| !(*v > 0.0)) || weighted(&theta) < total * (1.0 - 1e-8) {
        return Err(Error::NegativeSolution("logistic Newton"));
    }
    Ok(LogisticSolution {
        theta: SpatialField::new(Arc::new(grid.clone()), theta)?,
        alpha,
        residual_inf: rnorm,
        iterations,
    })
}

/// Smallest residual resolvable in double precision: the stencil sums terms of
/// size `α · 4/h² · θ` that cancel to the residual.
fn rounding_floor(grid: &SpatialGrid, alpha: f64, m: &[f64]) -> f64 {
    let stiff: f64 = (0..grid.dimension()).map(|a| 4.0 / grid.spacing(a).powi(2)).sum();
    let scale = m.iter().fold(1.0f64, |a, b| a.max(b.abs()));
    16.0 * f64::EPSILON * (alpha * stiff + scale) * scale
}

/// Positivity-preserving semi-implicit steps
/// `(I − dt αΔ + dt(θ + m⁻)) θ⁺ = θ(1 + dt m⁺)`; the matrix is an M-matrix.
fn pseudo_time(op: &LinearOperator, alpha: f64, m: &[f64], mut theta: Vec<f64>, steps: usize) -> Vec<f64> {
    let mut dt = 0.1;
    for _ in 0..steps {
        let diag: Vec<f64> = (0..theta.len())
            .map(|i| 1.0 + dt * (theta[i] + (-m[i]).max(0.0)))
            .collect();
        let mat = op.matrix().scaled_plus_diagonal(-dt * alpha, &diag);
        let Ok(lu) = BandedLu::factor(&mat) else { break };
        let mut rhs: Vec<f64> = (0..theta.len()).map(|i| theta[i] * (1.0 + dt * m[i].max(0.0))).collect();
        lu.solve_in_place(&mut rhs);
        theta = rhs.into_iter().map(|v| v.max(f64::MIN_POSITIVE)).collect();
        dt = (dt * 2.0).min(100.0);
    }
    theta
}
