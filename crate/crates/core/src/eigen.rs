//! Principal eigenpairs of `−αΔ + h(x)` under zero-flux conditions, their
//! α-derivatives and the eigenvalue curves built on the logistic profile.
//!
//! The discrete operator `A = −αΔ_h + h` is self-adjoint in the trapezoidal
//! inner product, so `W A = −αK + W h` is a symmetric matrix. Shifted inverse
//! iteration keeps every shift strictly below `λ₁`, which is certified by a
//! successful Cholesky factorization of `W(A − σ)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_spatial_laplacian, LinearOperator, SpatialField, SpatialGrid};
use crate::linalg::{weighted_cg, BandedCholesky, CgFailure, CsrMatrix};
use crate::logistic::LogisticSolution;

const MAX_OUTER: usize = 200;

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda: f64,
    pub phi: SpatialField,
    pub residual_inf: f64,
    /// Target value of `∫ φ²`.
    pub normalization: f64,
    pub alpha: f64,
}

/// Eigenvalue curve `α ↦ σ(α)` with its first derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaCurve {
    pub alphas: Vec<f64>,
    pub sigma: Vec<f64>,
    pub derivative: Vec<f64>,
    /// `σ(α_lo)`.
    pub sigma0: f64,
    /// `∂σ/∂α(α_lo)`.
    pub sigma1: f64,
}

impl SigmaCurve {
    pub fn is_increasing(&self) -> bool {
        self.sigma.windows(2).all(|w| w[1] > w[0])
    }
}

struct Problem<'a> {
    op: &'a LinearOperator,
    alpha: f64,
    h: &'a [f64],
}

impl Problem<'_> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.op.apply_into(x, out);
        for i in 0..out.len() {
            out[i] = -self.alpha * out[i] + self.h[i] * x[i];
        }
    }

    /// Symmetric `W(A − σ)`.
    fn weighted_shifted(&self, sigma: f64) -> CsrMatrix {
        let w = self.op.mass();
        let d: Vec<f64> = (0..w.len()).map(|i| w[i] * (self.h[i] - sigma)).collect();
        self.op.stiffness().scaled_plus_diagonal(-self.alpha, &d)
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.op.mass().iter().zip(a.iter().zip(b)).map(|(w, (x, y))| w * x * y).sum()
    }
}

/// Smallest eigenvalue of `−αΔ_h + h` and its positive eigenfunction with
/// `∫ φ² = normalization`.
pub fn principal_eigenpair(alpha: f64, h: &SpatialField, grid: &SpatialGrid, normalization: f64) -> Result<EigenPair> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("diffusivity must be positive, got {alpha}")));
    }
    if *h.grid != *grid {
        return Err(Error::GridMismatch("potential sampled on a different grid".into()));
    }
    if !(normalization > 0.0) {
        return Err(Error::InvalidParameter("normalization must be positive".into()));
    }
    let op = build_spatial_laplacian(grid);
    principal_with_operator(&op, alpha, h, normalization)
}

pub(crate) fn principal_with_operator(
    op: &LinearOperator,
    alpha: f64,
    h: &SpatialField,
    normalization: f64,
) -> Result<EigenPair> {
    let n = op.len();
    let prob = Problem { op, alpha, h: &h.values };
    let mut sigma = h.min() - 1.0;
    let mut chol = BandedCholesky::factor(&prob.weighted_shifted(sigma)).ok_or_else(|| {
        Error::Invariant("shift below min h is not positive definite".into())
    })?;
    let mut phi = vec![1.0; n];
    let norm = prob.dot(&phi, &phi).sqrt();
    phi.iter_mut().for_each(|v| *v /= norm);
    let mut rho = f64::INFINITY;
    let mut work = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_OUTER {
        let mut next = vec![0.0; n];
        let solve = weighted_cg(
            |x, y| {
                prob.apply(x, y);
                for i in 0..y.len() {
                    y[i] -= sigma * x[i];
                }
            },
            |r, z| {
                let w = op.mass();
                for i in 0..z.len() {
                    z[i] = w[i] * r[i];
                }
                chol.solve_in_place(z);
            },
            op.mass(),
            &phi,
            &mut next,
            1e-14,
            50,
        );
        match solve {
            Ok(_) | Err(CgFailure::MaxIterations(_)) => {}
            Err(CgFailure::Indefinite) => {
                return Err(Error::NonConvergence {
                    solver: "inverse iteration (indefinite shift)",
                    iterations: 0,
                    residual,
                })
            }
        }
        let norm = prob.dot(&next, &next).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NonConvergence {
                solver: "inverse iteration",
                iterations: 0,
                residual,
            });
        }
        next.iter_mut().for_each(|v| *v /= norm);
        phi = next;
        prob.apply(&phi, &mut work);
        let rho_next = prob.dot(&phi, &work);
        let mut r_w = 0.0;
        residual = 0.0;
        for i in 0..n {
            let r = work[i] - rho_next * phi[i];
            residual = f64::max(residual, r.abs());
            r_w += op.mass()[i] * r * r;
        }
        let r_w = r_w.sqrt();
        let settled = (rho - rho_next).abs() <= 4.0 * f64::EPSILON * (1.0 + rho_next.abs());
        rho = rho_next;
        let scale = 1.0 + rho.abs();
        if settled && r_w <= 1e-11 * scale * phi_sup(&phi) {
            break;
        }
        // Raise the shift toward ρ − 2‖r‖ while it stays below λ₁.
        let margin = (2.0 * r_w).max(1e-10 * scale);
        let mut target = rho - margin;
        if target > sigma {
            for _ in 0..30 {
                if let Some(c) = BandedCholesky::factor(&prob.weighted_shifted(target)) {
                    sigma = target;
                    chol = c;
                    break;
                }
                target = 0.5 * (sigma + target);
            }
        }
    }
    let sup_phi = phi_sup(&phi);
    if residual > 1e-9 * (1.0 + rho.abs()) * sup_phi {
        return Err(Error::NonConvergence {
            solver: "inverse iteration",
            iterations: MAX_OUTER,
            residual,
        });
    }
    let mean: f64 = phi.iter().zip(op.mass()).map(|(v, w)| v * w).sum();
    if mean < 0.0 {
        phi.iter_mut().for_each(|v| *v = -*v);
    }
    if phi.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Invariant(
            "principal eigenfunction changes sign".into(),
        ));
    }
    let current = prob.dot(&phi, &phi);
    let scale = (normalization / current).sqrt();
    phi.iter_mut().for_each(|v| *v *= scale);
    Ok(EigenPair {
        lambda: rho,
        phi: SpatialField {
            grid: h.grid.clone(),
            values: phi,
        },
        residual_inf: residual * scale,
        normalization,
        alpha,
    })
}

fn phi_sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// `∂λ₁/∂α = ∫|∇φ|² / ∫φ²`, exact for the discrete operator.
pub fn eigen_derivative_alpha(pair: &EigenPair, grid: &SpatialGrid) -> Result<f64> {
    if *pair.phi.grid != *grid {
        return Err(Error::GridMismatch("eigenfunction lives on a different grid".into()));
    }
    let op = build_spatial_laplacian(grid);
    Ok(gradient_ratio(&op, &pair.phi.values))
}

fn gradient_ratio(op: &LinearOperator, phi: &[f64]) -> f64 {
    let mass: f64 = phi.iter().zip(op.mass()).map(|(v, w)| w * v * v).sum();
    op.energy(phi) / mass
}

/// `(∫ α|∇φ|² + hφ²) / ∫ φ²`.
pub fn rayleigh_quotient(alpha: f64, h: &SpatialField, phi: &SpatialField) -> Result<f64> {
    if h.grid != phi.grid {
        return Err(Error::GridMismatch("potential and test function on different grids".into()));
    }
    let w = phi.grid.weights();
    let mass: f64 = phi.values.iter().zip(w).map(|(v, w)| w * v * v).sum();
    if mass == 0.0 {
        return Err(Error::ZeroField);
    }
    let op = build_spatial_laplacian(&phi.grid);
    let potential: f64 = (0..w.len()).map(|i| w[i] * h.values[i] * phi.values[i].powi(2)).sum();
    Ok((alpha * op.energy(&phi.values) + potential) / mass)
}

/// Eigenvalue curve of `−αΔ + h` with `∫φ² = normalization`, sampled at
/// `alphas` and expanded at `alpha_lo`.
pub fn sigma_curve(
    h: &SpatialField,
    normalization: f64,
    alpha_lo: f64,
    alphas: &[f64],
) -> Result<SigmaCurve> {
    let op = build_spatial_laplacian(&h.grid);
    let base = principal_with_operator(&op, alpha_lo, h, normalization)?;
    let mut sigma = Vec::with_capacity(alphas.len());
    let mut derivative = Vec::with_capacity(alphas.len());
    for &a in alphas {
        if !(a > 0.0) {
            return Err(Error::InvalidParameter(format!("diffusivity must be positive, got {a}")));
        }
        let pair = principal_with_operator(&op, a, h, normalization)?;
        derivative.push(gradient_ratio(&op, &pair.phi.values));
        sigma.push(pair.lambda);
    }
    Ok(SigmaCurve {
        alphas: alphas.to_vec(),
        sigma,
        derivative,
        sigma0: base.lambda,
        sigma1: gradient_ratio(&op, &base.phi.values),
    })
}

/// `σ*(α)`: the curve for `h = θ_{α_lo} − m` normalized by `∫ψ² = ∫θ²`,
/// where `theta` is the logistic solution at `α_lo`.
pub fn sigma_star_curve(m: &SpatialField, theta: &LogisticSolution, alphas: &[f64]) -> Result<SigmaCurve> {
    let h = potential(theta, m)?;
    let normalization = l2_mass(&theta.theta);
    sigma_curve(&h, normalization, theta.alpha, alphas)
}

/// `θ − m` on the common grid.
pub fn potential(theta: &LogisticSolution, m: &SpatialField) -> Result<SpatialField> {
    if theta.theta.grid != m.grid {
        return Err(Error::GridMismatch("θ and m on different grids".into()));
    }
    Ok(SpatialField {
        grid: Arc::clone(&m.grid),
        values: theta.theta.values.iter().zip(&m.values).map(|(t, m)| t - m).collect(),
    })
}

/// `∫ f²`.
pub fn l2_mass(f: &SpatialField) -> f64 {
    f.values.iter().zip(f.grid.weights()).map(|(v, w)| w * v * v).sum()
}
