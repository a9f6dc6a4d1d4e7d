//! The nonlocal mutation–selection problem on `D × [α_lo, α_hi]`:
//!
//! ```text
//! u_t = αΔ_x u + ε² u_αα + (m(x) − û(x)) u,   û = ∫ u dα.
//! ```
//!
//! Time stepping is IMEX: the linear part `A = αΔ_x + ε²∂²_α` is implicit and
//! inverted exactly through the spatial eigenbasis (one tridiagonal solve in α
//! per spatial mode); the reaction is explicit. Steady states in one space
//! dimension use Newton's method with the full Jacobian, eliminated block by
//! block along `x`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::asymptotics::build_theory_profile;
use crate::error::{Error, Result};
use crate::grid::{
    build_spatial_laplacian, build_trait_laplacian, integrate_trait, LinearOperator, SpatialField,
    SpatialGrid, SpatialModes, StateField, TraitGrid,
};
use crate::habitat::validate_habitat;
use crate::linalg::{solve_tridiagonal, weighted_cg, BlockTridiagonal, CgFailure};

/// Sup-norm beyond which a trajectory is declared to blow up.
pub const BLOW_UP: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub m: SpatialField,
    pub traits: Arc<TraitGrid>,
    pub epsilon: f64,
    /// Admit constant `m` (the no-selection case).
    pub trivial: bool,
    /// Step for pseudo-time fallback and default evolution.
    pub dt: f64,
    /// Steady state when `residual_inf ≤ tol_factor · (1 + sup u)`.
    pub tol_factor: f64,
    pub max_newton: usize,
}

impl ModelConfig {
    pub fn new(
        m: SpatialField,
        alpha_lo: f64,
        alpha_hi: f64,
        epsilon: f64,
        trait_cells: Option<usize>,
        trivial: bool,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        validate_habitat(&m, trivial)?;
        let cells = trait_cells.unwrap_or_else(|| TraitGrid::layer_resolving_cells(alpha_lo, alpha_hi, epsilon));
        let traits = Arc::new(TraitGrid::new(alpha_lo, alpha_hi, cells)?);
        Ok(Self {
            m,
            traits,
            epsilon,
            trivial,
            dt: 0.2,
            tol_factor: 1e-9,
            max_newton: 80,
        })
    }

    /// `D = (0,1)` with 96 cells, `m = 1 + cos(πx)/2`, `[α_lo, α_hi] = [0.5, 2]`.
    pub fn desk_scale(epsilon: f64) -> Result<Self> {
        let grid = Arc::new(SpatialGrid::unit_interval(96)?);
        let m = crate::habitat::Habitat::default().sample(grid)?;
        Self::new(m, 0.5, 2.0, epsilon, None, false)
    }

    pub fn spatial(&self) -> &Arc<SpatialGrid> {
        &self.m.grid
    }

    pub fn alpha_lo(&self) -> f64 {
        self.traits.lo()
    }

    pub fn alpha_hi(&self) -> f64 {
        self.traits.hi()
    }

    pub fn len(&self) -> usize {
        self.spatial().len() * self.traits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Product quadrature weights `w_x ⊗ w_α`.
    pub fn weights(&self) -> Vec<f64> {
        let wa = self.traits.weights();
        self.spatial()
            .weights()
            .iter()
            .flat_map(|wx| wa.iter().map(move |w| wx * w))
            .collect()
    }

    fn field(&self, values: Vec<f64>) -> StateField {
        StateField {
            spatial: self.spatial().clone(),
            traits: self.traits.clone(),
            values,
        }
    }

    /// `u ≡ ∫m / (|D| (α_hi − α_lo))`, the trait-flat guess.
    pub fn uniform_guess(&self) -> StateField {
        let level = self.m.mean().max(1e-3) / self.traits.width();
        self.field(vec![level; self.len()])
    }
}

/// `A u = α Δ_x u + ε² ∂²_α u` on the product grid.
#[derive(Debug, Clone)]
pub struct ProductOperator {
    spatial: LinearOperator,
    traits: LinearOperator,
    alphas: Vec<f64>,
    eps2: f64,
}

impl ProductOperator {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            spatial: build_spatial_laplacian(config.spatial()),
            traits: build_trait_laplacian(&config.traits),
            alphas: config.traits.nodes().to_vec(),
            eps2: config.epsilon * config.epsilon,
        }
    }

    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let na = self.alphas.len();
        let lx = self.spatial.matrix();
        let la = self.traits.matrix();
        for i in 0..self.spatial.len() {
            let row = &mut out[i * na..(i + 1) * na];
            row.iter_mut().for_each(|v| *v = 0.0);
            for (c, v) in lx.row(i) {
                let src = &u[c * na..(c + 1) * na];
                for j in 0..na {
                    row[j] += self.alphas[j] * v * src[j];
                }
            }
            let src = &u[i * na..(i + 1) * na];
            for j in 0..na {
                let mut acc = 0.0;
                for (c, v) in la.row(j) {
                    acc += v * src[c];
                }
                row[j] += self.eps2 * acc;
            }
        }
    }

    pub fn spatial(&self) -> &LinearOperator {
        &self.spatial
    }

    pub fn traits(&self) -> &LinearOperator {
        &self.traits
    }
}

/// Direct solver for `(a I − b A) x = r` with `a > 0`, `b ≥ 0`.
#[derive(Debug, Clone)]
pub struct SeparableSolver {
    modes: SpatialModes,
    alphas: Vec<f64>,
    eps2: f64,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl SeparableSolver {
    pub fn new(config: &ModelConfig) -> Self {
        let la = build_trait_laplacian(&config.traits);
        let na = config.traits.len();
        let mut lower = vec![0.0; na];
        let mut diag = vec![0.0; na];
        let mut upper = vec![0.0; na];
        for j in 0..na {
            for (c, v) in la.matrix().row(j) {
                if c + 1 == j {
                    lower[j] = v;
                } else if c == j {
                    diag[j] = v;
                } else if c == j + 1 {
                    upper[j] = v;
                }
            }
        }
        Self {
            modes: SpatialModes::new(config.spatial()),
            alphas: config.traits.nodes().to_vec(),
            eps2: config.epsilon * config.epsilon,
            lower,
            diag,
            upper,
        }
    }

    pub fn solve(&self, a: f64, b: f64, rhs: &[f64]) -> Vec<f64> {
        let na = self.alphas.len();
        let mut coeff = self.modes.to_modes(rhs, na);
        let lower: Vec<f64> = self.lower.iter().map(|v| -b * self.eps2 * v).collect();
        let upper: Vec<f64> = self.upper.iter().map(|v| -b * self.eps2 * v).collect();
        let mut d = vec![0.0; na];
        for (k, &lam) in self.modes.eigenvalues().iter().enumerate() {
            for j in 0..na {
                d[j] = a - b * (self.alphas[j] * lam + self.eps2 * self.diag[j]);
            }
            solve_tridiagonal(&lower, &d, &upper, &mut coeff[k * na..(k + 1) * na]);
        }
        self.modes.from_modes(&coeff, na)
    }
}

/// Explicit reaction rate `m − û` on the spatial nodes.
fn reaction_rate(config: &ModelConfig, u: &[f64]) -> Vec<f64> {
    let na = config.traits.len();
    let w = config.traits.weights();
    config
        .m
        .values
        .iter()
        .enumerate()
        .map(|(i, m)| m - u[i * na..(i + 1) * na].iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// Fixed-step IMEX integrator `(I − dt A) u⁺ = u + dt (m − û) u`.
#[derive(Debug, Clone)]
pub struct Evolver {
    config: ModelConfig,
    solver: SeparableSolver,
    dt: f64,
    time: f64,
}

impl Evolver {
    pub fn new(config: &ModelConfig, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
        }
        Ok(Self {
            config: config.clone(),
            solver: SeparableSolver::new(config),
            dt,
            time: 0.0,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Advances one step. Positivity needs `1 + dt (m − û) > 0` everywhere.
    pub fn step(&mut self, u: &mut StateField) -> Result<()> {
        let na = self.config.traits.len();
        let rate = reaction_rate(&self.config, &u.values);
        if rate.iter().any(|r| 1.0 + self.dt * r <= 0.0) {
            return Err(Error::NonPositive { time: self.time });
        }
        let rhs: Vec<f64> = u
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| v * (1.0 + self.dt * rate[k / na]))
            .collect();
        let next = self.solver.solve(1.0, self.dt, &rhs);
        self.time += self.dt;
        let mut sup = 0.0f64;
        for v in &next {
            if !v.is_finite() {
                return Err(Error::BlowUp { time: self.time, sup: f64::INFINITY });
            }
            sup = sup.max(*v);
        }
        if sup > BLOW_UP {
            return Err(Error::BlowUp { time: self.time, sup });
        }
        // The implicit factor is an M-matrix inverse, so values below zero are
        // rounding noise in the far tail.
        let floor = -1e-12 * sup;
        if next.iter().any(|v| *v < floor) {
            return Err(Error::NonPositive { time: self.time });
        }
        u.values = next.into_iter().map(|v| v.max(0.0)).collect();
        Ok(())
    }
}

fn check_state(config: &ModelConfig, u: &StateField) -> Result<()> {
    if u.spatial != *config.spatial() || u.traits != config.traits {
        return Err(Error::GridMismatch("state does not live on the configured grids".into()));
    }
    if u.values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParameter("initial density must be finite and non-negative".into()));
    }
    if u.values.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroField);
    }
    Ok(())
}

/// Integrates from `u0` up to `t_end` with fixed step `dt` (the last step is
/// shortened to land on `t_end`).
pub fn evolve(config: &ModelConfig, u0: &StateField, t_end: f64, dt: f64) -> Result<StateField> {
    check_state(config, u0)?;
    let mut u = u0.clone();
    if t_end <= 0.0 {
        return Ok(u);
    }
    let steps = (t_end / dt).ceil() as usize;
    let step = t_end / steps as f64;
    let mut ev = Evolver::new(config, step)?;
    for _ in 0..steps {
        ev.step(&mut u)?;
    }
    Ok(u)
}

/// Marches until successive iterates differ by at most `tol` in sup-norm per
/// unit time, or `t_max` is reached.
pub fn evolve_to_rest(config: &ModelConfig, u0: &StateField, dt: f64, tol: f64, t_max: f64) -> Result<(StateField, f64)> {
    check_state(config, u0)?;
    let mut ev = Evolver::new(config, dt)?;
    let mut u = u0.clone();
    let op = ProductOperator::new(config);
    let mut scratch = vec![0.0; u.values.len()];
    while ev.time() < t_max {
        for _ in 0..10 {
            ev.step(&mut u)?;
        }
        let r = steady_residual(config, &op, &u.values, &mut scratch);
        if r <= tol * (1.0 + u.sup()) {
            return Ok((u, ev.time()));
        }
    }
    Err(Error::NonConvergence {
        solver: "time marching",
        iterations: (ev.time() / dt) as usize,
        residual: steady_residual(config, &op, &u.values, &mut scratch),
    })
}

fn steady_residual(config: &ModelConfig, op: &ProductOperator, u: &[f64], out: &mut [f64]) -> f64 {
    residual_into(config, op, u, out);
    out.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// `F(u) = A u + (m − û) u`.
fn residual_into(config: &ModelConfig, op: &ProductOperator, u: &[f64], out: &mut [f64]) {
    op.apply(u, out);
    let na = config.traits.len();
    let rate = reaction_rate(config, u);
    for (k, v) in out.iter_mut().enumerate() {
        *v += rate[k / na] * u[k];
    }
}

/// Converged positive steady state.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub u: StateField,
    pub u_hat: SpatialField,
    /// `v = ∫ α u dα`.
    pub v: SpatialField,
    pub residual_inf: f64,
    pub iterations: usize,
    pub epsilon: f64,
}

/// Identities every steady state satisfies, evaluated on a computed one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateChecks {
    pub residual_inf: f64,
    pub min_u: f64,
    /// `∫ û (m − û)`.
    pub balance: f64,
    /// `∫ (û − m)`.
    pub excess: f64,
    /// `min_x (v − α_lo û)` and `min_x (α_hi û − v)`.
    pub comparison_margin: f64,
    /// `max û − (α_hi/α_lo) max m`.
    pub uhat_bound_margin: f64,
    /// `‖Δv + (m − û) û‖_∞`.
    pub v_identity_inf: f64,
    /// `J_ε[u] / ∫u²`, zero at a steady state.
    pub rayleigh: f64,
    /// Constant `m`, where `∫(û − m)` vanishes instead of being positive.
    pub constant_habitat: bool,
}

impl SteadyStateChecks {
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.min_u > 0.0) {
            out.push(format!("density not positive (min {:.3e})", self.min_u));
        }
        if self.balance.abs() > 1e-8 {
            out.push(format!("∫û(m−û) = {:.3e}", self.balance));
        }
        if self.constant_habitat {
            if self.excess.abs() > 1e-8 {
                out.push(format!("∫(û−m) = {:.3e} not zero for constant m", self.excess));
            }
        } else if !(self.excess > 0.0) {
            out.push(format!("∫(û−m) = {:.3e} not positive", self.excess));
        }
        if self.comparison_margin < -1e-12 {
            out.push(format!("α_lo û ≤ v ≤ α_hi û violated by {:.3e}", -self.comparison_margin));
        }
        if self.uhat_bound_margin > 1e-3 {
            out.push(format!("max û exceeds (α_hi/α_lo) max m by {:.3e}", self.uhat_bound_margin));
        }
        if self.rayleigh.abs() > 1e-6 {
            out.push(format!("Rayleigh quotient {:.3e} not zero", self.rayleigh));
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }
}

impl SteadyState {
    fn from_field(config: &ModelConfig, u: StateField, residual_inf: f64, iterations: usize) -> Self {
        let u_hat = integrate_trait(&u);
        let na = config.traits.len();
        let wa = config.traits.weights();
        let alphas = config.traits.nodes();
        let v_values = (0..config.spatial().len())
            .map(|i| (0..na).map(|j| wa[j] * alphas[j] * u.values[i * na + j]).sum())
            .collect();
        Self {
            v: SpatialField {
                grid: config.spatial().clone(),
                values: v_values,
            },
            u_hat,
            u,
            residual_inf,
            iterations,
            epsilon: config.epsilon,
        }
    }

    /// `h_ε = û − m`.
    pub fn potential(&self, m: &SpatialField) -> SpatialField {
        SpatialField {
            grid: m.grid.clone(),
            values: self.u_hat.values.iter().zip(&m.values).map(|(u, m)| u - m).collect(),
        }
    }

    pub fn checks(&self, config: &ModelConfig) -> SteadyStateChecks {
        let op = ProductOperator::new(config);
        let mut f = vec![0.0; self.u.values.len()];
        residual_into(config, &op, &self.u.values, &mut f);
        let residual_inf = f.iter().fold(0.0, |a: f64, b| a.max(b.abs()));
        let m = &config.m;
        let wx = config.spatial().weights();
        let (lo, hi) = (config.alpha_lo(), config.alpha_hi());
        let mut balance = 0.0;
        let mut excess = 0.0;
        let mut comparison = f64::INFINITY;
        for i in 0..wx.len() {
            let uh = self.u_hat.values[i];
            balance += wx[i] * uh * (m.values[i] - uh);
            excess += wx[i] * (uh - m.values[i]);
            let v = self.v.values[i];
            comparison = comparison.min(v - lo * uh).min(hi * uh - v);
        }
        let lv = op.spatial().apply(&self.v.values);
        let v_identity_inf = (0..wx.len())
            .map(|i| (lv[i] + (m.values[i] - self.u_hat.values[i]) * self.u_hat.values[i]).abs())
            .fold(0.0, f64::max);
        let w = config.weights();
        let uf: f64 = (0..f.len()).map(|k| w[k] * self.u.values[k] * f[k]).sum();
        let uu: f64 = (0..f.len()).map(|k| w[k] * self.u.values[k].powi(2)).sum();
        SteadyStateChecks {
            residual_inf,
            min_u: self.u.min(),
            balance,
            excess,
            comparison_margin: comparison,
            uhat_bound_margin: self.u_hat.max() - hi / lo * m.max(),
            v_identity_inf,
            rayleigh: -uf / uu,
            constant_habitat: !m.is_nonconstant(1e-12 * (1.0 + m.sup_norm())),
        }
    }

    /// `(‖∂_α log u‖_∞, ‖∇_x log u‖_∞)` from nearest-neighbour differences.
    pub fn log_gradient_norms(&self) -> (f64, f64) {
        let na = self.u.traits.len();
        let ha = self.u.traits.spacing();
        let mut trait_norm = 0.0f64;
        for i in 0..self.u.spatial.len() {
            let row = self.u.trait_slice(i);
            for j in 0..na - 1 {
                trait_norm = trait_norm.max((row[j + 1].ln() - row[j].ln()).abs() / ha);
            }
        }
        let mut space_norm = 0.0f64;
        for (a, b, h) in self.u.spatial.edges() {
            for j in 0..na {
                let d = (self.u.values[b * na + j].ln() - self.u.values[a * na + j].ln()).abs() / h;
                space_norm = space_norm.max(d);
            }
        }
        (trait_norm, space_norm)
    }
}

/// Starting point for [`solve_steady_state_from`].
#[derive(Debug, Clone)]
pub enum InitialGuess {
    /// `ε^{-2/3} θ(x) η*((α − α_lo)/ε^{2/3})`, falling back to `Uniform` when
    /// the profile is undefined (constant `m`).
    Theory,
    /// Trait-flat density carrying the mean of `m`.
    Uniform,
    Field(StateField),
}

pub fn theory_guess(config: &ModelConfig) -> Result<StateField> {
    let theory = build_theory_profile(&config.m, config)?;
    let mut u = theory.predicted(config.epsilon, config.traits.clone());
    let sup = u.sup();
    u.values.iter_mut().for_each(|v| *v = v.max(1e-30 * sup));
    Ok(u)
}

/// Positive steady state from the theory-profile initial guess.
pub fn solve_steady_state(config: &ModelConfig) -> Result<SteadyState> {
    solve_steady_state_from(config, InitialGuess::Theory)
}

pub fn solve_steady_state_from(config: &ModelConfig, guess: InitialGuess) -> Result<SteadyState> {
    let mu1 = existence_mu1(config)?;
    if mu1 >= 0.0 {
        return Err(Error::NonExistence { mu1 });
    }
    let u0 = match guess {
        InitialGuess::Theory => match theory_guess(config) {
            Ok(u) => u,
            Err(Error::InvalidA1(_)) | Err(Error::Habitat(_)) => config.uniform_guess(),
            Err(e) => return Err(e),
        },
        InitialGuess::Uniform => config.uniform_guess(),
        InitialGuess::Field(u) => {
            check_state(config, &u)?;
            let sup = u.sup();
            let mut u = u;
            u.values.iter_mut().for_each(|v| *v = v.max(1e-30 * sup));
            u
        }
    };
    let u0 = lift_mass(config, u0);
    if config.spatial().dimension() == 1 {
        let state = newton(config, u0)?;
        if on_positive_branch(config, &state) {
            return Ok(state);
        }
        // A guess far below the positive branch can be drawn to u ≡ 0;
        // restart from the trait-flat density.
        let state = newton(config, config.uniform_guess())?;
        if on_positive_branch(config, &state) {
            return Ok(state);
        }
        Err(Error::Invariant("Newton converged to the zero solution".into()))
    } else {
        let tol = config.tol_factor;
        let (u, t) = evolve_to_rest(config, &u0, config.dt, tol, 1e6)?;
        let op = ProductOperator::new(config);
        let mut scratch = vec![0.0; u.values.len()];
        let r = steady_residual(config, &op, &u.values, &mut scratch);
        Ok(SteadyState::from_field(config, u, r, (t / config.dt) as usize))
    }
}

/// Solves from the theory-profile and the trait-flat guesses and returns the
/// sup-norm distance between the two results. Uniqueness is not known, so a
/// large value is a finding to report rather than an error.
pub fn guess_independence(config: &ModelConfig) -> Result<f64> {
    let a = solve_steady_state_from(config, InitialGuess::Theory)?;
    let b = solve_steady_state_from(config, InitialGuess::Uniform)?;
    a.u.distance_inf(&b.u)
}

/// Scales `u` up so that `∫∫u ≥ ∫m`, which every positive steady state satisfies.
fn lift_mass(config: &ModelConfig, mut u: StateField) -> StateField {
    let target = config.m.integral();
    let mass = u.total_mass();
    if mass > 0.0 && mass < target {
        let factor = target / mass;
        u.values.iter_mut().for_each(|v| *v *= factor);
    }
    u
}

fn on_positive_branch(config: &ModelConfig, state: &SteadyState) -> bool {
    state.u_hat.integral() >= 0.5 * config.m.integral()
}

/// Newton's method with a positivity-preserving multiplicative update
/// `u ← u exp(λ δ/u)` and backtracking on the weighted residual norm.
fn newton(config: &ModelConfig, u0: StateField) -> Result<SteadyState> {
    let op = ProductOperator::new(config);
    let n = config.len();
    let w = config.weights();
    let merit = |f: &[f64]| -> f64 { f.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>().sqrt() };
    let mut u = u0.values;
    let mut f = vec![0.0; n];
    residual_into(config, &op, &u, &mut f);
    let mut phi = merit(&f);
    let mut evolver = Evolver::new(config, config.dt)?;
    let mut iterations = 0;
    let mut fallbacks = 0;
    loop {
        let rinf = f.iter().fold(0.0, |a: f64, b| a.max(b.abs()));
        let sup = u.iter().fold(0.0, |a: f64, b| a.max(*b));
        if rinf <= config.tol_factor * (1.0 + sup) {
            let field = config.field(u);
            return Ok(SteadyState::from_field(config, field, rinf, iterations));
        }
        if iterations >= config.max_newton {
            return Err(Error::NonConvergence {
                solver: "steady-state Newton",
                iterations,
                residual: rinf,
            });
        }
        iterations += 1;
        let mut delta: Vec<f64> = f.iter().map(|v| -v).collect();
        jacobian(config, &op, &u).solve(&mut delta)?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<f64> = (0..n)
                .map(|k| {
                    let rel = (lambda * delta[k] / u[k]).clamp(-30.0, 30.0);
                    if rel.abs() < 1e-3 {
                        // Plain additive step where it is safe; keeps the
                        // quadratic convergence of Newton's method.
                        u[k] + lambda * delta[k]
                    } else {
                        u[k] * rel.exp()
                    }
                })
                .collect();
            let mut ft = vec![0.0; n];
            residual_into(config, &op, &trial, &mut ft);
            let pt = merit(&ft);
            if pt.is_finite() && pt <= (1.0 - 1e-4 * lambda) * phi {
                u = trial;
                f = ft;
                phi = pt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            fallbacks += 1;
            if fallbacks > 10 {
                return Err(Error::NonConvergence {
                    solver: "steady-state Newton (stalled)",
                    iterations,
                    residual: rinf,
                });
            }
            let mut field = config.field(u);
            for _ in 0..50 {
                evolver.step(&mut field)?;
            }
            let sup = field.sup();
            u = field.values.into_iter().map(|v| v.max(1e-30 * sup)).collect();
            residual_into(config, &op, &u, &mut f);
            phi = merit(&f);
        }
    }
}

/// `J = A + diag(m − û) − diag(u) E Q` with `E Q δ = ∫ δ dα` broadcast over α.
fn jacobian(config: &ModelConfig, op: &ProductOperator, u: &[f64]) -> BlockTridiagonal {
    let na = config.traits.len();
    let nx = config.spatial().len();
    let lx = op.spatial().matrix();
    let la = op.traits().matrix();
    let eps2 = config.epsilon * config.epsilon;
    let alphas = config.traits.nodes();
    let wa = config.traits.weights();
    let rate = reaction_rate(config, u);
    let mut diag = Vec::with_capacity(nx);
    let mut lower = Vec::with_capacity(nx);
    let mut upper = Vec::with_capacity(nx);
    for i in 0..nx {
        let slice = &u[i * na..(i + 1) * na];
        let mut block = DMatrix::<f64>::zeros(na, na);
        for c in 0..na {
            for r in 0..na {
                block[(r, c)] = -slice[r] * wa[c];
            }
        }
        let lii = lx.get(i, i);
        for j in 0..na {
            block[(j, j)] += alphas[j] * lii + rate[i];
            for (c, v) in la.row(j) {
                block[(j, c)] += eps2 * v;
            }
        }
        diag.push(block);
        let lo = if i > 0 { lx.get(i, i - 1) } else { 0.0 };
        let up = if i + 1 < nx { lx.get(i, i + 1) } else { 0.0 };
        lower.push(alphas.iter().map(|a| a * lo).collect());
        upper.push(alphas.iter().map(|a| a * up).collect());
    }
    BlockTridiagonal { diag, lower, upper }
}

/// Principal eigenvalue `μ₁` of `αΔφ + ε²φ_αα + mφ + μφ = 0`, that is the
/// smallest eigenvalue of `−A − m`. A positive steady state exists iff `μ₁ < 0`.
pub fn existence_mu1(config: &ModelConfig) -> Result<f64> {
    let op = ProductOperator::new(config);
    let solver = SeparableSolver::new(config);
    let n = config.len();
    let na = config.traits.len();
    let w = config.weights();
    let neg_m: Vec<f64> = (0..n).map(|k| -config.m.values[k / na]).collect();
    let dot = |a: &[f64], b: &[f64]| -> f64 { (0..n).map(|k| w[k] * a[k] * b[k]).sum() };
    let apply = |x: &[f64], y: &mut [f64]| {
        op.apply(x, y);
        for k in 0..n {
            y[k] = -y[k] + neg_m[k] * x[k];
        }
    };
    let floor = neg_m.iter().copied().fold(f64::INFINITY, f64::min);
    let mut safe = floor - 1.0;
    let mut sigma = safe;
    let mut phi = vec![1.0; n];
    let nrm = dot(&phi, &phi).sqrt();
    phi.iter_mut().for_each(|v| *v /= nrm);
    let mut rho = f64::INFINITY;
    let mut work = vec![0.0; n];
    let mut last_residual = f64::INFINITY;
    for _ in 0..300 {
        let mean_shift = (0..n).map(|k| w[k] * (neg_m[k] - sigma)).sum::<f64>() / w.iter().sum::<f64>();
        let c = mean_shift.max(1e-6);
        let mut next = vec![0.0; n];
        let out = weighted_cg(
            |x, y| {
                apply(x, y);
                for k in 0..n {
                    y[k] -= sigma * x[k];
                }
            },
            |r, z| z.copy_from_slice(&solver.solve(c, 1.0, r)),
            &w,
            &phi,
            &mut next,
            1e-12,
            400,
        );
        match out {
            Err(CgFailure::Indefinite) => {
                sigma = 0.5 * (safe + sigma);
                continue;
            }
            Err(CgFailure::MaxIterations(_)) | Ok(_) => {}
        }
        safe = sigma;
        let nrm = dot(&next, &next).sqrt();
        next.iter_mut().for_each(|v| *v /= nrm);
        phi = next;
        apply(&phi, &mut work);
        let rho_next = dot(&phi, &work);
        let r2: f64 = (0..n).map(|k| w[k] * (work[k] - rho_next * phi[k]).powi(2)).sum();
        let r = r2.sqrt();
        last_residual = r;
        let settled = (rho - rho_next).abs() <= 1e-12 * (1.0 + rho_next.abs());
        rho = rho_next;
        if settled && r <= 1e-8 * (1.0 + rho.abs()) {
            let mean: f64 = dot(&phi, &vec![1.0; n]);
            let sign = mean.signum();
            if phi.iter().all(|v| v * sign > 0.0) {
                return Ok(rho);
            }
            return Err(Error::Invariant("principal eigenfunction of the product operator changes sign".into()));
        }
        let target = rho - (2.0 * r).max(1e-9 * (1.0 + rho.abs()));
        if target > sigma {
            sigma = target;
        }
    }
    Err(Error::NonConvergence {
        solver: "existence eigenvalue",
        iterations: 300,
        residual: last_residual,
    })
}

/// Version tag written into every checkpoint.
pub const CHECKPOINT_FORMAT: &str = "dispersal-v1";

/// Self-describing steady-state container.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spatial: SpatialGrid,
    pub traits: TraitGrid,
    pub epsilon: f64,
    pub trivial: bool,
    /// Habitat samples on the spatial nodes.
    pub m: Vec<f64>,
    /// Density, spatial-node-major with α contiguous.
    pub u: Vec<f64>,
    pub residual_inf: f64,
    pub iterations: usize,
}

impl Checkpoint {
    pub fn new(config: &ModelConfig, state: &SteadyState) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            spatial: (**config.spatial()).clone(),
            traits: (*config.traits).clone(),
            epsilon: config.epsilon,
            trivial: config.trivial,
            m: config.m.values.clone(),
            u: state.u.values.clone(),
            residual_inf: state.residual_inf,
            iterations: state.iterations,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cp: Checkpoint = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        if cp.format != CHECKPOINT_FORMAT {
            return Err(Error::Config {
                path: "format".into(),
                message: format!("expected {CHECKPOINT_FORMAT}, found {}", cp.format),
            });
        }
        Ok(cp)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Rebuilds the configuration and the state.
    pub fn restore(&self) -> Result<(ModelConfig, SteadyState)> {
        let grid = Arc::new(self.spatial.clone());
        let m = SpatialField::new(grid.clone(), self.m.clone())?;
        let config = ModelConfig::new(
            m,
            self.traits.lo(),
            self.traits.hi(),
            self.epsilon,
            Some(self.traits.cells()),
            self.trivial,
        )?;
        let u = StateField::new(grid, config.traits.clone(), self.u.clone())?;
        let state = SteadyState::from_field(&config, u, self.residual_inf, self.iterations);
        Ok((config, state))
    }
}
