//! Finitely many competing species that differ only in diffusivity and
//! mutate into each other:
//!
//! ```text
//! ∂_t u_i = α_i Δu_i + (m − Σ_j u_j) u_i + ε² Σ_j M_ij u_j.
//! ```
//!
//! Mutation matrices are required to have zero column sums, so mutation moves
//! mass between species without creating it.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_spatial_laplacian, LinearOperator, SpatialField, SpatialGrid, TraitGrid};
use crate::linalg::{BandedLu, CsrMatrix};
use crate::solver::BLOW_UP;

#[derive(Debug, Clone)]
pub struct DiscreteTraitSystem {
    alphas: Vec<f64>,
    /// Row-major `k × k`.
    mutation: Vec<f64>,
    eps2: f64,
    m: SpatialField,
}

impl DiscreteTraitSystem {
    /// Checks `α` strictly increasing, `M_ii < 0`, `M_ij ≥ 0`, irreducibility
    /// and zero column sums (relative tolerance 1e-12).
    pub fn new(alphas: Vec<f64>, mutation: Vec<f64>, epsilon: f64, m: SpatialField) -> Result<Self> {
        let k = alphas.len();
        if k == 0 {
            return Err(Error::InvalidParameter("need at least one species".into()));
        }
        if alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) || alphas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("diffusivities must be positive and strictly increasing".into()));
        }
        if mutation.len() != k * k {
            return Err(Error::InvalidParameter(format!("mutation matrix needs {} entries, got {}", k * k, mutation.len())));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be non-negative, got {epsilon}")));
        }
        if k > 1 {
            for i in 0..k {
                for j in 0..k {
                    let v = mutation[i * k + j];
                    if !v.is_finite() || (i == j && v >= 0.0) || (i != j && v < 0.0) {
                        return Err(Error::InvalidParameter(format!("mutation entry ({i}, {j}) = {v} has the wrong sign")));
                    }
                }
            }
            for j in 0..k {
                let col: f64 = (0..k).map(|i| mutation[i * k + j]).sum();
                let scale: f64 = (0..k).map(|i| mutation[i * k + j].abs()).sum();
                if col.abs() > 1e-12 * scale {
                    return Err(Error::InvalidParameter(format!("mutation column {j} sums to {col:e}, not zero")));
                }
            }
            if !irreducible(k, &mutation) {
                return Err(Error::InvalidParameter("mutation matrix is reducible".into()));
            }
        }
        if !(m.integral() > 0.0) {
            return Err(Error::Habitat("integral of m must be positive".into()));
        }
        Ok(Self {
            alphas,
            mutation,
            eps2: epsilon * epsilon,
            m,
        })
    }

    /// System with the [`nearest_neighbor_mutation`] matrix.
    pub fn with_default_mutation(alphas: Vec<f64>, epsilon: f64, m: SpatialField) -> Result<Self> {
        let k = alphas.len();
        Self::new(alphas, nearest_neighbor_mutation(k), epsilon, m)
    }

    pub fn species(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn mutation(&self) -> &[f64] {
        &self.mutation
    }

    pub fn epsilon(&self) -> f64 {
        self.eps2.sqrt()
    }

    pub fn habitat(&self) -> &SpatialField {
        &self.m
    }

    pub fn grid(&self) -> &Arc<SpatialGrid> {
        &self.m.grid
    }

    fn check(&self, u: &[SpatialField]) -> Result<()> {
        if u.len() != self.species() {
            return Err(Error::InvalidParameter(format!("expected {} densities, got {}", self.species(), u.len())));
        }
        if u.iter().any(|f| f.grid != self.m.grid) {
            return Err(Error::GridMismatch("density on a different grid than m".into()));
        }
        if u.iter().any(|f| f.values.iter().any(|v| !(*v >= 0.0) || !v.is_finite())) {
            return Err(Error::InvalidParameter("densities must be finite and non-negative".into()));
        }
        if u.iter().all(|f| f.values.iter().all(|v| *v == 0.0)) {
            return Err(Error::ZeroField);
        }
        Ok(())
    }

    /// Node-major packing `u[x * k + i]`.
    fn pack(&self, u: &[SpatialField]) -> Vec<f64> {
        let k = self.species();
        let n = self.m.grid.len();
        let mut out = vec![0.0; n * k];
        for (i, f) in u.iter().enumerate() {
            for (x, v) in f.values.iter().enumerate() {
                out[x * k + i] = *v;
            }
        }
        out
    }

    fn unpack(&self, flat: &[f64]) -> Vec<SpatialField> {
        let k = self.species();
        (0..k)
            .map(|i| SpatialField {
                grid: self.m.grid.clone(),
                values: flat.iter().skip(i).step_by(k).copied().collect(),
            })
            .collect()
    }

    /// Reaction and mutation part at one node, `r_i = (m − U) u_i + ε² (M u)_i`.
    fn local(&self, m: f64, u: &[f64], out: &mut [f64]) {
        let k = self.species();
        let total: f64 = u.iter().sum();
        for i in 0..k {
            let mix: f64 = (0..k).map(|j| self.mutation[i * k + j] * u[j]).sum();
            out[i] = (m - total) * u[i] + self.eps2 * mix;
        }
    }

    fn residual(&self, lap: &LinearOperator, flat: &[f64]) -> Vec<f64> {
        let k = self.species();
        let n = self.m.grid.len();
        let mut out = vec![0.0; n * k];
        let mut comp = vec![0.0; n];
        let mut lu = vec![0.0; n];
        for i in 0..k {
            for x in 0..n {
                comp[x] = flat[x * k + i];
            }
            lap.apply_into(&comp, &mut lu);
            for x in 0..n {
                out[x * k + i] = self.alphas[i] * lu[x];
            }
        }
        let mut loc = vec![0.0; k];
        for x in 0..n {
            self.local(self.m.values[x], &flat[x * k..(x + 1) * k], &mut loc);
            for i in 0..k {
                out[x * k + i] += loc[i];
            }
        }
        out
    }

    /// `Σ_i ∫ u_i` for each species.
    pub fn masses(u: &[SpatialField]) -> Vec<f64> {
        u.iter().map(|f| f.integral()).collect()
    }
}

/// Strong connectivity of the off-diagonal pattern of `M`.
fn irreducible(k: usize, m: &[f64]) -> bool {
    strongly_connected(k, m)
}

fn strongly_connected(k: usize, m: &[f64]) -> bool {
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                let w = if forward { m[j * k + i] } else { m[i * k + j] };
                if !seen[j] && i != j && w > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|s| *s)
    };
    reach(true) && reach(false)
}

/// Unit-rate mutation between neighbouring species: `M_{i,i±1} = 1`, diagonal
/// chosen so every column sums to zero.
pub fn nearest_neighbor_mutation(k: usize) -> Vec<f64> {
    let mut m = vec![0.0; k * k];
    for i in 0..k.saturating_sub(1) {
        m[i * k + i + 1] = 1.0;
        m[(i + 1) * k + i] = 1.0;
        m[i * k + i] -= 1.0;
        m[(i + 1) * k + i + 1] -= 1.0;
    }
    m
}

/// `M = K W⁻¹` for the trait Laplacian `W⁻¹K` on `traits`. With species masses
/// `U_j = w_j u(α_j)` the discrete system reproduces the trait-discretized
/// continuum problem exactly.
pub fn continuum_mutation(traits: &TraitGrid) -> Vec<f64> {
    let op = crate::grid::build_trait_laplacian(traits);
    let k = traits.len();
    let mut m = vec![0.0; k * k];
    for i in 0..k {
        for (j, v) in op.stiffness().row(i) {
            m[i * k + j] = v / op.mass()[j];
        }
    }
    m
}

/// IMEX steps `(I − dt α_i Δ) u_i⁺ = u_i + dt r_i(u)` up to `t_end`.
pub fn evolve_discrete(sys: &DiscreteTraitSystem, u0: &[SpatialField], t_end: f64, dt: f64) -> Result<Vec<SpatialField>> {
    sys.check(u0)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    if t_end <= 0.0 {
        return Ok(u0.to_vec());
    }
    let steps = (t_end / dt).ceil() as usize;
    let dt = t_end / steps as f64;
    let stepper = Stepper::new(sys, dt)?;
    let mut flat = sys.pack(u0);
    for s in 0..steps {
        stepper.step(sys, &mut flat, (s + 1) as f64 * dt)?;
    }
    Ok(sys.unpack(&flat))
}

struct Stepper {
    factors: Vec<BandedLu>,
    dt: f64,
}

impl Stepper {
    fn new(sys: &DiscreteTraitSystem, dt: f64) -> Result<Self> {
        let lap = build_spatial_laplacian(sys.grid());
        let n = sys.grid().len();
        let factors = sys
            .alphas
            .iter()
            .map(|a| BandedLu::factor(&lap.matrix().scaled_plus_diagonal(-dt * a, &vec![1.0; n])))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { factors, dt })
    }

    fn step(&self, sys: &DiscreteTraitSystem, flat: &mut [f64], time: f64) -> Result<()> {
        let k = sys.species();
        let n = sys.grid().len();
        let mut loc = vec![0.0; k];
        let mut rhs = vec![vec![0.0; n]; k];
        for x in 0..n {
            let u = &flat[x * k..(x + 1) * k];
            let total: f64 = u.iter().sum();
            for i in 0..k {
                let diag = 1.0 + self.dt * (sys.m.values[x] - total + sys.eps2 * sys.mutation[i * k + i]);
                if diag <= 0.0 {
                    return Err(Error::NonPositive { time });
                }
            }
            sys.local(sys.m.values[x], u, &mut loc);
            for i in 0..k {
                rhs[i][x] = u[i] + self.dt * loc[i];
            }
        }
        let mut sup = 0.0f64;
        for (i, r) in rhs.iter_mut().enumerate() {
            self.factors[i].solve_in_place(r);
            for x in 0..n {
                let v = r[x];
                if !v.is_finite() {
                    return Err(Error::BlowUp { time, sup: f64::INFINITY });
                }
                sup = sup.max(v);
                flat[x * k + i] = v;
            }
        }
        if sup > BLOW_UP {
            return Err(Error::BlowUp { time, sup });
        }
        if flat.iter().any(|v| *v < -1e-12 * sup) {
            return Err(Error::NonPositive { time });
        }
        for v in flat.iter_mut() {
            *v = v.max(0.0);
        }
        Ok(())
    }
}

/// Positive equilibrium, by time marching to a neighbourhood and Newton's
/// method with the full sparse Jacobian. Requires `ε > 0`.
pub fn steady_discrete(sys: &DiscreteTraitSystem, tol: f64) -> Result<Vec<SpatialField>> {
    if sys.species() > 1 && sys.eps2 <= 0.0 {
        return Err(Error::InvalidParameter("steady_discrete needs positive mutation".into()));
    }
    let k = sys.species();
    let start: Vec<SpatialField> = (0..k)
        .map(|_| sys.m.map(|v| v.max(1e-3) / k as f64))
        .collect();
    let lap = build_spatial_laplacian(sys.grid());
    let stepper = Stepper::new(sys, 0.5)?;
    let mut flat = sys.pack(&start);
    let mut time = 0.0;
    let mut rounds = 0;
    loop {
        for _ in 0..40 {
            time += 0.5;
            stepper.step(sys, &mut flat, time)?;
        }
        match newton(sys, &lap, flat.clone(), tol) {
            Ok(u) => return Ok(sys.unpack(&u)),
            Err(e) if rounds >= 100 => return Err(e),
            Err(_) => rounds += 1,
        }
    }
}

fn newton(sys: &DiscreteTraitSystem, lap: &LinearOperator, mut u: Vec<f64>, tol: f64) -> Result<Vec<f64>> {
    let k = sys.species();
    let n = sys.grid().len();
    let sup_of = |r: &[f64]| r.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut r = sys.residual(lap, &u);
    let mut rnorm = sup_of(&r);
    for iteration in 0..50 {
        if rnorm <= tol {
            return Ok(u);
        }
        let mut t = Vec::with_capacity(n * k * (k + 3));
        for x in 0..n {
            for (y, v) in lap.matrix().row(x) {
                for i in 0..k {
                    t.push((x * k + i, y * k + i, sys.alphas[i] * v));
                }
            }
            let total: f64 = u[x * k..(x + 1) * k].iter().sum();
            for i in 0..k {
                for j in 0..k {
                    let mut v = -u[x * k + i] + sys.eps2 * sys.mutation[i * k + j];
                    if i == j {
                        v += sys.m.values[x] - total;
                    }
                    t.push((x * k + i, x * k + j, v));
                }
            }
        }
        let jac = CsrMatrix::from_triplets(n * k, n * k, t);
        let lu = BandedLu::factor(&jac)?;
        let mut step: Vec<f64> = r.iter().map(|v| -v).collect();
        lu.solve_in_place(&mut step);
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, d)| a + lambda * d).collect();
            if trial.iter().all(|v| *v > 0.0) {
                let rt = sys.residual(lap, &trial);
                let nt = sup_of(&rt);
                if nt < (1.0 - 1e-4 * lambda) * rnorm || nt <= tol {
                    u = trial;
                    r = rt;
                    rnorm = nt;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-4 {
                return Err(Error::NonConvergence {
                    solver: "discrete Newton",
                    iterations: iteration,
                    residual: rnorm,
                });
            }
        }
    }
    if rnorm <= tol {
        return Ok(u);
    }
    Err(Error::NonConvergence {
        solver: "discrete Newton",
        iterations: 50,
        residual: rnorm,
    })
}

/// Steady residual `sup_i ‖α_iΔu_i + (m − U)u_i + ε²(Mu)_i‖_∞`.
pub fn discrete_residual(sys: &DiscreteTraitSystem, u: &[SpatialField]) -> Result<f64> {
    sys.check(u)?;
    let lap = build_spatial_laplacian(sys.grid());
    Ok(sys.residual(&lap, &sys.pack(u)).iter().fold(0.0, |a, b| a.max(b.abs())))
}

/// Fraction of total mass carried by each species.
pub fn mass_fractions(u: &[SpatialField]) -> Vec<f64> {
    let masses = DiscreteTraitSystem::masses(u);
    let total: f64 = masses.iter().sum();
    masses.iter().map(|m| m / total).collect()
}

/// `max(‖u_1 − θ‖_∞, ‖u_2‖_∞, …, ‖u_k‖_∞)`.
pub fn distance_to_dominance(u: &[SpatialField], theta: &SpatialField) -> Result<f64> {
    let mut d = u[0].distance_inf(theta)?;
    for f in &u[1..] {
        d = d.max(f.sup_norm());
    }
    Ok(d)
}

/// One row of a discrete sweep: species `species` at mutation level `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteRecord {
    pub epsilon: f64,
    pub species: usize,
    pub alpha: f64,
    pub mass: f64,
    pub mass_frac: f64,
    pub sup_u: f64,
    /// Distance of the whole equilibrium from `(θ_{α_1}, 0, …, 0)`.
    pub dominance_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteReport {
    pub format: String,
    pub config_hash: String,
    pub records: Vec<DiscreteRecord>,
}

impl DiscreteReport {
    pub const CSV_HEADER: &'static str = "epsilon,species,alpha,mass,mass_frac,sup_u,dominance_gap";

    pub fn to_csv(&self) -> String {
        let mut out = format!("# format={}\n# config_sha256={}\n{}\n", self.format, self.config_hash, Self::CSV_HEADER);
        for r in &self.records {
            out.push_str(&format!(
                "{:e},{},{:e},{:e},{:e},{:e},{:e}\n",
                r.epsilon, r.species, r.alpha, r.mass, r.mass_frac, r.sup_u, r.dominance_gap
            ));
        }
        out
    }
}

/// Equilibria for each `ε` in `epsilons` (decreasing order in the report).
pub fn discrete_sweep(
    alphas: &[f64],
    mutation: &[f64],
    m: &SpatialField,
    epsilons: &[f64],
    tol: f64,
    config_hash: &str,
) -> Result<DiscreteReport> {
    let theta = crate::logistic::solve_theta(alphas[0], m, &m.grid, crate::logistic::DEFAULT_TOL)?;
    let mut eps: Vec<f64> = epsilons.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let mut records = Vec::new();
    for e in eps {
        let sys = DiscreteTraitSystem::new(alphas.to_vec(), mutation.to_vec(), e, m.clone())?;
        let u = steady_discrete(&sys, tol)?;
        let fracs = mass_fractions(&u);
        let gap = distance_to_dominance(&u, &theta.theta)?;
        for (i, f) in u.iter().enumerate() {
            records.push(DiscreteRecord {
                epsilon: e,
                species: i + 1,
                alpha: alphas[i],
                mass: f.integral(),
                mass_frac: fracs[i],
                sup_u: f.sup_norm(),
                dominance_gap: gap,
            });
        }
    }
    Ok(DiscreteReport {
        format: crate::asymptotics::SWEEP_FORMAT.into(),
        config_hash: config_hash.into(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::habitat::Habitat;
    use crate::logistic::{solve_theta, DEFAULT_TOL};

    fn habitat(cells: usize) -> SpatialField {
        let g = Arc::new(SpatialGrid::unit_interval(cells).unwrap());
        Habitat::default().sample(g).unwrap()
    }

    #[test]
    fn default_mutation_structure() {
        let m = nearest_neighbor_mutation(4);
        for j in 0..4 {
            assert_eq!((0..4).map(|i| m[i * 4 + j]).sum::<f64>(), 0.0);
        }
        assert!(irreducible(4, &m));
        let traits = TraitGrid::new(0.5, 2.0, 5).unwrap();
        let c = continuum_mutation(&traits);
        for j in 0..6 {
            assert!((0..6).map(|i| c[i * 6 + j]).sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_systems() {
        let m = habitat(16);
        assert!(DiscreteTraitSystem::with_default_mutation(vec![1.0, 0.5], 0.1, m.clone()).is_err());
        let mut bad = nearest_neighbor_mutation(3);
        bad[0] = 0.5;
        assert!(DiscreteTraitSystem::new(vec![0.5, 1.0, 2.0], bad, 0.1, m.clone()).is_err());
        let mut skew = nearest_neighbor_mutation(3);
        skew[1] = 2.0;
        assert!(DiscreteTraitSystem::new(vec![0.5, 1.0, 2.0], skew, 0.1, m.clone()).is_err());
        // Block-diagonal M splits the species.
        let split = vec![-1.0, 1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 1.0, -1.0];
        assert!(DiscreteTraitSystem::new(vec![0.5, 1.0, 1.5, 2.0], split, 0.1, m).is_err());
    }

    #[test]
    fn single_species_is_logistic() {
        let m = habitat(48);
        let sys = DiscreteTraitSystem::new(vec![0.5], vec![-1.0], 0.0, m.clone()).unwrap();
        let u = evolve_discrete(&sys, &[m.map(|_| 0.2)], 200.0, 0.5).unwrap();
        let theta = solve_theta(0.5, &m, &m.grid, DEFAULT_TOL).unwrap();
        assert!(u[0].distance_inf(&theta.theta).unwrap() < 1e-8);
    }

    #[test]
    fn mass_identity_along_one_step() {
        let m = habitat(32);
        let sys = DiscreteTraitSystem::with_default_mutation(vec![0.5, 1.0, 2.0], 0.3, m.clone()).unwrap();
        let u0: Vec<SpatialField> = (0..3).map(|i| m.map(|v| 0.1 * (i + 1) as f64 * v)).collect();
        let dt = 1e-4;
        let u1 = evolve_discrete(&sys, &u0, dt, dt).unwrap();
        let total = |u: &[SpatialField]| DiscreteTraitSystem::masses(u).iter().sum::<f64>();
        let big: Vec<f64> = (0..m.values.len()).map(|x| u0.iter().map(|f| f.values[x]).sum()).collect();
        let growth: f64 = big
            .iter()
            .zip(&m.values)
            .zip(m.grid.weights())
            .map(|((b, mv), w)| w * b * (mv - b))
            .sum();
        let rate = (total(&u1) - total(&u0)) / dt;
        assert!((rate - growth).abs() < 1e-3 * growth.abs().max(1.0), "{rate} vs {growth}");
    }

    #[test]
    fn trivial_symmetric_equilibrium_is_equal() {
        let g = Arc::new(SpatialGrid::unit_interval(16).unwrap());
        let m = SpatialField::constant(g, 1.0);
        let sys = DiscreteTraitSystem::with_default_mutation(vec![0.5, 1.0, 2.0], 0.5, m).unwrap();
        let u = steady_discrete(&sys, 1e-11).unwrap();
        for f in &u {
            assert!(f.values.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-9));
        }
    }

    #[test]
    fn steady_has_small_residual() {
        let m = habitat(32);
        let sys = DiscreteTraitSystem::with_default_mutation(vec![0.5, 1.0, 2.0], 0.2, m).unwrap();
        let u = steady_discrete(&sys, 1e-10).unwrap();
        assert!(discrete_residual(&sys, &u).unwrap() <= 1e-10);
        assert!(u.iter().all(|f| f.min() > 0.0));
        let f = mass_fractions(&u);
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
