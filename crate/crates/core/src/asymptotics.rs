//! Small-mutation asymptotics: the predicted boundary-layer profile, the error
//! measures against it, ε sweeps and scaling-law fits.
//!
//! As `ε → 0` the steady state concentrates at `α_lo` in a layer of width
//! `ε^{2/3}`, with `ε^{2/3} u(x, α) ≈ θ(x) η*((α − α_lo)/ε^{2/3})`, where `θ`
//! is the logistic profile at `α_lo` and `η*` the Airy profile built from
//! the selection gradient `σ₁* = ∂σ*/∂α(α_lo)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::airy::{build_eta_star, AiryProfile};
use crate::eigen::{l2_mass, sigma_curve, sigma_star_curve};
use crate::error::{Error, Result};
use crate::grid::{SpatialField, StateField, TraitGrid};
use crate::linalg::{fit_line, LineFit};
use crate::logistic::{solve_theta, LogisticSolution, DEFAULT_TOL};
use crate::solver::{existence_mu1, solve_steady_state_from, InitialGuess, ModelConfig, SteadyState, SteadyStateChecks};

/// Format tag for sweep CSV and JSON output.
pub const SWEEP_FORMAT: &str = "sweep-v1";

/// Samples stored in the η* table of a profile.
const ETA_SAMPLES: usize = 2001;

/// Smallest ratio `ε_max/ε_min` accepted by [`scaling_fits`]; the desk-scale
/// sweep 0.08..0.01 spans a factor of 8.
pub const MIN_EPSILON_SPAN: f64 = 8.0;

/// Default window in the layer variable `s` for the tail fit.
pub const DEFAULT_TAIL_WINDOW: (f64, f64) = (1.0, 4.0);

#[derive(Debug, Clone)]
pub struct TheoryProfile {
    pub theta: LogisticSolution,
    pub eta: AiryProfile,
    pub sigma1_star: f64,
    pub alpha_lo: f64,
}

impl TheoryProfile {
    /// `θ(x) η*(s)`, the limit of `ε^{2/3} u` at layer coordinate `s`.
    pub fn scaled(&self, ix: usize, s: f64) -> f64 {
        self.theta.theta.values[ix] * self.eta.eval(s)
    }

    /// `ε^{-2/3} θ(x) η*((α − α_lo)/ε^{2/3})` on the product grid.
    pub fn predicted(&self, epsilon: f64, traits: Arc<TraitGrid>) -> StateField {
        let layer = epsilon.powf(2.0 / 3.0);
        let spatial = self.theta.theta.grid.clone();
        let etas: Vec<f64> = traits.nodes().iter().map(|a| self.eta.eval((a - self.alpha_lo) / layer)).collect();
        let mut values = Vec::with_capacity(spatial.len() * etas.len());
        for t in &self.theta.theta.values {
            values.extend(etas.iter().map(|e| t * e / layer));
        }
        StateField {
            spatial,
            traits,
            values,
        }
    }

    /// `max θ · η*(0)`, the sup of the limit profile.
    pub fn peak(&self) -> f64 {
        self.theta.theta.max() * self.eta.eval(0.0)
    }
}

/// `θ_{α_lo}`, `σ₁*` and `η*` for the habitat `m` and trait range of `config`.
pub fn build_theory_profile(m: &SpatialField, config: &ModelConfig) -> Result<TheoryProfile> {
    let alpha_lo = config.alpha_lo();
    let theta = solve_theta(alpha_lo, m, &m.grid, DEFAULT_TOL)?;
    let curve = sigma_star_curve(m, &theta, &[])?;
    // σ₁* vanishes up to rounding for constant m.
    let sigma1_star = curve.sigma1;
    if !(sigma1_star > 1e-12) {
        return Err(Error::InvalidA1(sigma1_star));
    }
    let s_max = AiryProfile::default_s_max(sigma1_star, crate::airy::find_a0()?);
    let eta = build_eta_star(sigma1_star, s_max, ETA_SAMPLES)?;
    Ok(TheoryProfile {
        theta,
        eta,
        sigma1_star,
        alpha_lo,
    })
}

/// `sup |ε^{2/3} u − θ η*|` over the product grid.
pub fn profile_error(u: &SteadyState, theory: &TheoryProfile) -> Result<f64> {
    if u.u.spatial != theory.theta.theta.grid {
        return Err(Error::GridMismatch("steady state and θ on different spatial grids".into()));
    }
    let layer = u.epsilon.powf(2.0 / 3.0);
    let na = u.u.traits.len();
    let etas: Vec<f64> = u
        .u
        .traits
        .nodes()
        .iter()
        .map(|a| theory.eta.eval((a - theory.alpha_lo) / layer))
        .collect();
    let mut err = 0.0f64;
    for (i, t) in theory.theta.theta.values.iter().enumerate() {
        for j in 0..na {
            err = err.max((layer * u.u.values[i * na + j] - t * etas[j]).abs());
        }
    }
    Ok(err)
}

/// `‖û − θ‖_∞`.
pub fn uhat_error(u: &SteadyState, theta: &LogisticSolution) -> Result<f64> {
    u.u_hat.distance_inf(&theta.theta)
}

/// `‖v − α_lo û‖_∞`.
pub fn trait_mean_gap(u: &SteadyState, alpha_lo: f64) -> f64 {
    u.v.values
        .iter()
        .zip(&u.u_hat.values)
        .map(|(v, h)| (v - alpha_lo * h).abs())
        .fold(0.0, f64::max)
}

/// Decay rate `β̂` of `log max_x u(x, α)` against `s = (α − α_lo)/ε^{2/3}`
/// over `window`, using only nodes where `u > 10⁻¹² sup u`.
pub fn tail_decay_fit(u: &SteadyState, window: (f64, f64)) -> Result<f64> {
    let traits = &u.u.traits;
    let na = traits.len();
    let layer = u.epsilon.powf(2.0 / 3.0);
    let sup = u.u.sup();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (j, a) in traits.nodes().iter().enumerate() {
        let s = (a - traits.lo()) / layer;
        if s < window.0 || s > window.1 {
            continue;
        }
        let peak = (0..u.u.spatial.len()).map(|i| u.u.values[i * na + j]).fold(0.0, f64::max);
        if peak > 1e-12 * sup {
            xs.push(s);
            ys.push(peak.ln());
        }
    }
    fit_decay(&xs, &ys)
}

/// The same fit applied to `log η*` on the nodes a trait grid would sample.
pub fn profile_decay_fit(eta: &AiryProfile, epsilon: f64, traits: &TraitGrid, window: (f64, f64)) -> Result<f64> {
    let layer = epsilon.powf(2.0 / 3.0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for a in traits.nodes() {
        let s = (a - traits.lo()) / layer;
        if s >= window.0 && s <= window.1 {
            let v = eta.eval(s);
            if v > 0.0 {
                xs.push(s);
                ys.push(v.ln());
            }
        }
    }
    fit_decay(&xs, &ys)
}

fn fit_decay(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() < 5 {
        return Err(Error::InsufficientTail { points: xs.len() });
    }
    Ok(-fit_line(xs, ys)?.slope)
}

/// Fraction of `∫∫ u` carried by the band `[α_lo, α_lo + K ε^{2/3}]`.
pub fn concentration_mass(u: &SteadyState, k: f64) -> f64 {
    let traits = &u.u.traits;
    let band = k.max(0.0) * u.epsilon.powf(2.0 / 3.0);
    let nodes = traits.nodes();
    let h = traits.spacing();
    let na = traits.len();
    let total = u.u.total_mass();
    if band <= 0.0 || total <= 0.0 {
        return 0.0;
    }
    let wx = u.u.spatial.weights();
    let mut inside = 0.0;
    for i in 0..u.u.spatial.len() {
        let row = &u.u.values[i * na..(i + 1) * na];
        let mut acc = 0.0;
        for j in 0..na - 1 {
            let (a0, a1) = (nodes[j] - traits.lo(), nodes[j + 1] - traits.lo());
            if a0 >= band {
                break;
            }
            if a1 <= band {
                acc += 0.5 * h * (row[j] + row[j + 1]);
            } else {
                let t = (band - a0) / h;
                let end = row[j] + t * (row[j + 1] - row[j]);
                acc += 0.5 * (band - a0) * (row[j] + end);
            }
        }
        inside += wx[i] * acc;
    }
    inside / total
}

/// Diagnostics for one ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub epsilon: f64,
    pub trait_cells: usize,
    /// `σ_{0,ε} = λ₁(α_lo, û_ε − m)`.
    pub sigma0: f64,
    /// `σ_{1,ε} = ∂λ₁/∂α(α_lo, û_ε − m)`.
    pub sigma1: f64,
    pub sup_u: f64,
    pub uhat_err: f64,
    pub profile_err: f64,
    /// `profile_err / sup(θ η*)`.
    pub profile_err_rel: f64,
    pub beta_hat: f64,
    /// The same fit on the analytic profile.
    pub beta_theory: f64,
    pub mass_frac: f64,
    pub trait_mean_gap: f64,
    /// `max h_ε − min h_ε` for `h_ε = û − m`.
    pub potential_oscillation: f64,
    pub log_grad_trait: f64,
    pub log_grad_space: f64,
    pub mu1: f64,
    pub residual_inf: f64,
    pub iterations: usize,
    pub checks: SteadyStateChecks,
}

impl SweepRecord {
    /// `ε ‖∂_α log u‖_∞ + ‖∇ log u‖_∞`.
    pub fn log_gradient_bound(&self) -> f64 {
        self.epsilon * self.log_grad_trait + self.log_grad_space
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFits {
    /// `log(−σ_{0,ε})` against `log ε`.
    pub sigma_slope: LineFit,
    /// `log sup u` against `log ε`.
    pub sup_slope: LineFit,
    /// `−σ_{0,ε}/ε^{2/3}` at the smallest ε.
    pub sigma_ratio: f64,
    /// `(σ₁*)^{2/3} A₀`.
    pub sigma_ratio_limit: f64,
    pub sigma_ratio_rel_err: f64,
    /// Linear extrapolation of the ratio in `ε^{2/3}` over the three smallest ε.
    pub sigma_ratio_extrapolated: f64,
}

/// Slopes over all records, limiting constants from the three smallest ε.
pub fn scaling_fits(report: &SweepReport) -> Result<ScalingFits> {
    let recs = &report.records;
    if recs.len() < 4 {
        return Err(Error::InsufficientData(format!("{} ε values, need at least 4", recs.len())));
    }
    let emax = recs.iter().map(|r| r.epsilon).fold(0.0, f64::max);
    let emin = recs.iter().map(|r| r.epsilon).fold(f64::INFINITY, f64::min);
    if emax / emin < MIN_EPSILON_SPAN - 1e-9 {
        return Err(Error::InsufficientData(format!("ε values must span a factor of {MIN_EPSILON_SPAN}")));
    }
    if recs.iter().any(|r| !(r.sigma0 < 0.0)) {
        return Err(Error::InsufficientData("σ_{0,ε} must be negative for the log fit".into()));
    }
    let le: Vec<f64> = recs.iter().map(|r| r.epsilon.ln()).collect();
    let sigma_slope = fit_line(&le, &recs.iter().map(|r| (-r.sigma0).ln()).collect::<Vec<_>>())?;
    let sup_slope = fit_line(&le, &recs.iter().map(|r| r.sup_u.ln()).collect::<Vec<_>>())?;
    let mut by_eps: Vec<&SweepRecord> = recs.iter().collect();
    by_eps.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    let ratio = |r: &SweepRecord| -r.sigma0 / r.epsilon.powf(2.0 / 3.0);
    let sigma_ratio = ratio(by_eps[0]);
    let limit = report.sigma1_star.powf(2.0 / 3.0) * report.a0_airy;
    let tail = &by_eps[..3];
    let extrapolated = fit_line(
        &tail.iter().map(|r| r.epsilon.powf(2.0 / 3.0)).collect::<Vec<_>>(),
        &tail.iter().map(|r| ratio(r)).collect::<Vec<_>>(),
    )?
    .intercept;
    Ok(ScalingFits {
        sigma_slope,
        sup_slope,
        sigma_ratio,
        sigma_ratio_limit: limit,
        sigma_ratio_rel_err: (sigma_ratio - limit).abs() / limit,
        sigma_ratio_extrapolated: extrapolated,
    })
}

/// Inputs of an ε sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub m: SpatialField,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub epsilons: Vec<f64>,
    /// Fixed trait cell count; `None` resolves the layer for each ε.
    pub trait_cells: Option<usize>,
    pub tail_window: (f64, f64),
    /// Mass level defining the band `K` with `∫₀^K η* = level`.
    pub mass_level: f64,
    /// Hash of the originating configuration, embedded in the outputs.
    pub config_hash: String,
}

impl SweepSpec {
    pub fn desk_scale() -> Result<Self> {
        let base = ModelConfig::desk_scale(0.08)?;
        Ok(Self {
            m: base.m,
            alpha_lo: 0.5,
            alpha_hi: 2.0,
            epsilons: vec![0.08, 0.04, 0.02, 0.01],
            trait_cells: None,
            tail_window: DEFAULT_TAIL_WINDOW,
            mass_level: 0.99,
            config_hash: String::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub format: String,
    pub config_hash: String,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub sigma1_star: f64,
    pub a0_airy: f64,
    /// Band width `K` in layer units.
    pub band_k: f64,
    /// Sorted by decreasing ε.
    pub records: Vec<SweepRecord>,
    pub fits: Option<ScalingFits>,
    /// `max_ε (ε‖∂_α log u‖ + ‖∇ log u‖)`.
    pub log_gradient_constant: f64,
    /// `max_ε ε sup u`.
    pub eps_sup_constant: f64,
    pub notes: Vec<String>,
}

impl SweepReport {
    /// Header of the per-ε CSV table.
    pub const CSV_HEADER: &'static str = "epsilon,sigma0,sigma1,sup_u,uhat_err,profile_err,beta_hat,mass_frac";

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# format={SWEEP_FORMAT}\n"));
        out.push_str(&format!("# config_sha256={}\n", self.config_hash));
        if let Some(f) = &self.fits {
            out.push_str(&format!(
                "# sigma_slope={:.6},sigma_slope_ci95={:.6},sup_slope={:.6},sup_slope_ci95={:.6},sigma_ratio={:.6},sigma_ratio_limit={:.6}\n",
                f.sigma_slope.slope, f.sigma_slope.slope_ci95, f.sup_slope.slope, f.sup_slope.slope_ci95, f.sigma_ratio, f.sigma_ratio_limit
            ));
        }
        out.push_str("# beta_hat is a single fitted rate per ε over a fixed layer window\n");
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                r.epsilon, r.sigma0, r.sigma1, r.sup_u, r.uhat_err, r.profile_err, r.beta_hat, r.mass_frac
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// SHA-256 of a byte string, hex encoded.
pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Solves one ε and collects its diagnostics.
pub fn sweep_record(spec: &SweepSpec, theory: &TheoryProfile, epsilon: f64, band_k: f64) -> Result<(SweepRecord, SteadyState)> {
    let config = ModelConfig::new(spec.m.clone(), spec.alpha_lo, spec.alpha_hi, epsilon, spec.trait_cells, false)?;
    let mu1 = existence_mu1(&config)?;
    let state = solve_steady_state_from(&config, InitialGuess::Theory)?;
    let h = state.potential(&spec.m);
    let curve = sigma_curve(&h, l2_mass(&theory.theta.theta), spec.alpha_lo, &[])?;
    let profile_err = profile_error(&state, theory)?;
    let (lt, ls) = state.log_gradient_norms();
    let record = SweepRecord {
        epsilon,
        trait_cells: config.traits.cells(),
        sigma0: curve.sigma0,
        sigma1: curve.sigma1,
        sup_u: state.u.sup(),
        uhat_err: uhat_error(&state, &theory.theta)?,
        profile_err,
        profile_err_rel: profile_err / theory.peak(),
        beta_hat: tail_decay_fit(&state, spec.tail_window)?,
        beta_theory: profile_decay_fit(&theory.eta, epsilon, &config.traits, spec.tail_window)?,
        mass_frac: concentration_mass(&state, band_k),
        trait_mean_gap: trait_mean_gap(&state, spec.alpha_lo),
        potential_oscillation: h.max() - h.min(),
        log_grad_trait: lt,
        log_grad_space: ls,
        mu1,
        residual_inf: state.residual_inf,
        iterations: state.iterations,
        checks: state.checks(&config),
    };
    Ok((record, state))
}

/// Runs every ε of `spec` on a pool of `threads` workers. Each solve is
/// independent and single-threaded, so results do not depend on `threads`.
pub fn run_sweep(spec: &SweepSpec, threads: usize) -> Result<SweepReport> {
    let probe = ModelConfig::new(spec.m.clone(), spec.alpha_lo, spec.alpha_hi, spec.epsilons[0], spec.trait_cells, false)?;
    let theory = build_theory_profile(&spec.m, &probe)?;
    let band_k = theory.eta.quantile(spec.mass_level)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let results: Vec<Result<SweepRecord>> = pool.install(|| {
        spec.epsilons
            .par_iter()
            .map(|&eps| sweep_record(spec, &theory, eps, band_k).map(|(r, _)| r))
            .collect()
    });
    let mut records = results.into_iter().collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    let mut report = SweepReport {
        format: SWEEP_FORMAT.into(),
        config_hash: spec.config_hash.clone(),
        alpha_lo: spec.alpha_lo,
        alpha_hi: spec.alpha_hi,
        sigma1_star: theory.sigma1_star,
        a0_airy: theory.eta.a0_airy,
        band_k,
        log_gradient_constant: records.iter().map(|r| r.log_gradient_bound()).fold(0.0, f64::max),
        eps_sup_constant: records.iter().map(|r| r.epsilon * r.sup_u).fold(0.0, f64::max),
        records,
        fits: None,
        notes: vec![
            "tail decay uses one fitted rate per run over a fixed window; the bound holds for every rate with a rate-dependent constant".into(),
        ],
    };
    report.fits = scaling_fits(&report).ok();
    Ok(report)
}

/// Number of entries where `values` increases, scanning in order.
pub fn increases(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialGrid;
    use crate::habitat::Habitat;

    fn config(eps: f64) -> ModelConfig {
        let g = Arc::new(SpatialGrid::unit_interval(48).unwrap());
        let m = Habitat::default().sample(g).unwrap();
        ModelConfig::new(m, 0.5, 2.0, eps, Some(200), false).unwrap()
    }

    fn fake_state(cfg: &ModelConfig, u: StateField) -> SteadyState {
        let u_hat = crate::grid::integrate_trait(&u);
        SteadyState {
            v: u_hat.clone(),
            u_hat,
            u,
            residual_inf: 0.0,
            iterations: 0,
            epsilon: cfg.epsilon,
        }
    }

    #[test]
    fn flat_habitat_has_no_profile() {
        let g = Arc::new(SpatialGrid::unit_interval(32).unwrap());
        let m = Habitat::One { value: 1.0 }.sample(g).unwrap();
        let cfg = ModelConfig::new(m.clone(), 0.5, 2.0, 0.05, None, true).unwrap();
        assert!(matches!(build_theory_profile(&m, &cfg), Err(Error::InvalidA1(_))));
    }

    #[test]
    fn profile_pipeline_and_exact_state() {
        let cfg = config(0.02);
        let theory = build_theory_profile(&cfg.m, &cfg).unwrap();
        assert!(theory.sigma1_star > 0.0);
        assert!(theory.theta.theta.is_nonconstant(1e-6));
        let state = fake_state(&cfg, theory.predicted(cfg.epsilon, cfg.traits.clone()));
        assert!(profile_error(&state, &theory).unwrap() < 1e-12);
        // û of the exact profile differs from θ by trait quadrature only.
        let err = uhat_error(&state, &theory.theta).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn doubled_habitat_still_yields_valid_profile() {
        let cfg = config(0.05);
        let doubled = cfg.m.map(|v| 2.0 * v);
        let theory = build_theory_profile(&doubled, &cfg).unwrap();
        assert!(theory.eta.ode_residual_inf() < 1e-6);
        assert!((theory.eta.total_mass() - 1.0).abs() < 1e-8);
        let base = build_theory_profile(&cfg.m, &cfg).unwrap();
        assert!(theory.sigma1_star > base.sigma1_star);
    }

    #[test]
    fn tail_fit_on_exact_profile_matches_oracle() {
        let g = Arc::new(SpatialGrid::unit_interval(16).unwrap());
        let traits = Arc::new(TraitGrid::new(0.5, 2.0, 400).unwrap());
        let eta = build_eta_star(1.0, AiryProfile::default_s_max(1.0, crate::airy::find_a0().unwrap()), 11).unwrap();
        let eps: f64 = 0.05;
        let layer = eps.powf(2.0 / 3.0);
        let u = StateField::from_fn(g, traits.clone(), |_, a| eta.eval((a - 0.5) / layer) / layer);
        let u_hat = crate::grid::integrate_trait(&u);
        let state = SteadyState {
            v: u_hat.clone(),
            u_hat,
            u,
            residual_inf: 0.0,
            iterations: 0,
            epsilon: eps,
        };
        let fitted = tail_decay_fit(&state, DEFAULT_TAIL_WINDOW).unwrap();
        let oracle = profile_decay_fit(&eta, eps, &traits, DEFAULT_TAIL_WINDOW).unwrap();
        assert!((fitted - oracle).abs() < 1e-10);
        // The local Airy rate d/ds(−log η*) = −Ai'/Ai at the window centre.
        let s = 2.5f64;
        let arg = s - eta.a0_airy;
        let local = -crate::airy::airy_ai_prime(arg).unwrap() / crate::airy::airy_ai(arg).unwrap();
        assert!((fitted - local).abs() / local < 0.1, "{fitted} vs {local}");
        assert!(matches!(tail_decay_fit(&state, (100.0, 101.0)), Err(Error::InsufficientTail { .. })));
    }

    #[test]
    fn concentration_on_exact_profile() {
        let cfg = config(0.02);
        let theory = build_theory_profile(&cfg.m, &cfg).unwrap();
        let state = fake_state(&cfg, theory.predicted(cfg.epsilon, cfg.traits.clone()));
        let k = theory.eta.quantile(0.99).unwrap();
        let frac = concentration_mass(&state, k);
        assert!((frac - 0.99).abs() < 2e-3, "{frac}");
        assert_eq!(concentration_mass(&state, 0.0), 0.0);
    }

    #[test]
    fn scaling_fits_need_a_decade() {
        let mut report = SweepReport {
            format: SWEEP_FORMAT.into(),
            config_hash: String::new(),
            alpha_lo: 0.5,
            alpha_hi: 2.0,
            sigma1_star: 1.0,
            a0_airy: 1.0187929716474710,
            band_k: 1.0,
            records: Vec::new(),
            fits: None,
            log_gradient_constant: 0.0,
            eps_sup_constant: 0.0,
            notes: Vec::new(),
        };
        assert!(scaling_fits(&report).is_err());
        let template = SweepRecord {
            epsilon: 0.0,
            trait_cells: 0,
            sigma0: 0.0,
            sigma1: 0.0,
            sup_u: 0.0,
            uhat_err: 0.0,
            profile_err: 0.0,
            profile_err_rel: 0.0,
            beta_hat: 0.0,
            beta_theory: 0.0,
            mass_frac: 0.0,
            trait_mean_gap: 0.0,
            potential_oscillation: 0.0,
            log_grad_trait: 0.0,
            log_grad_space: 0.0,
            mu1: 0.0,
            residual_inf: 0.0,
            iterations: 0,
            checks: SteadyStateChecks {
                residual_inf: 0.0,
                min_u: 0.0,
                balance: 0.0,
                excess: 0.0,
                comparison_margin: 0.0,
                uhat_bound_margin: 0.0,
                v_identity_inf: 0.0,
                rayleigh: 0.0,
                constant_habitat: false,
            },
        };
        for eps in [0.08f64, 0.04, 0.02, 0.01] {
            let mut r = template.clone();
            r.epsilon = eps;
            r.sigma0 = -1.0187929716474710 * eps.powf(2.0 / 3.0);
            r.sup_u = 3.0 * eps.powf(-2.0 / 3.0);
            report.records.push(r);
        }
        let fits = scaling_fits(&report).unwrap();
        assert!((fits.sigma_slope.slope - 2.0 / 3.0).abs() < 1e-12);
        assert!((fits.sup_slope.slope + 2.0 / 3.0).abs() < 1e-12);
        assert!(fits.sigma_ratio_rel_err < 1e-12);
        let csv = report.to_csv();
        assert!(csv.contains(SweepReport::CSV_HEADER));
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 5);
    }
}
