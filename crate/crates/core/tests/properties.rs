//! Randomized checks of the structural invariants of each module.

use std::f64::consts::PI;
use std::sync::Arc;

use dispersal::airy::{build_eta_star, find_a0, AiryProfile};
use dispersal::discrete::{nearest_neighbor_mutation, DiscreteTraitSystem};
use dispersal::eigen::{principal_eigenpair, rayleigh_quotient, sigma_curve};
use dispersal::grid::{build_spatial_laplacian, build_trait_laplacian, SpatialField, SpatialGrid, StateField, TraitGrid};
use dispersal::habitat::Habitat;
use dispersal::logistic::{solve_theta, DEFAULT_TOL};
use dispersal::solver::{evolve, ModelConfig};
use proptest::prelude::*;

fn grid_strategy() -> impl Strategy<Value = SpatialGrid> {
    prop_oneof![
        (8usize..80, 0.3f64..4.0).prop_map(|(c, l)| SpatialGrid::new(vec![l], vec![c]).unwrap()),
        (8usize..20, 8usize..20, 0.5f64..2.0, 0.5f64..2.0)
            .prop_map(|(a, b, l0, l1)| SpatialGrid::new(vec![l0, l1], vec![a, b]).unwrap()),
    ]
}

/// Smooth random field: a few random cosine modes.
fn field(grid: Arc<SpatialGrid>, coeffs: &[f64]) -> SpatialField {
    let ext = grid.extents().to_vec();
    SpatialField::from_fn(grid, |p| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * (PI * (k + 1) as f64 * p[0] / ext[0]).cos() * if p.len() > 1 { (PI * k as f64 * p[1] / ext[1]).cos() } else { 1.0 })
            .sum::<f64>()
    })
}

fn dot_w(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a.iter().zip(b)).map(|(w, (x, y))| w * x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn grid_volume_and_spacing(grid in grid_strategy()) {
        let expected: f64 = grid.extents().iter().product();
        prop_assert!((grid.volume() - expected).abs() <= 1e-12 * expected);
        let total: f64 = grid.weights().iter().sum();
        prop_assert!((total - expected).abs() <= 1e-12 * expected);
        for a in 0..grid.dimension() {
            prop_assert!(grid.cells()[a] >= 8 && grid.spacing(a) > 0.0);
        }
    }

    #[test]
    fn trait_nodes_increase(lo in 0.01f64..1.0, width in 0.1f64..5.0, cells in 1usize..400) {
        let g = TraitGrid::new(lo, lo + width, cells).unwrap();
        prop_assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        prop_assert_eq!(g.nodes()[0], lo);
        prop_assert_eq!(*g.nodes().last().unwrap(), lo + width);
    }

    #[test]
    fn laplacian_kills_constants(grid in grid_strategy(), c in -100.0f64..100.0) {
        let op = build_spatial_laplacian(&grid);
        let out = op.apply(&vec![c; grid.len()]);
        let scale: f64 = (0..grid.dimension()).map(|a| 4.0 / grid.spacing(a).powi(2)).sum();
        prop_assert!(out.iter().all(|v| v.abs() <= 1e-13 * scale * c.abs().max(1.0)));
        let rows = op.matrix().row_sums();
        prop_assert!(rows.iter().all(|r| r.abs() <= 1e-12 * scale));
    }

    #[test]
    fn laplacian_is_self_adjoint_and_dissipative(
        grid in grid_strategy(),
        a in prop::collection::vec(-1.0f64..1.0, 4),
        b in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let g = Arc::new(grid);
        let op = build_spatial_laplacian(&g);
        let (f, h) = (field(g.clone(), &a), field(g.clone(), &b));
        let w = g.weights();
        let lhs = dot_w(w, &f.values, &op.apply(&h.values));
        let rhs = dot_w(w, &h.values, &op.apply(&f.values));
        let scale = 1.0 + lhs.abs().max(rhs.abs());
        prop_assert!((lhs - rhs).abs() <= 1e-11 * scale);
        prop_assert!(op.energy(&f.values) >= -1e-12);
        let k = op.stiffness();
        for r in 0..k.nrows() {
            for (c, v) in k.row(r) {
                prop_assert_eq!(v, k.get(c, r));
            }
        }
    }

    #[test]
    fn discrete_divergence_theorem(grid in grid_strategy(), a in prop::collection::vec(-5.0f64..5.0, 4), shift in -3.0f64..3.0) {
        let g = Arc::new(grid);
        let op = build_spatial_laplacian(&g);
        let f = field(g.clone(), &a).map(|v| (v + shift).exp());
        let lf = op.apply(&f.values);
        let total: f64 = g.weights().iter().zip(&lf).map(|(w, v)| w * v).sum();
        let scale: f64 = g.weights().iter().zip(&lf).map(|(w, v)| w * v.abs()).sum();
        prop_assert!(total.abs() <= 1e-10 * (1.0 + scale), "{total} {scale}");
    }

    #[test]
    fn trait_laplacian_structure(lo in 0.1f64..1.0, width in 0.5f64..3.0, cells in 1usize..200) {
        let t = TraitGrid::new(lo, lo + width, cells).unwrap();
        let op = build_trait_laplacian(&t);
        prop_assert!(op.is_symmetric());
        let h = t.spacing();
        prop_assert!(op.matrix().row_sums().iter().all(|r| r.abs() <= 1e-12 / (h * h)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn eigenvalue_below_every_rayleigh_quotient(
        cells in 16usize..64,
        alpha in 0.05f64..3.0,
        hc in prop::collection::vec(-2.0f64..2.0, 3),
        tc in prop::collection::vec(-0.5f64..0.5, 3),
    ) {
        let g = Arc::new(SpatialGrid::unit_interval(cells).unwrap());
        let h = field(g.clone(), &hc);
        let pair = principal_eigenpair(alpha, &h, &g, 1.0).unwrap();
        let test = field(g.clone(), &tc).map(|v| 1.0 + v);
        let r = rayleigh_quotient(alpha, &h, &test).unwrap();
        prop_assert!(pair.lambda <= r + 1e-10);
        prop_assert!(pair.lambda >= h.min() - 1e-10 && pair.lambda <= h.max() + 1e-10);
        prop_assert!(pair.phi.min() > 0.0);
        let norm: f64 = g.weights().iter().zip(&pair.phi.values).map(|(w, v)| w * v * v).sum();
        prop_assert!((norm - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn eigenvalue_shift_equivariance(cells in 16usize..64, alpha in 0.05f64..3.0, hc in prop::collection::vec(-2.0f64..2.0, 3), c in -5.0f64..5.0) {
        let g = Arc::new(SpatialGrid::unit_interval(cells).unwrap());
        let h = field(g.clone(), &hc);
        let a = principal_eigenpair(alpha, &h, &g, 1.0).unwrap();
        let b = principal_eigenpair(alpha, &h.map(|v| v + c), &g, 1.0).unwrap();
        prop_assert!((b.lambda - a.lambda - c).abs() <= 1e-9);
        prop_assert!(a.phi.distance_inf(&b.phi).unwrap() <= 1e-6);
    }

    #[test]
    fn eigenvalue_continuity_in_potential(cells in 16usize..64, alpha in 0.05f64..3.0, hc in prop::collection::vec(-2.0f64..2.0, 3), pc in prop::collection::vec(-1.0f64..1.0, 3)) {
        let g = Arc::new(SpatialGrid::unit_interval(cells).unwrap());
        let h = field(g.clone(), &hc);
        let p = field(g.clone(), &pc);
        let size = p.sup_norm().max(1e-300);
        let perturbed = SpatialField::new(g.clone(), h.values.iter().zip(&p.values).map(|(a, b)| a + 1e-6 * b / size).collect()).unwrap();
        let a = principal_eigenpair(alpha, &h, &g, 1.0).unwrap();
        let b = principal_eigenpair(alpha, &perturbed, &g, 1.0).unwrap();
        prop_assert!((a.lambda - b.lambda).abs() <= 1e-6 + 1e-9);
    }

    #[test]
    fn eigenvalue_increases_with_diffusion(cells in 16usize..48, hc in prop::collection::vec(0.2f64..2.0, 2), a1 in 0.05f64..1.0, gap in 0.05f64..1.0) {
        let g = Arc::new(SpatialGrid::unit_interval(cells).unwrap());
        let h = field(g.clone(), &hc);
        let curve = sigma_curve(&h, 1.0, a1, &[a1, a1 + gap]).unwrap();
        prop_assert!(curve.sigma[1] > curve.sigma[0]);
        prop_assert!(curve.derivative.iter().all(|d| *d > 0.0));
    }

    #[test]
    fn logistic_identities(cells in 16usize..64, alpha in 0.02f64..5.0, amp in 0.05f64..0.9) {
        let g = Arc::new(SpatialGrid::unit_interval(cells).unwrap());
        let m = Habitat::Cosine { amplitude: amp }.sample(g.clone()).unwrap();
        let s = solve_theta(alpha, &m, &g, DEFAULT_TOL).unwrap();
        prop_assert!(s.theta.min() > 0.0);
        prop_assert!(s.balance(&m).abs() <= 1e-9);
        prop_assert!(s.theta.integral() >= m.integral());
        prop_assert!(s.theta.is_nonconstant(1e-9));
    }

    #[test]
    fn airy_profile_identities(a1 in 0.01f64..10.0) {
        let a0 = find_a0().unwrap();
        let eta = build_eta_star(a1, AiryProfile::default_s_max(a1, a0), 201).unwrap();
        prop_assert_eq!(eta.a0, a1.powf(2.0 / 3.0) * a0);
        prop_assert!((eta.total_mass() - 1.0).abs() <= 1e-8);
        prop_assert!(eta.eval_derivative(0.0).abs() <= 1e-8);
        prop_assert!(eta.eta.iter().all(|v| *v > 0.0));
        // L² variant divided by its own integral recovers η*.
        let tilde = eta.l2_normalized();
        let ds = eta.s[1] - eta.s[0];
        let int: f64 = ds * (tilde.iter().sum::<f64>() - 0.5 * (tilde[0] + tilde[tilde.len() - 1]));
        let ratio = tilde[0] / int;
        prop_assert!((ratio - eta.eta[0]).abs() <= 1e-3 * eta.eta[0]);
    }

    #[test]
    fn imex_keeps_densities_positive(seed_a in prop::collection::vec(-1.0f64..1.0, 3), eps in 0.02f64..0.3, dt in 0.05f64..1.0) {
        let g = Arc::new(SpatialGrid::unit_interval(16).unwrap());
        let m = Habitat::default().sample(g.clone()).unwrap();
        let cfg = ModelConfig::new(m, 0.5, 2.0, eps, Some(24), false).unwrap();
        let u0 = StateField::from_fn(g, cfg.traits.clone(), |p, a| {
            (1.0 + 0.5 * seed_a[0] * (PI * p[0]).cos()) * (1.0 + 0.5 * seed_a[1] * (a - 1.25)).max(0.1) * (1.0 + 0.4 * seed_a[2])
        });
        // Positivity contract of the explicit reaction: dt (û − m) < 1.
        let uhat = dispersal::grid::integrate_trait(&u0);
        let dt = dt.min(0.9 / (uhat.max() - cfg.m.min()).max(1e-12));
        let u = evolve(&cfg, &u0, 5.0, dt).unwrap();
        prop_assert!(u.values.iter().all(|v| *v > 0.0 && v.is_finite()));
    }

    #[test]
    fn column_stochastic_mutation_conserves_mass(k in 2usize..6, eps in 0.0f64..1.0, weights in prop::collection::vec(0.1f64..2.0, 25)) {
        // Random irreducible M with zero column sums: positive off-diagonals.
        let mut mm = vec![0.0; k * k];
        for j in 0..k {
            let mut col = 0.0;
            for i in 0..k {
                if i != j {
                    mm[i * k + j] = weights[(i * k + j) % weights.len()];
                    col += mm[i * k + j];
                }
            }
            mm[j * k + j] = -col;
        }
        let g = Arc::new(SpatialGrid::unit_interval(8).unwrap());
        let m = SpatialField::constant(g.clone(), 1.0);
        let alphas: Vec<f64> = (0..k).map(|i| 0.5 + i as f64).collect();
        let sys = DiscreteTraitSystem::new(alphas, mm.clone(), eps, m).unwrap();
        prop_assert!((0..k).all(|j| (0..k).map(|i| sys.mutation()[i * k + j]).sum::<f64>().abs() <= 1e-12));
        // The mutation term integrates to zero for any density vector.
        let u: Vec<f64> = (0..k).map(|i| weights[i] * 0.3).collect();
        let total: f64 = (0..k).map(|i| (0..k).map(|j| mm[i * k + j] * u[j]).sum::<f64>()).sum();
        prop_assert!(total.abs() <= 1e-12 * (1.0 + u.iter().sum::<f64>() * 10.0));
        let nn = nearest_neighbor_mutation(k);
        prop_assert!((0..k).all(|i| nn[i * k + i] < 0.0));
    }
}
