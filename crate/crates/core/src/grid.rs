//! Uniform tensor grids on the habitat `D` and the trait interval
//! `[α_lo, α_hi]`, Neumann Laplacians and trapezoidal quadrature.
//!
//! Nodes sit on the cell vertices, boundary nodes included. The zero-flux
//! condition is closed with mirror ghost nodes (`u_{-1} = u_1`), which gives
//! the second-order boundary row `(2u_1 - 2u_0)/h²`. Scaling that row by the
//! trapezoidal weight `h/2` makes the stiffness matrix `K = W Δ_h` exactly
//! symmetric, so every operator here is self-adjoint in the inner product
//! `⟨f, g⟩ = Σ w_i f_i g_i`, which is the trapezoidal rule.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// Minimum number of cells per spatial axis.
pub const MIN_CELLS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SpatialGridSpec {
    extents: Vec<f64>,
    cells: Vec<usize>,
}

/// Uniform vertex-centred grid on the box `(0, L_1) × … × (0, L_N)`, `N ∈ {1, 2}`.
///
/// Nodes are stored row-major with axis 0 slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpatialGridSpec", into = "SpatialGridSpec")]
pub struct SpatialGrid {
    extents: Vec<f64>,
    cells: Vec<usize>,
    spacing: Vec<f64>,
    axis_nodes: Vec<Vec<f64>>,
    axis_weights: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<SpatialGridSpec> for SpatialGrid {
    type Error = Error;
    fn try_from(spec: SpatialGridSpec) -> Result<Self> {
        SpatialGrid::new(spec.extents, spec.cells)
    }
}

impl From<SpatialGrid> for SpatialGridSpec {
    fn from(g: SpatialGrid) -> Self {
        SpatialGridSpec {
            extents: g.extents,
            cells: g.cells,
        }
    }
}

fn trapezoid_weights(nodes: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; nodes];
    w[0] = 0.5 * h;
    w[nodes - 1] = 0.5 * h;
    w
}

impl SpatialGrid {
    pub fn new(extents: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        let dim = extents.len();
        if !(1..=2).contains(&dim) || cells.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2 with one cell count per axis, got {dim} extents and {} counts",
                cells.len()
            )));
        }
        for (a, (&len, &n)) in extents.iter().zip(&cells).enumerate() {
            if !(len > 0.0 && len.is_finite()) {
                return Err(Error::InvalidGrid(format!("axis {a}: extent {len} must be positive")));
            }
            if n < MIN_CELLS {
                return Err(Error::InvalidGrid(format!(
                    "axis {a}: {n} cells, need at least {MIN_CELLS}"
                )));
            }
        }
        let spacing: Vec<f64> = extents.iter().zip(&cells).map(|(l, &n)| l / n as f64).collect();
        let axis_nodes: Vec<Vec<f64>> = spacing
            .iter()
            .zip(&cells)
            .map(|(&h, &n)| (0..=n).map(|i| i as f64 * h).collect())
            .collect();
        let axis_weights: Vec<Vec<f64>> = spacing
            .iter()
            .zip(&cells)
            .map(|(&h, &n)| trapezoid_weights(n + 1, h))
            .collect();
        let weights = match dim {
            1 => axis_weights[0].clone(),
            _ => axis_weights[0]
                .iter()
                .flat_map(|a| axis_weights[1].iter().map(move |b| a * b))
                .collect(),
        };
        Ok(Self {
            extents,
            cells,
            spacing,
            axis_nodes,
            axis_weights,
            weights,
        })
    }

    /// `(0, 1)` with `cells` cells.
    pub fn unit_interval(cells: usize) -> Result<Self> {
        Self::new(vec![1.0], vec![cells])
    }

    /// `(0, 1)²` with `cells × cells` cells.
    pub fn unit_square(cells: usize) -> Result<Self> {
        Self::new(vec![1.0, 1.0], vec![cells, cells])
    }

    pub fn dimension(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn nodes_per_axis(&self, axis: usize) -> usize {
        self.cells[axis] + 1
    }

    pub fn axis_nodes(&self, axis: usize) -> &[f64] {
        &self.axis_nodes[axis]
    }

    pub(crate) fn axis_weights(&self, axis: usize) -> &[f64] {
        &self.axis_weights[axis]
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Trapezoidal quadrature weights, one per node.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// `|D|` as the sum of the quadrature weights.
    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Coordinates of node `idx`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        match self.dimension() {
            1 => vec![self.axis_nodes[0][idx]],
            _ => {
                let n1 = self.nodes_per_axis(1);
                vec![self.axis_nodes[0][idx / n1], self.axis_nodes[1][idx % n1]]
            }
        }
    }

    /// Nearest-neighbour pairs `(i, j, h)` along every axis, used for gradients.
    pub(crate) fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        match self.dimension() {
            1 => {
                let h = self.spacing[0];
                for i in 0..self.cells[0] {
                    out.push((i, i + 1, h));
                }
            }
            _ => {
                let (n0, n1) = (self.nodes_per_axis(0), self.nodes_per_axis(1));
                for i in 0..n0 {
                    for j in 0..n1 {
                        let idx = i * n1 + j;
                        if i + 1 < n0 {
                            out.push((idx, idx + n1, self.spacing[0]));
                        }
                        if j + 1 < n1 {
                            out.push((idx, idx + 1, self.spacing[1]));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Trait interval `[α_lo, α_hi]` with `cells` uniform cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TraitGridSpec", into = "TraitGridSpec")]
pub struct TraitGrid {
    lo: f64,
    hi: f64,
    cells: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraitGridSpec {
    alpha_lo: f64,
    alpha_hi: f64,
    cells: usize,
}

impl TryFrom<TraitGridSpec> for TraitGrid {
    type Error = Error;
    fn try_from(s: TraitGridSpec) -> Result<Self> {
        TraitGrid::new(s.alpha_lo, s.alpha_hi, s.cells)
    }
}

impl From<TraitGrid> for TraitGridSpec {
    fn from(g: TraitGrid) -> Self {
        TraitGridSpec {
            alpha_lo: g.lo,
            alpha_hi: g.hi,
            cells: g.cells,
        }
    }
}

impl TraitGrid {
    pub fn new(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "trait interval needs 0 < alpha_lo < alpha_hi, got [{lo}, {hi}]"
            )));
        }
        if cells < 1 {
            return Err(Error::InvalidGrid("trait grid needs at least one cell".into()));
        }
        let h = (hi - lo) / cells as f64;
        let mut nodes: Vec<f64> = (0..=cells).map(|j| lo + j as f64 * h).collect();
        nodes[cells] = hi;
        Ok(Self {
            lo,
            hi,
            cells,
            nodes,
            weights: trapezoid_weights(cells + 1, h),
        })
    }

    /// Cell count resolving an `ε^{2/3}` boundary layer with at least eight
    /// nodes per layer width, and never fewer than 128 cells.
    pub fn layer_resolving_cells(lo: f64, hi: f64, epsilon: f64) -> usize {
        let needed = (8.0 * (hi - lo) / epsilon.powf(2.0 / 3.0)).ceil() as usize;
        needed.max(128)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Discrete second-order operator `L = W⁻¹ K` with `K` symmetric.
#[derive(Debug, Clone)]
pub struct LinearOperator {
    matrix: CsrMatrix,
    stiffness: CsrMatrix,
    mass: Vec<f64>,
    symmetric: bool,
    tag: String,
}

impl LinearOperator {
    fn from_stiffness(stiffness: CsrMatrix, mass: Vec<f64>, tag: impl Into<String>) -> Self {
        let inv: Vec<f64> = mass.iter().map(|w| 1.0 / w).collect();
        Self {
            matrix: stiffness.scale_rows(&inv),
            stiffness,
            mass,
            symmetric: true,
            tag: tag.into(),
        }
    }

    /// Row form `L` acting on nodal values.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Symmetric weighted form `K = W L`.
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Lumped mass (trapezoidal weights).
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Whether the operator is self-adjoint in the trapezoidal inner product.
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(f)
    }

    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        self.matrix.mul_vec_into(f, out);
    }

    /// `-fᵀ K f`, the discrete Dirichlet energy `∫ |∇f|²`.
    pub fn energy(&self, f: &[f64]) -> f64 {
        let kf = self.stiffness.mul_vec(f);
        -f.iter().zip(&kf).map(|(a, b)| a * b).sum::<f64>()
    }
}

fn axis_stiffness(nodes: usize, h: f64) -> Vec<(usize, usize, f64)> {
    let mut t = Vec::with_capacity(3 * nodes);
    for i in 0..nodes - 1 {
        t.push((i, i, -1.0 / h));
        t.push((i + 1, i + 1, -1.0 / h));
        t.push((i, i + 1, 1.0 / h));
        t.push((i + 1, i, 1.0 / h));
    }
    t
}

/// Neumann Laplacian `Δ_h` on the spatial grid.
pub fn build_spatial_laplacian(grid: &SpatialGrid) -> LinearOperator {
    let n = grid.len();
    let stiffness = match grid.dimension() {
        1 => CsrMatrix::from_triplets(n, n, axis_stiffness(grid.nodes_per_axis(0), grid.spacing(0))),
        _ => {
            let (n0, n1) = (grid.nodes_per_axis(0), grid.nodes_per_axis(1));
            let (w0, w1) = (grid.axis_weights(0), grid.axis_weights(1));
            let mut t = Vec::new();
            // K = K_0 ⊗ W_1 + W_0 ⊗ K_1
            for (r, c, v) in axis_stiffness(n0, grid.spacing(0)) {
                for j in 0..n1 {
                    t.push((r * n1 + j, c * n1 + j, v * w1[j]));
                }
            }
            for (r, c, v) in axis_stiffness(n1, grid.spacing(1)) {
                for i in 0..n0 {
                    t.push((i * n1 + r, i * n1 + c, v * w0[i]));
                }
            }
            CsrMatrix::from_triplets(n, n, t)
        }
    };
    LinearOperator::from_stiffness(stiffness, grid.weights().to_vec(), "spatial-neumann-laplacian")
}

/// Neumann Laplacian `∂²_α` on the trait grid.
pub fn build_trait_laplacian(grid: &TraitGrid) -> LinearOperator {
    let n = grid.len();
    let stiffness = CsrMatrix::from_triplets(n, n, axis_stiffness(n, grid.spacing()));
    LinearOperator::from_stiffness(stiffness, grid.weights().to_vec(), "trait-neumann-laplacian")
}

/// Function of `x` only, sampled on the spatial nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialField {
    pub grid: Arc<SpatialGrid>,
    pub values: Vec<f64>,
}

impl SpatialField {
    pub fn new(grid: Arc<SpatialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid with {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("spatial field has non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: Arc<SpatialGrid>, f: F) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self { grid, values }
    }

    pub fn constant(grid: Arc<SpatialGrid>, c: f64) -> Self {
        let values = vec![c; grid.len()];
        Self { grid, values }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn integral(&self) -> f64 {
        integrate_spatial(self)
    }

    /// Mean value `∫ f / |D|`.
    pub fn mean(&self) -> f64 {
        self.integral() / self.grid.volume()
    }

    /// Whether `max - min` exceeds `tol`.
    pub fn is_nonconstant(&self, tol: f64) -> bool {
        self.max() - self.min() > tol
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `max_i |f_i - g_i|`.
    pub fn distance_inf(&self, other: &SpatialField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("spatial fields live on different grids".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }
}

/// Density `u(x, α)` on the product grid, stored `x`-major (`α` contiguous).
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub spatial: Arc<SpatialGrid>,
    pub traits: Arc<TraitGrid>,
    pub values: Vec<f64>,
}

impl StateField {
    pub fn new(spatial: Arc<SpatialGrid>, traits: Arc<TraitGrid>, values: Vec<f64>) -> Result<Self> {
        let expected = spatial.len() * traits.len();
        if values.len() != expected {
            return Err(Error::GridMismatch(format!(
                "{} values for a {} x {} product grid",
                values.len(),
                spatial.len(),
                traits.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("state field has non-finite values".into()));
        }
        Ok(Self {
            spatial,
            traits,
            values,
        })
    }

    pub fn from_fn<F: Fn(&[f64], f64) -> f64>(
        spatial: Arc<SpatialGrid>,
        traits: Arc<TraitGrid>,
        f: F,
    ) -> Self {
        let mut values = Vec::with_capacity(spatial.len() * traits.len());
        for i in 0..spatial.len() {
            let p = spatial.point(i);
            for &a in traits.nodes() {
                values.push(f(&p, a));
            }
        }
        Self {
            spatial,
            traits,
            values,
        }
    }

    pub fn n_alpha(&self) -> usize {
        self.traits.len()
    }

    pub fn at(&self, ix: usize, ja: usize) -> f64 {
        self.values[ix * self.traits.len() + ja]
    }

    /// Trait profile `u(x_i, ·)`.
    pub fn trait_slice(&self, ix: usize) -> &[f64] {
        let n = self.traits.len();
        &self.values[ix * n..(ix + 1) * n]
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `∫∫ u dα dx`.
    pub fn total_mass(&self) -> f64 {
        integrate_spatial(&integrate_trait(self))
    }

    pub fn same_grids(&self, other: &StateField) -> bool {
        self.spatial == other.spatial && self.traits == other.traits
    }

    pub fn distance_inf(&self, other: &StateField) -> Result<f64> {
        if !self.same_grids(other) {
            return Err(Error::GridMismatch("state fields live on different grids".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }
}

/// `û(x) = ∫ u(x, α) dα` by the trapezoidal rule.
pub fn integrate_trait(u: &StateField) -> SpatialField {
    let w = u.traits.weights();
    let values = u
        .values
        .chunks(u.traits.len())
        .map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum())
        .collect();
    SpatialField {
        grid: u.spatial.clone(),
        values,
    }
}

/// `∫_D f dx` by the trapezoidal rule.
pub fn integrate_spatial(f: &SpatialField) -> f64 {
    f.values.iter().zip(f.grid.weights()).map(|(a, b)| a * b).sum()
}

/// Eigenbasis of the spatial Neumann Laplacian, one dense factor per axis.
///
/// With `Δ_h = W⁻¹K` and `S = W^{-1/2} K W^{-1/2} = Q Λ Qᵀ`, the forward map is
/// `c = Qᵀ W^{1/2} f` and the inverse map `f = W^{-1/2} Q c`.
#[derive(Debug, Clone)]
pub struct SpatialModes {
    forward: Vec<DMatrix<f64>>,
    inverse: Vec<DMatrix<f64>>,
    axis_eigenvalues: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    shape: Vec<usize>,
}

impl SpatialModes {
    pub fn new(grid: &SpatialGrid) -> Self {
        let mut forward = Vec::new();
        let mut inverse = Vec::new();
        let mut axis_eigenvalues = Vec::new();
        let mut shape = Vec::new();
        for axis in 0..grid.dimension() {
            let n = grid.nodes_per_axis(axis);
            let h = grid.spacing(axis);
            let w = grid.axis_weights(axis);
            let k = CsrMatrix::from_triplets(n, n, axis_stiffness(n, h));
            let sym = DMatrix::from_fn(n, n, |r, c| k.get(r, c) / (w[r] * w[c]).sqrt());
            let eig = SymmetricEigen::new(sym);
            let q = eig.eigenvectors;
            let fwd = DMatrix::from_fn(n, n, |m, i| q[(i, m)] * w[i].sqrt());
            let inv = DMatrix::from_fn(n, n, |i, m| q[(i, m)] / w[i].sqrt());
            forward.push(fwd);
            inverse.push(inv);
            axis_eigenvalues.push(eig.eigenvalues.iter().copied().collect::<Vec<_>>());
            shape.push(n);
        }
        let eigenvalues = match shape.len() {
            1 => axis_eigenvalues[0].clone(),
            _ => axis_eigenvalues[0]
                .iter()
                .flat_map(|a| axis_eigenvalues[1].iter().map(move |b| a + b))
                .collect(),
        };
        Self {
            forward,
            inverse,
            axis_eigenvalues,
            eigenvalues,
            shape,
        }
    }

    /// Eigenvalues of `Δ_h` (all `≤ 0`), in mode order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn axis_eigenvalues(&self, axis: usize) -> &[f64] {
        &self.axis_eigenvalues[axis]
    }

    /// Transforms `data`, laid out as `[node][inner]`, to modal coefficients.
    pub fn to_modes(&self, data: &[f64], inner: usize) -> Vec<f64> {
        self.transform(&self.forward, data, inner)
    }

    /// Inverse of [`SpatialModes::to_modes`].
    pub fn from_modes(&self, data: &[f64], inner: usize) -> Vec<f64> {
        self.transform(&self.inverse, data, inner)
    }

    fn transform(&self, mats: &[DMatrix<f64>], data: &[f64], inner: usize) -> Vec<f64> {
        match self.shape.len() {
            1 => apply_along_leading(&mats[0], data, inner),
            _ => {
                let (n0, n1) = (self.shape[0], self.shape[1]);
                let slab = n1 * inner;
                let mut out = vec![0.0; data.len()];
                for i in 0..n0 {
                    let part = apply_along_leading(&mats[1], &data[i * slab..(i + 1) * slab], inner);
                    out[i * slab..(i + 1) * slab].copy_from_slice(&part);
                }
                apply_along_leading(&mats[0], &out, slab)
            }
        }
    }
}

/// `out[i][k] = Σ_j T[i][j] data[j][k]` for row-major `data` of shape `n × inner`.
fn apply_along_leading(t: &DMatrix<f64>, data: &[f64], inner: usize) -> Vec<f64> {
    let n = t.nrows();
    // Column-major (inner × n) view of the row-major (n × inner) data.
    let view = nalgebra::DMatrixView::from_slice(data, inner, n);
    let result = view * t.transpose();
    result.as_slice().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(cells: usize) -> Arc<SpatialGrid> {
        Arc::new(SpatialGrid::unit_interval(cells).unwrap())
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(SpatialGrid::unit_interval(4).is_err());
        assert!(SpatialGrid::new(vec![1.0, 1.0, 1.0], vec![8, 8, 8]).is_err());
        assert!(SpatialGrid::new(vec![-1.0], vec![16]).is_err());
        assert!(TraitGrid::new(0.0, 1.0, 10).is_err());
        assert!(TraitGrid::new(2.0, 1.0, 10).is_err());
    }

    #[test]
    fn volume_matches_extents() {
        let g = SpatialGrid::new(vec![2.0, 0.5], vec![16, 9]).unwrap();
        assert!((g.volume() - 1.0).abs() < 1e-12);
        assert_eq!(g.len(), 17 * 10);
        let t = TraitGrid::new(0.5, 2.0, 128).unwrap();
        assert!(t.nodes().windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*t.nodes().last().unwrap(), 2.0);
    }

    #[test]
    fn laplacian_kills_constants_and_is_symmetric() {
        for grid in [SpatialGrid::unit_interval(128).unwrap(), SpatialGrid::unit_square(12).unwrap()] {
            let lap = build_spatial_laplacian(&grid);
            for s in lap.matrix().row_sums() {
                assert!(s.abs() < 1e-12 * 4.0 / grid.spacing(0).powi(2));
            }
            let ones = vec![3.5; grid.len()];
            assert!(lap.apply(&ones).iter().all(|v| v.abs() < 1e-9));
            assert_eq!(lap.stiffness(), &lap.stiffness().transpose());
        }
        let tl = build_trait_laplacian(&TraitGrid::new(0.5, 2.0, 40).unwrap());
        assert_eq!(tl.stiffness(), &tl.stiffness().transpose());
        assert!(tl.matrix().row_sums().iter().all(|s| s.abs() < 1e-9));
    }

    #[test]
    fn cosine_second_derivative_second_order() {
        let err = |cells: usize| {
            let g = line(cells);
            let lap = build_spatial_laplacian(&g);
            let f = SpatialField::from_fn(g.clone(), |p| (PI * p[0]).cos());
            let lf = lap.apply(&f.values);
            (0..g.len())
                .map(|i| (lf[i] + PI * PI * f.values[i]).abs())
                .fold(0.0, f64::max)
        };
        let (coarse, fine) = (err(64), err(128));
        // Truncation error π⁴h²/12.
        assert!(fine < PI.powi(4) / 12.0 / 128f64.powi(2) * 1.01);
        let ratio = coarse / fine;
        assert!((ratio - 4.0).abs() < 0.05, "refinement ratio {ratio}");
    }

    #[test]
    fn trait_cosine_second_derivative() {
        let (lo, hi) = (0.5, 2.0);
        let t = TraitGrid::new(lo, hi, 128).unwrap();
        let lap = build_trait_laplacian(&t);
        let k = PI / (hi - lo);
        let f: Vec<f64> = t.nodes().iter().map(|a| (k * (a - lo)).cos()).collect();
        let lf = lap.apply(&f);
        let h = t.spacing();
        for (v, fv) in lf.iter().zip(&f) {
            assert!((v + k * k * fv).abs() <= k.powi(4) * h * h / 12.0 * 1.01);
        }
    }

    #[test]
    fn discrete_divergence_theorem() {
        let g = Arc::new(SpatialGrid::unit_square(10).unwrap());
        let lap = build_spatial_laplacian(&g);
        let f = SpatialField::from_fn(g.clone(), |p| (3.0 * p[0]).exp() * (1.0 + p[1] * p[1]));
        let lf = SpatialField::new(g.clone(), lap.apply(&f.values)).unwrap();
        assert!(integrate_spatial(&lf).abs() < 1e-10);
        assert!(lap.energy(&f.values) >= 0.0);
    }

    #[test]
    fn quadrature_examples() {
        let g = line(128);
        assert!((SpatialField::constant(g.clone(), 1.0).integral() - 1.0).abs() < 1e-14);
        let m = SpatialField::from_fn(g.clone(), |p| 1.0 + 0.5 * (PI * p[0]).cos());
        assert!((m.integral() - 1.0).abs() < 1e-10);
        let sq = SpatialField::from_fn(g.clone(), |p| p[0] * p[0]);
        let h: f64 = 1.0 / 128.0;
        // Trapezoid error for x² on (0,1) is exactly h²/6.
        assert!((sq.integral() - 1.0 / 3.0 - h * h / 6.0).abs() < 1e-14);
    }

    #[test]
    fn trait_integration_examples() {
        let g = line(16);
        let (lo, hi) = (0.5, 2.0);
        let t = Arc::new(TraitGrid::new(lo, hi, 64).unwrap());
        let flat = StateField::from_fn(g.clone(), t.clone(), |_, _| 1.0 / (hi - lo));
        assert!(integrate_trait(&flat).values.iter().all(|v| (v - 1.0).abs() < 1e-13));
        let lin = StateField::from_fn(g.clone(), t.clone(), |p, a| (1.0 + p[0]) * a);
        let u = integrate_trait(&lin);
        for (i, v) in u.values.iter().enumerate() {
            let gx = 1.0 + g.point(i)[0];
            assert!((v - gx * (hi * hi - lo * lo) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_trait_integral_converges() {
        let g = line(8);
        let bump = |_: &[f64], a: f64| (-((a - 1.1) / 0.15f64).powi(2)).exp();
        let coarse = Arc::new(TraitGrid::new(0.5, 2.0, 256).unwrap());
        let fine = Arc::new(TraitGrid::new(0.5, 2.0, 2048).unwrap());
        let uc = integrate_trait(&StateField::from_fn(g.clone(), coarse, bump));
        let uf = integrate_trait(&StateField::from_fn(g.clone(), fine, bump));
        assert!(uc.distance_inf(&uf).unwrap() < 1e-6);
    }

    #[test]
    fn modes_diagonalize_laplacian() {
        for grid in [SpatialGrid::unit_interval(20).unwrap(), SpatialGrid::new(vec![1.0, 2.0], vec![8, 10]).unwrap()] {
            let lap = build_spatial_laplacian(&grid);
            let modes = SpatialModes::new(&grid);
            let inner = 3;
            let n = grid.len();
            let data: Vec<f64> = (0..n * inner).map(|k| ((k * 7 % 13) as f64).sin()).collect();
            let coeff = modes.to_modes(&data, inner);
            let back = modes.from_modes(&coeff, inner);
            for (a, b) in back.iter().zip(&data) {
                assert!((a - b).abs() < 1e-10);
            }
            // Δ in modal space is diagonal.
            let mut lap_data = vec![0.0; n * inner];
            for c in 0..inner {
                let col: Vec<f64> = (0..n).map(|i| data[i * inner + c]).collect();
                let lc = lap.apply(&col);
                for i in 0..n {
                    lap_data[i * inner + c] = lc[i];
                }
            }
            let lap_coeff = modes.to_modes(&lap_data, inner);
            for m in 0..n {
                for c in 0..inner {
                    let expect = modes.eigenvalues()[m] * coeff[m * inner + c];
                    assert!((lap_coeff[m * inner + c] - expect).abs() < 1e-7 * (1.0 + expect.abs()));
                }
            }
        }
    }
}
