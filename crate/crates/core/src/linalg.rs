//! Sparse storage and the linear solvers shared by the elliptic and parabolic
//! solvers: weighted conjugate gradients, banded and tridiagonal elimination,
//! and block-tridiagonal elimination with diagonal coupling blocks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates `(col, value)` over one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate().take(self.nrows) {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *out = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                triplets.push((c, r, v));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, triplets)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    /// Returns a copy with every row scaled by `scale[r]`.
    pub fn scale_rows(&self, scale: &[f64]) -> Self {
        let mut out = self.clone();
        for r in 0..self.nrows {
            for k in out.row_ptr[r]..out.row_ptr[r + 1] {
                out.values[k] *= scale[r];
            }
        }
        out
    }

    /// `scale · A + diag(d)` for a square matrix.
    pub fn scaled_plus_diagonal(&self, scale: f64, d: &[f64]) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz() + self.nrows);
        for r in 0..self.nrows {
            triplets.extend(self.row(r).map(|(c, v)| (r, c, scale * v)));
            triplets.push((r, r, d[r]));
        }
        Self::from_triplets(self.nrows, self.ncols, triplets)
    }

    /// Largest `|r - c|` over the stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.nrows)
            .flat_map(|r| self.row(r).map(move |(c, _)| r.abs_diff(c)))
            .max()
            .unwrap_or(0)
    }
}

/// Solves a tridiagonal system in place (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored. Requires a non-singular, pivot-free system.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut denom = diag[0];
    c[0] = upper[0] / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if i + 1 < n {
            c[i] = upper[i] / denom;
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// LU factorization with partial pivoting in LAPACK-style band storage.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    // Row-major band: row i holds columns i - kl ..= i + kl + ku.
    band: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(matrix: &CsrMatrix) -> Result<Self> {
        let n = matrix.nrows();
        let kl = matrix.bandwidth();
        let ku = kl;
        let width = 2 * kl + ku + 1;
        let mut band = vec![0.0; n * width];
        for r in 0..n {
            for (c, v) in matrix.row(r) {
                band[r * width + (c + kl - r)] += v;
            }
        }
        let mut lu = Self {
            n,
            kl,
            ku,
            band,
            pivots: vec![0; n],
        };
        lu.eliminate()?;
        Ok(lu)
    }

    fn width(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.band[r * self.width() + (c + self.kl - r)]
    }

    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        let w = self.width();
        &mut self.band[r * w + (c + self.kl - r)]
    }

    fn eliminate(&mut self) -> Result<()> {
        let (n, kl) = (self.n, self.kl);
        let reach = self.kl + self.ku;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.at(k, k).abs();
            for r in k + 1..=last_row {
                let v = self.at(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(Error::InvalidParameter("singular banded matrix".into()));
            }
            self.pivots[k] = p;
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    let a = self.at(k, c);
                    let b = self.at(p, c);
                    *self.at_mut(k, c) = b;
                    *self.at_mut(p, c) = a;
                }
            }
            let pivot = self.at(k, k);
            for r in k + 1..=last_row {
                let factor = self.at(r, k) / pivot;
                *self.at_mut(r, k) = factor;
                if factor != 0.0 {
                    for c in k + 1..=last_col {
                        let v = self.at(k, c);
                        *self.at_mut(r, c) -= factor * v;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl) = (self.n, self.kl);
        let reach = self.kl + self.ku;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let last_row = (k + kl).min(n - 1);
            for r in k + 1..=last_row {
                b[r] -= self.at(r, k) * b[k];
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + reach).min(n - 1);
            let mut acc = b[k];
            for c in k + 1..=last_col {
                acc -= self.at(k, c) * b[c];
            }
            b[k] = acc / self.at(k, k);
        }
    }
}

/// Cholesky factor `S = G Gᵀ` of a symmetric banded matrix. Factorization
/// succeeds exactly when `S` is positive definite (to working precision).
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // Row i holds G[i][i - bw ..= i].
    lower: Vec<f64>,
}

impl BandedCholesky {
    /// Factors the lower triangle of `matrix`; returns `None` on a
    /// non-positive pivot.
    pub fn factor(matrix: &CsrMatrix) -> Option<Self> {
        let n = matrix.nrows();
        let bw = matrix.bandwidth();
        let width = bw + 1;
        let mut lower = vec![0.0; n * width];
        for r in 0..n {
            for (c, v) in matrix.row(r) {
                if c <= r {
                    lower[r * width + (c + bw - r)] += v;
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut acc = lower[i * width + (j + bw - i)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    acc -= lower[i * width + (k + bw - i)] * lower[j * width + (k + bw - j)];
                }
                if j == i {
                    if !(acc > 0.0) {
                        return None;
                    }
                    lower[i * width + bw] = acc.sqrt();
                } else {
                    lower[i * width + (j + bw - i)] = acc / lower[j * width + bw];
                }
            }
        }
        Some(Self { n, bw, lower })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        let width = bw + 1;
        for i in 0..n {
            let mut acc = b[i];
            for k in i.saturating_sub(bw)..i {
                acc -= self.lower[i * width + (k + bw - i)] * b[k];
            }
            b[i] = acc / self.lower[i * width + bw];
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for k in i + 1..(i + bw + 1).min(n) {
                acc -= self.lower[k * width + (i + bw - k)] * b[k];
            }
            b[i] = acc / self.lower[i * width + bw];
        }
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Failure modes of [`weighted_cg`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CgFailure {
    /// `pᵀ A p <= 0`: the operator is not positive definite.
    Indefinite,
    MaxIterations(f64),
}

/// Preconditioned conjugate gradients for an operator that is self-adjoint and
/// positive definite in the inner product `⟨x, y⟩ = Σ w_i x_i y_i`.
///
/// `apply(x, y)` writes `A x` into `y`; `precond(r, z)` writes `M⁻¹ r` into `z`
/// for an `M` that is also self-adjoint positive definite in the same product.
pub fn weighted_cg<A, P>(
    apply: A,
    precond: P,
    weights: &[f64],
    rhs: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> std::result::Result<CgStats, CgFailure>
where
    A: Fn(&[f64], &mut [f64]),
    P: Fn(&[f64], &mut [f64]),
{
    let n = rhs.len();
    let dot = |a: &[f64], b: &[f64]| -> f64 {
        weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    };
    let b_norm = dot(rhs, rhs).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = dot(&r, &r).sqrt() / b_norm;
    for it in 0..max_iter {
        if rel <= rel_tol {
            return Ok(CgStats {
                iterations: it,
                relative_residual: rel,
            });
        }
        apply(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(CgFailure::Indefinite);
        }
        let step = rz / curvature;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        precond(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if rel <= rel_tol {
        Ok(CgStats {
            iterations: max_iter,
            relative_residual: rel,
        })
    } else {
        Err(CgFailure::MaxIterations(rel))
    }
}

/// Block-tridiagonal system whose diagonal blocks are dense and whose
/// off-diagonal blocks are diagonal matrices.
///
/// Block row `i` reads `lower[i] ∘ x_{i-1} + diag[i] x_i + upper[i] ∘ x_{i+1} = b_i`.
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    pub diag: Vec<DMatrix<f64>>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl BlockTridiagonal {
    /// Block Thomas elimination. Consumes the system; `rhs` is overwritten with
    /// the solution, laid out block after block.
    pub fn solve(self, rhs: &mut [f64]) -> Result<()> {
        let blocks = self.diag.len();
        let size = self.diag[0].nrows();
        let mut factors = Vec::with_capacity(blocks);
        // Schur complements S_i = D_i - L_i S_{i-1}^{-1} U_{i-1}; keep S_i^{-1} U_i.
        let mut coupling: Vec<DMatrix<f64>> = Vec::with_capacity(blocks);
        let mut schur = self.diag[0].clone();
        for i in 0..blocks {
            if i > 0 {
                let prev = &coupling[i - 1];
                let low = &self.lower[i];
                for c in 0..size {
                    for r in 0..size {
                        schur[(r, c)] -= low[r] * prev[(r, c)];
                    }
                }
            }
            let lu = schur.clone().lu();
            if i + 1 < blocks {
                let mut next = DMatrix::<f64>::zeros(size, size);
                for c in 0..size {
                    next[(c, c)] = self.upper[i][c];
                }
                if !lu.solve_mut(&mut next) {
                    return Err(Error::InvalidParameter(
                        "singular Schur block in block-tridiagonal solve".into(),
                    ));
                }
                coupling.push(next);
                schur = self.diag[i + 1].clone();
            }
            factors.push(lu);
        }
        // Forward sweep: y_i = S_i^{-1}(b_i - L_i y_{i-1}).
        for i in 0..blocks {
            let (head, tail) = rhs.split_at_mut(i * size);
            let block = &mut tail[..size];
            if i > 0 {
                let prev = &head[(i - 1) * size..];
                for r in 0..size {
                    block[r] -= self.lower[i][r] * prev[r];
                }
            }
            let mut v = nalgebra::DVectorViewMut::from_slice(block, size);
            if !factors[i].solve_mut(&mut v) {
                return Err(Error::InvalidParameter(
                    "singular Schur block in block-tridiagonal solve".into(),
                ));
            }
        }
        // Backward sweep: x_i = y_i - (S_i^{-1} U_i) x_{i+1}.
        for i in (0..blocks.saturating_sub(1)).rev() {
            let (head, tail) = rhs.split_at_mut((i + 1) * size);
            let next = &tail[..size];
            let block = &mut head[i * size..];
            let c = &coupling[i];
            for col in 0..size {
                let xv = next[col];
                if xv != 0.0 {
                    for r in 0..size {
                        block[r] -= c[(r, col)] * xv;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Ordinary least-squares line fit `y ≈ intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (zero for two points).
    pub slope_stderr: f64,
    /// Half-width of the 95% confidence interval on the slope.
    pub slope_ci95: f64,
    pub points: usize,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::InsufficientData(format!(
            "line fit needs at least two paired points, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("degenerate abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (stderr, ci) = if n > 2 {
        let sse: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        let se = (sse / (nf - 2.0) / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, nf - 2.0)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(f64::NAN);
        (se, t * se)
    } else {
        (0.0, 0.0)
    };
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr: stderr,
        slope_ci95: ci,
        points: n,
    })
}
