//! Local geometry of the expected log-likelihood
//! `Φ(L) = Σ_J p*_J log det(L_J) - log det(I + L)`.
//!
//! Everything here is exact enumeration over the `2^n` subsets. The
//! per-subset inverses `L_J^{-1}` are computed once per kernel
//! ([`SubsetCache`]) and shared by every derivative order and direction.
//!
//! With `a_{J,k} = Tr((L_J^{-1} H_J)^k)` and `a_k = Tr(((I + L)^{-1} H)^k)`,
//! the k-th directional derivative is
//! `(-1)^{k-1} (k-1)! (Σ_J p*_J a_{J,k} - a_k)`.

use std::f64::consts::SQRT_2;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::dpp::{build_table, log_det_spd, DppTable};
use crate::error::{DppError, Result};
use crate::kernel::{
    principal_submatrix, sym_dim, sym_index, DeterminantalGraph, KernelMatrix, SignDiagonal, SubsetMask,
    SymmetricDirection,
};
use crate::par::{self, Execution};

/// Largest ground set for which per-subset inverses are cached.
pub const GEOMETRY_MAX_N: usize = 14;

/// Relative eigenvalue threshold separating the Hessian null space.
pub const NULL_EIGEN_TOL: f64 = 1e-9;

/// Absolute tolerance on `d²Φ(H,H)` (scaled by `max(1, ‖H‖²)`) for a
/// direction to count as null.
pub const NULL_FORM_TOL: f64 = 1e-8;

/// Smallest eigenvalue of the information below which it is singular.
pub const SINGULAR_INFORMATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SubsetFactor {
    pub mask: SubsetMask,
    pub indices: Vec<usize>,
    pub inverse: DMatrix<f64>,
    pub log_det: f64,
}

/// `L_J^{-1}` and `log det L_J` for every subset, plus `(I + L)^{-1}`.
#[derive(Debug, Clone)]
pub struct SubsetCache {
    n: usize,
    factors: Vec<SubsetFactor>,
    global_inverse: DMatrix<f64>,
    log_det_global: f64,
}

fn spd_factor(m: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if m.nrows() == 0 {
        return Ok((m, 0.0));
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| DppError::Numerical("principal submatrix is not positive definite".into()))?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let inv = chol.inverse();
    Ok(((&inv + inv.transpose()) * 0.5, log_det))
}

impl SubsetCache {
    pub fn build(l: &KernelMatrix, exec: Execution) -> Result<Self> {
        let n = l.n();
        if n > GEOMETRY_MAX_N {
            return Err(DppError::GroundSetTooLarge { n, cap: GEOMETRY_MAX_N });
        }
        let factors = par::map_indexed(exec, 1 << n, |bits| {
            let mask = SubsetMask::new_unchecked(bits as u32, n);
            let (inverse, log_det) = spd_factor(principal_submatrix(l.matrix(), mask))?;
            Ok(SubsetFactor {
                mask,
                indices: mask.indices(),
                inverse,
                log_det,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let (global_inverse, log_det_global) = spd_factor(DMatrix::identity(n, n) + l.matrix())?;
        Ok(Self {
            n,
            factors,
            global_inverse,
            log_det_global,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn factors(&self) -> &[SubsetFactor] {
        &self.factors
    }

    /// `(I + L)^{-1}`.
    pub fn global_inverse(&self) -> &DMatrix<f64> {
        &self.global_inverse
    }

    pub fn log_det_global(&self) -> f64 {
        self.log_det_global
    }

    /// `a_{J,k}` for `k = 1..=max_k` (row `J`, column `k-1`) and `a_k`.
    pub fn power_traces(&self, h: &DMatrix<f64>, max_k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let per_subset = self
            .factors
            .iter()
            .map(|f| {
                if f.indices.is_empty() {
                    return vec![0.0; max_k];
                }
                let hj = DMatrix::from_fn(f.indices.len(), f.indices.len(), |r, c| h[(f.indices[r], f.indices[c])]);
                power_trace_seq(&(&f.inverse * hj), max_k)
            })
            .collect();
        let global = power_trace_seq(&(&self.global_inverse * h), max_k);
        (per_subset, global)
    }

    /// Coordinates of the zero-padded `L_J^{-1}` in the orthonormal
    /// symmetric basis; entry `q` equals `Tr(L_J^{-1} (B_q)_J)`.
    fn padded_inverse_coords(&self, factor: &SubsetFactor) -> Vec<f64> {
        let mut out = vec![0.0; sym_dim(self.n)];
        let idx = &factor.indices;
        for (a, &i) in idx.iter().enumerate() {
            out[i] = factor.inverse[(a, a)];
            for (b, &j) in idx.iter().enumerate().skip(a + 1) {
                out[sym_index(self.n, i, j)] = SQRT_2 * factor.inverse[(a, b)];
            }
        }
        out
    }
}

fn power_trace_seq(m: &DMatrix<f64>, max_k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_k);
    let mut p = m.clone();
    for k in 1..=max_k {
        if k > 1 {
            p = &p * m;
        }
        out.push(p.trace());
    }
    out
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(DppError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `Σ_J w_J log det(L_J) - log det(I + L)`, skipping subsets with zero
/// weight.
pub fn weighted_log_likelihood(weights: &[f64], l: &KernelMatrix) -> Result<f64> {
    let n = l.n();
    check_dims(1 << n, weights.len())?;
    let mut acc = 0.0;
    for (bits, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            acc += w * log_det_spd(principal_submatrix(
                l.matrix(),
                SubsetMask::new_unchecked(bits as u32, n),
            ))?;
        }
    }
    Ok(acc - log_det_spd(DMatrix::identity(n, n) + l.matrix())?)
}

/// `Σ_J w_J [L_J^{-1}]_padded - (I + L)^{-1}`, the gradient of
/// [`weighted_log_likelihood`] under the trace pairing.
pub fn weighted_gradient(weights: &[f64], l: &KernelMatrix) -> Result<DMatrix<f64>> {
    let n = l.n();
    check_dims(1 << n, weights.len())?;
    let mut g = DMatrix::zeros(n, n);
    for (bits, &w) in weights.iter().enumerate() {
        if w == 0.0 || bits == 0 {
            continue;
        }
        let mask = SubsetMask::new_unchecked(bits as u32, n);
        let idx = mask.indices();
        let (inv, _) = spd_factor(principal_submatrix(l.matrix(), mask))?;
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                g[(i, j)] += w * inv[(a, b)];
            }
        }
    }
    let (global, _) = spd_factor(DMatrix::identity(n, n) + l.matrix())?;
    g -= global;
    Ok((&g + g.transpose()) * 0.5)
}

/// `Φ_{L*}(L)` with `p*` taken from `table`.
pub fn expected_log_likelihood(table: &DppTable, l: &KernelMatrix) -> Result<f64> {
    check_dims(table.n(), l.n())?;
    weighted_log_likelihood(table.probs(), l)
}

/// Per-subset and global power traces of order `k` for one direction.
#[derive(Debug, Clone)]
pub struct TraceStatistics {
    pub reference: KernelMatrix,
    pub direction: SymmetricDirection,
    pub order: usize,
    /// `a_{J,k}` indexed by mask bits.
    pub per_subset: Vec<f64>,
    /// `a_k`.
    pub global: f64,
}

pub fn trace_statistics(l: &KernelMatrix, h: &SymmetricDirection, k: usize) -> Result<TraceStatistics> {
    check_dims(l.n(), h.n())?;
    if k == 0 {
        return Err(DppError::InvalidConfig("trace statistic order must be >= 1".into()));
    }
    let cache = SubsetCache::build(l, Execution::default())?;
    let (per, global) = cache.power_traces(h.matrix(), k);
    Ok(TraceStatistics {
        reference: l.clone(),
        direction: h.clone(),
        order: k,
        per_subset: per.into_iter().map(|v| v[k - 1]).collect(),
        global: global[k - 1],
    })
}

fn with_cache<T>(table: &DppTable, l: &KernelMatrix, f: impl FnOnce(&SubsetCache) -> T) -> Result<T> {
    check_dims(table.n(), l.n())?;
    if l == table.kernel() {
        Ok(f(table.cache()))
    } else {
        Ok(f(&SubsetCache::build(l, Execution::default())?))
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

fn expectation(p: &[f64], values: impl Iterator<Item = f64>) -> f64 {
    p.iter().zip(values).map(|(w, v)| w * v).sum()
}

/// `d^kΦ(L)(H, .., H)` in closed form, with `p*` from `table`.
pub fn directional_derivative(table: &DppTable, l: &KernelMatrix, h: &SymmetricDirection, k: usize) -> Result<f64> {
    check_dims(table.n(), h.n())?;
    if k == 0 {
        return Err(DppError::InvalidConfig("derivative order must be >= 1".into()));
    }
    with_cache(table, l, |cache| {
        let (per, global) = cache.power_traces(h.matrix(), k);
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let mean = expectation(table.probs(), per.iter().map(|v| v[k - 1]));
        sign * factorial(k - 1) * (mean - global[k - 1])
    })
}

/// The three closed forms of `d²Φ(L*)(H,H)` that must coincide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HessianRoutes {
    /// `-Var[Tr((L*_Z)^{-1} H_Z)]`.
    pub variance: f64,
    /// Order-2 directional derivative `-(Σ p*_J a_{J,2} - a_2)`.
    pub derivative: f64,
    /// `-(Σ p*_J a_{J,1}² - a_1²)`.
    pub rearranged: f64,
}

pub fn hessian_routes(table: &DppTable, h: &SymmetricDirection) -> Result<HessianRoutes> {
    check_dims(table.n(), h.n())?;
    let p = table.probs();
    let (per, global) = table.cache().power_traces(h.matrix(), 2);
    let m1 = expectation(p, per.iter().map(|v| v[0]));
    let variance = -expectation(p, per.iter().map(|v| (v[0] - m1).powi(2)));
    let derivative = -(expectation(p, per.iter().map(|v| v[1])) - global[1]);
    let rearranged = -(expectation(p, per.iter().map(|v| v[0] * v[0])) - global[0] * global[0]);
    Ok(HessianRoutes {
        variance,
        derivative,
        rearranged,
    })
}

/// `d²Φ(L*)(H,H) = -Var[Tr((L*_Z)^{-1} H_Z)]`.
pub fn hessian_quadratic_form(table: &DppTable, h: &SymmetricDirection) -> Result<f64> {
    Ok(hessian_routes(table, h)?.variance)
}

/// Hessian of `Φ` at `L*` as a matrix in the orthonormal symmetric basis.
#[derive(Debug, Clone)]
pub struct HessianForm {
    pub reference: KernelMatrix,
    pub matrix: DMatrix<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `i` belongs to `eigenvalues[i]`.
    pub eigenvectors: DMatrix<f64>,
}

pub fn hessian_matrix(table: &DppTable) -> HessianForm {
    hessian_matrix_with(table, Execution::default())
}

/// Assembles `M[p][q] = -Cov(Tr((L*_Z)^{-1} (B_p)_Z), Tr((L*_Z)^{-1} (B_q)_Z))`.
/// Rows are computed independently and written by index, so the matrix is
/// bit-identical across execution modes.
pub fn hessian_matrix_with(table: &DppTable, exec: Execution) -> HessianForm {
    let n = table.n();
    let m = sym_dim(n);
    let cache = table.cache();
    let p = table.probs();

    let coords: Vec<Vec<f64>> = cache.factors().iter().map(|f| cache.padded_inverse_coords(f)).collect();
    let mut mean = vec![0.0; m];
    for (w, c) in p.iter().zip(&coords) {
        for q in 0..m {
            mean[q] += w * c[q];
        }
    }
    let centered: Vec<Vec<f64>> = coords
        .iter()
        .map(|c| c.iter().zip(&mean).map(|(v, mu)| v - mu).collect())
        .collect();

    let rows = par::map_indexed(exec, m, |r| {
        (0..m)
            .map(|q| -p.iter().zip(&centered).map(|(w, c)| w * c[r] * c[q]).sum::<f64>())
            .collect::<Vec<f64>>()
    });
    let mut matrix = DMatrix::from_fn(m, m, |r, q| rows[r][q]);
    // exact symmetry; the two triangles differ only in summation rounding
    for r in 0..m {
        for q in 0..r {
            let v = 0.5 * (matrix[(r, q)] + matrix[(q, r)]);
            matrix[(r, q)] = v;
            matrix[(q, r)] = v;
        }
    }

    let (eigenvalues, eigenvectors) = sorted_eigen(&matrix);
    HessianForm {
        reference: table.kernel().clone(),
        matrix,
        eigenvalues,
        eigenvectors,
    }
}

pub(crate) fn sorted_eigen(matrix: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(matrix.clone());
    let mut order: Vec<usize> = (0..matrix.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(matrix.nrows(), matrix.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

impl HessianForm {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// `coords^T M coords`.
    pub fn quadratic(&self, coords: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(coords);
        (v.transpose() * &self.matrix * &v)[(0, 0)]
    }

    /// Indices of eigenvalues with `|λ| <= rel_tol * max|λ|`.
    pub fn null_indices(&self, rel_tol: f64) -> Vec<usize> {
        let cutoff = rel_tol * self.max_abs_eigenvalue();
        (0..self.dim())
            .filter(|&i| self.eigenvalues[i].abs() <= cutoff)
            .collect()
    }

    /// Orthonormal columns spanning the numerical null space.
    pub fn null_vectors(&self, rel_tol: f64) -> DMatrix<f64> {
        let idx = self.null_indices(rel_tol);
        DMatrix::from_fn(self.dim(), idx.len(), |r, c| self.eigenvectors[(r, idx[c])])
    }

    pub fn write_eigenvalues_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "index,eigenvalue")?;
        for (i, v) in self.eigenvalues.iter().enumerate() {
            writeln!(out, "{i},{v:e}")?;
        }
        Ok(())
    }

    pub fn write_matrix_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for r in 0..self.dim() {
            let row: Vec<String> = (0..self.dim()).map(|c| format!("{:e}", self.matrix[(r, c)])).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Largest principal angle between the column spans of two matrices with
/// orthonormal columns; `π/2` when the dimensions differ.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if a.ncols() == 0 {
        return 0.0;
    }
    // sin of the largest angle is the spectral norm of (I - A A^T) B
    let residual = b - a * (a.transpose() * b);
    let s = residual.singular_values().max();
    s.min(1.0).asin()
}

/// Basis of directions supported on pairs of indices in different blocks.
#[derive(Debug, Clone)]
pub struct NullSpaceBasis {
    pub pairs: Vec<(usize, usize)>,
    /// Unit-norm elements, `1/√2` at `(i, j)` and `(j, i)`.
    pub basis: Vec<SymmetricDirection>,
}

impl NullSpaceBasis {
    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    /// Basis coordinates as columns (each a unit vector).
    pub fn coords_matrix(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(sym_dim(n), self.pairs.len());
        for (c, &(i, j)) in self.pairs.iter().enumerate() {
            m[(sym_index(n, i, j), c)] = 1.0;
        }
        m
    }
}

pub fn null_space_basis(graph: &DeterminantalGraph) -> NullSpaceBasis {
    let n = graph.n();
    let pairs = graph.cross_pairs();
    let basis = pairs
        .iter()
        .map(|&(i, j)| SymmetricDirection::pair(n, i, j, std::f64::consts::FRAC_1_SQRT_2))
        .collect();
    NullSpaceBasis { pairs, basis }
}

/// `d⁴Φ(L*)(H,H,H,H)` for `H` in the Hessian null space, evaluated as
/// `-3 Var[Tr(((L*_Z)^{-1} H_Z)²)]`.
///
/// On the null space every `a_{J,1}` vanishes and `Σ p*_J a_{J,2} = a_2`;
/// expanding the fourth derivative of `log det(I + L* + tH)` through the
/// subset moments then leaves `Σ p*_J a_{J,4} - a_4 = Var[a_{Z,2}] / 2`,
/// which is the coefficient above after the `-(3!)` factor.
pub fn fourth_order_form(table: &DppTable, h: &SymmetricDirection) -> Result<f64> {
    let q = hessian_quadratic_form(table, h)?;
    let tol = NULL_FORM_TOL * h.frobenius_norm().powi(2).max(1.0);
    if q.abs() > tol {
        return Err(DppError::NotNullDirection {
            reason: format!("d²Φ(H,H) = {q:e} exceeds {tol:e}"),
        });
    }
    let p = table.probs();
    let (per, _) = table.cache().power_traces(h.matrix(), 2);
    let mean = expectation(p, per.iter().map(|v| v[1]));
    let var = expectation(p, per.iter().map(|v| (v[1] - mean).powi(2)));
    Ok(-3.0 * var)
}

/// One cross-block piece of a null direction.
#[derive(Debug, Clone)]
pub struct NullPiece {
    /// Component indices `(a, b)`, `a < b`.
    pub blocks: (usize, usize),
    pub direction: SymmetricDirection,
    /// `+1` on block `a`, `-1` elsewhere; fixes `L*` and negates the piece.
    pub signs: SignDiagonal,
}

/// Splits a null direction into per-block-pair pieces `H^{(a,b)}`, each
/// negated by conjugation with a sign diagonal that fixes `L*`. All-zero
/// pieces are omitted.
pub fn decompose_null_direction(h: &SymmetricDirection, graph: &DeterminantalGraph) -> Result<Vec<NullPiece>> {
    let n = graph.n();
    check_dims(n, h.n())?;
    let m = h.matrix();
    for i in 0..n {
        for j in i..n {
            if graph.same_component(i, j) && m[(i, j)] != 0.0 {
                return Err(DppError::NotNullDirection {
                    reason: format!("entry ({i}, {j}) lies inside a block"),
                });
            }
        }
    }
    let comps = graph.components();
    let mut pieces = Vec::new();
    for a in 0..comps.len() {
        for b in a + 1..comps.len() {
            let mut piece = DMatrix::zeros(n, n);
            for &i in &comps[a] {
                for &j in &comps[b] {
                    piece[(i, j)] = m[(i, j)];
                    piece[(j, i)] = m[(j, i)];
                }
            }
            if piece.iter().all(|v| *v == 0.0) {
                continue;
            }
            pieces.push(NullPiece {
                blocks: (a, b),
                direction: SymmetricDirection::new(piece)?,
                signs: SignDiagonal::indicator(n, &comps[a]),
            });
        }
    }
    Ok(pieces)
}

/// Relative residuals of the determinantal identities obtained by
/// differentiating `Σ_J det(L_J + tH_J) = det(I + L + tH)` at `t = 0`.
///
/// Each entry is `(left - right) / scale`, where `scale` is the largest
/// absolute term entering the identity (`0` when every term vanishes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResiduals {
    /// `Σ_J det(L_J) = det(I + L)`.
    pub normalization: f64,
    /// `Σ_J p_J a_{J,1} = a_1`.
    pub r1: f64,
    /// `Σ_J p_J a_{J,2} - a_2 = Σ_J p_J a_{J,1}² - a_1²`.
    pub r2: f64,
    /// Third derivative of `log det(I + L + tH)` from subset moments.
    pub r3: f64,
    /// Fourth derivative of `log det(I + L + tH)` from subset moments.
    pub r4: f64,
    /// `‖Σ_J p_J [L_J^{-1}]_padded - (I + L)^{-1}‖_F`.
    pub matrix_form_residual: f64,
}

impl IdentityResiduals {
    pub fn max_abs(&self) -> f64 {
        [self.normalization, self.r1, self.r2, self.r3, self.r4]
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

fn relative(residual: f64, terms: &[f64]) -> f64 {
    let scale = terms.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        0.0
    } else {
        residual / scale
    }
}

pub fn identity_residuals(l: &KernelMatrix, h: &SymmetricDirection) -> Result<IdentityResiduals> {
    check_dims(l.n(), h.n())?;
    let table = build_table(l)?;
    identity_residuals_for(&table, h)
}

/// [`identity_residuals`] against an already-built table.
pub fn identity_residuals_for(table: &DppTable, h: &SymmetricDirection) -> Result<IdentityResiduals> {
    check_dims(table.n(), h.n())?;
    let p = table.probs();
    let cache = table.cache();
    let (per, g) = cache.power_traces(h.matrix(), 4);
    let e = |f: &dyn Fn(&[f64]) -> f64| expectation(p, per.iter().map(|v| f(v)));

    let r1 = relative(e(&|a| a[0]) - g[0], &[e(&|a| a[0]), g[0]]);

    let (ea2, ea11) = (e(&|a| a[1]), e(&|a| a[0] * a[0]));
    let r2 = relative((ea2 - g[1]) - (ea11 - g[0] * g[0]), &[ea2, g[1], ea11, g[0] * g[0]]);

    // Derivatives of log det(L_J + tH_J) are y_k = (-1)^{k-1} (k-1)! a_{J,k};
    // the same for the global matrix. The k-th derivative of the log of
    // Σ_J exp(y_J(t)) is the k-th cumulant built from the raw moments
    // m_k = E[complete Bell polynomial B_k(y_1, .., y_k)].
    let y = |a: &[f64]| [a[0], -a[1], 2.0 * a[2], -6.0 * a[3]];
    let gy = y(&g);

    let m1 = e(&|a| y(a)[0]);
    let m2 = e(&|a| {
        let y = y(a);
        y[1] + y[0] * y[0]
    });
    let t3 = [
        e(&|a| y(a)[2]),
        3.0 * e(&|a| y(a)[0] * y(a)[1]),
        e(&|a| y(a)[0].powi(3)),
    ];
    let m3: f64 = t3.iter().sum();
    let c3 = m3 - 3.0 * m2 * m1 + 2.0 * m1.powi(3);
    let r3 = relative(
        c3 - gy[2],
        &[t3[0], t3[1], t3[2], 3.0 * m2 * m1, 2.0 * m1.powi(3), gy[2]],
    );

    let t4 = [
        e(&|a| y(a)[3]),
        4.0 * e(&|a| y(a)[0] * y(a)[2]),
        3.0 * e(&|a| y(a)[1].powi(2)),
        6.0 * e(&|a| y(a)[0].powi(2) * y(a)[1]),
        e(&|a| y(a)[0].powi(4)),
    ];
    let m4: f64 = t4.iter().sum();
    let c4 = m4 - 4.0 * m3 * m1 - 3.0 * m2 * m2 + 12.0 * m2 * m1 * m1 - 6.0 * m1.powi(4);
    let r4 = relative(
        c4 - gy[3],
        &[
            t4[0],
            t4[1],
            t4[2],
            t4[3],
            t4[4],
            4.0 * m3 * m1,
            3.0 * m2 * m2,
            12.0 * m2 * m1 * m1,
            6.0 * m1.powi(4),
            gy[3],
        ],
    );

    let n = table.n();
    let mut padded = DMatrix::zeros(n, n);
    for (w, f) in p.iter().zip(cache.factors()) {
        for (a, &i) in f.indices.iter().enumerate() {
            for (b, &j) in f.indices.iter().enumerate() {
                padded[(i, j)] += w * f.inverse[(a, b)];
            }
        }
    }
    let matrix_form_residual = (padded - cache.global_inverse()).norm();

    Ok(IdentityResiduals {
        normalization: table.normalization_residual(),
        r1,
        r2,
        r3,
        r4,
        matrix_form_residual,
    })
}

/// Smallest curvature `inf_{‖H‖_F = 1} -d²Φ(L*)(H,H)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinCurvature {
    pub value: f64,
    /// Set when `L*` has more than one block; `value` is then `0`.
    pub reducible: bool,
}

pub fn min_curvature(l_star: &KernelMatrix) -> Result<MinCurvature> {
    min_curvature_with(l_star, Execution::default())
}

pub fn min_curvature_with(l_star: &KernelMatrix, exec: Execution) -> Result<MinCurvature> {
    let graph = crate::kernel::determinantal_graph(l_star.matrix(), 0.0);
    if !graph.is_irreducible() {
        return Ok(MinCurvature {
            value: 0.0,
            reducible: true,
        });
    }
    let table = DppTable::build(l_star, GEOMETRY_MAX_N, exec)?;
    let form = hessian_matrix_with(&table, exec);
    Ok(MinCurvature {
        value: -form.eigenvalues[form.dim() - 1],
        reducible: false,
    })
}
