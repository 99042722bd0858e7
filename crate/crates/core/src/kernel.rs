//! Kernels, subsets, sign conjugation and the determinantal graph.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{DppError, Result};

/// Relative eigenvalue margin used for positive-definiteness checks.
pub const PD_TOLERANCE: f64 = 1e-12;

/// Asymmetry above which a loaded matrix literal triggers a warning.
pub const ASYMMETRY_WARN: f64 = 1e-9;

/// A subset `J` of the ground set `{0, .., n-1}` encoded as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubsetMask {
    bits: u32,
    n: u8,
}

impl SubsetMask {
    /// Largest ground set a mask can address.
    pub const MAX_N: usize = 31;

    pub fn new(bits: u32, n: usize) -> Result<Self> {
        if n > Self::MAX_N {
            return Err(DppError::GroundSetTooLarge { n, cap: Self::MAX_N });
        }
        if (bits as u64) >> n != 0 {
            return Err(DppError::InvalidConfig(format!(
                "mask {bits:#b} has bits outside a ground set of size {n}"
            )));
        }
        Ok(Self { bits, n: n as u8 })
    }

    pub(crate) fn new_unchecked(bits: u32, n: usize) -> Self {
        debug_assert!(n <= Self::MAX_N && (bits as u64) >> n == 0);
        Self { bits, n: n as u8 }
    }

    pub fn empty(n: usize) -> Self {
        Self::new_unchecked(0, n)
    }

    pub fn full(n: usize) -> Self {
        Self::new_unchecked(((1u64 << n) - 1) as u32, n)
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = 0u64;
        for &i in indices {
            if i >= n {
                return Err(DppError::DimensionMismatch {
                    expected: n,
                    found: i + 1,
                });
            }
            bits |= 1 << i;
        }
        Self::new(bits as u32, n)
    }

    /// All `2^n` subsets in increasing bit order.
    pub fn all(n: usize) -> impl Iterator<Item = SubsetMask> {
        (0..(1u64 << n)).map(move |b| SubsetMask::new_unchecked(b as u32, n))
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn index(self) -> usize {
        self.bits as usize
    }

    pub fn ground_size(self) -> usize {
        self.n as usize
    }

    pub fn len(self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.bits == 0
    }

    pub fn contains(self, i: usize) -> bool {
        i < self.n as usize && self.bits >> i & 1 == 1
    }

    pub fn is_subset_of(self, other: SubsetMask) -> bool {
        self.bits & !other.bits == 0
    }

    /// Members in increasing order.
    pub fn indices(self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        let mut b = self.bits;
        while b != 0 {
            out.push(b.trailing_zeros() as usize);
            b &= b - 1;
        }
        out
    }
}

/// Rows and columns of `m` indexed by `subset`, in increasing index order.
/// The empty subset yields a 0x0 matrix (determinant 1, trace 0).
pub fn principal_submatrix(m: &DMatrix<f64>, subset: SubsetMask) -> DMatrix<f64> {
    let idx = subset.indices();
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(DppError::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(DppError::InvalidConfig("ground set must be non-empty".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(DppError::Numerical("matrix has non-finite entries".into()));
    }
    Ok(m.nrows())
}

/// Symmetry is required up to `1e-12` of the largest entry; the stored matrix
/// is then mirrored so that `L[i][j] == L[j][i]` holds exactly.
fn exact_symmetric(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(&m)?;
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = max_asymmetry(&m);
    if asym > 1e-12 * scale {
        return Err(DppError::NotSymmetric { max_asymmetry: asym });
    }
    Ok(if asym == 0.0 { m } else { symmetrize(&m) })
}

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// A symmetric positive-definite L-ensemble kernel. Serializes as a
/// [`MatrixLiteral`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MatrixLiteral", try_from = "MatrixLiteral")]
pub struct KernelMatrix {
    entries: DMatrix<f64>,
    min_eigenvalue: f64,
    max_eigenvalue: f64,
}

impl KernelMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let entries = exact_symmetric(entries)?;
        let ev = sorted_eigenvalues(&entries);
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        if !(lo > 0.0 && lo > PD_TOLERANCE * hi) {
            return Err(DppError::NotPositiveDefinite {
                min_eigenvalue: lo,
                max_eigenvalue: hi,
            });
        }
        Ok(Self {
            entries,
            min_eigenvalue: lo,
            max_eigenvalue: hi,
        })
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(DppError::DimensionMismatch {
                expected: n * n,
                found: data.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n, n, data))
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is positive definite")
    }

    /// Tridiagonal kernel with `a` on the diagonal and `b` on the first
    /// off-diagonals.
    pub fn tridiagonal(n: usize, a: f64, b: f64) -> Result<Self> {
        Self::new(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                a
            } else if i.abs_diff(j) == 1 {
                b
            } else {
                0.0
            }
        }))
    }

    /// Block-diagonal kernel assembled from the given blocks in order.
    pub fn block_diagonal(blocks: &[KernelMatrix]) -> Result<Self> {
        let n: usize = blocks.iter().map(|b| b.n()).sum();
        let mut m = DMatrix::zeros(n, n);
        let mut offset = 0;
        for b in blocks {
            let k = b.n();
            m.view_mut((offset, offset), (k, k)).copy_from(b.matrix());
            offset += k;
        }
        Self::new(m)
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Smallest eigenvalue found by the construction check.
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.max_eigenvalue
    }

    pub fn submatrix(&self, subset: SubsetMask) -> DMatrix<f64> {
        principal_submatrix(&self.entries, subset)
    }

    pub fn frobenius_distance(&self, other: &KernelMatrix) -> f64 {
        (&self.entries - &other.entries).norm()
    }

    pub fn to_literal(&self) -> MatrixLiteral {
        MatrixLiteral::from_matrix(&self.entries)
    }
}

impl From<KernelMatrix> for MatrixLiteral {
    fn from(k: KernelMatrix) -> Self {
        MatrixLiteral::from_matrix(&k.entries)
    }
}

impl TryFrom<MatrixLiteral> for KernelMatrix {
    type Error = DppError;

    fn try_from(lit: MatrixLiteral) -> Result<Self> {
        lit.to_kernel()
    }
}

/// A symmetric correlation kernel `K` with spectrum in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationKernel {
    entries: DMatrix<f64>,
}

impl CorrelationKernel {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let entries = exact_symmetric(entries)?;
        for &ev in &sorted_eigenvalues(&entries) {
            if !(ev > PD_TOLERANCE && ev < 1.0 - PD_TOLERANCE) {
                return Err(DppError::InvalidCorrelationSpectrum { eigenvalue: ev });
            }
        }
        Ok(Self { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        sorted_eigenvalues(&self.entries)
    }
}

fn spd_inverse(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .cholesky()
        .ok_or_else(|| DppError::Numerical("matrix is not numerically positive definite".into()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// `K = L (I + L)^{-1}`, computed as `I - (I + L)^{-1}`.
pub fn l_to_k(l: &KernelMatrix) -> Result<CorrelationKernel> {
    let n = l.n();
    let inv = spd_inverse(DMatrix::identity(n, n) + l.matrix())?;
    CorrelationKernel::new(DMatrix::identity(n, n) - inv)
}

/// `L = K (I - K)^{-1}`, computed as `(I - K)^{-1} - I`.
pub fn k_to_l(k: &CorrelationKernel) -> Result<KernelMatrix> {
    let n = k.n();
    let inv = spd_inverse(DMatrix::identity(n, n) - k.matrix())?;
    KernelMatrix::new(inv - DMatrix::identity(n, n))
}

/// A diagonal matrix with `±1` entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct SignDiagonal {
    signs: Vec<i8>,
}

impl TryFrom<Vec<i8>> for SignDiagonal {
    type Error = DppError;

    fn try_from(signs: Vec<i8>) -> Result<Self> {
        if let Some(bad) = signs.iter().find(|&&s| s != 1 && s != -1) {
            return Err(DppError::InvalidConfig(format!("sign entry {bad} is not +1 or -1")));
        }
        Ok(Self { signs })
    }
}

impl From<SignDiagonal> for Vec<i8> {
    fn from(d: SignDiagonal) -> Self {
        d.signs
    }
}

impl SignDiagonal {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        Self::try_from(signs)
    }

    pub fn identity(n: usize) -> Self {
        Self { signs: vec![1; n] }
    }

    /// Bit `i` set means `signs[i] = -1`.
    pub fn from_bits(n: usize, bits: u64) -> Self {
        Self {
            signs: (0..n).map(|i| if bits >> i & 1 == 1 { -1 } else { 1 }).collect(),
        }
    }

    /// `+1` on `members`, `-1` elsewhere.
    pub fn indicator(n: usize, members: &[usize]) -> Self {
        let mut signs = vec![-1; n];
        for &i in members {
            signs[i] = 1;
        }
        Self { signs }
    }

    pub fn n(&self) -> usize {
        self.signs.len()
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn sign(&self, i: usize) -> f64 {
        self.signs[i] as f64
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.n(), |i, j| if i == j { self.sign(i) } else { 0.0 })
    }

    /// `D M D`, i.e. entry `(i, j)` scaled by `signs[i] * signs[j]`.
    pub fn conjugate(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.n(), "sign diagonal and matrix sizes differ");
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| self.sign(i) * self.sign(j) * m[(i, j)])
    }
}

pub fn conjugate_by_signs(l: &KernelMatrix, d: &SignDiagonal) -> KernelMatrix {
    // Conjugation by an orthogonal matrix preserves the spectrum.
    KernelMatrix {
        entries: d.conjugate(l.matrix()),
        min_eigenvalue: l.min_eigenvalue,
        max_eigenvalue: l.max_eigenvalue,
    }
}

/// A symmetric perturbation direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricDirection {
    entries: DMatrix<f64>,
}

/// Number of coordinates of an `n x n` symmetric matrix.
pub fn sym_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Coordinate index of the basis element touching `(i, j)`: diagonal
/// elements first, then off-diagonal pairs `i < j` in row-major order.
pub fn sym_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    if i == j {
        i
    } else {
        // pairs in rows before i, then offset within row i
        n + i * (2 * n - i - 1) / 2 + (j - i - 1)
    }
}

/// Inverse of [`sym_index`].
pub fn sym_pair(n: usize, q: usize) -> (usize, usize) {
    if q < n {
        return (q, q);
    }
    let mut r = q - n;
    for i in 0..n {
        let row = n - i - 1;
        if r < row {
            return (i, i + 1 + r);
        }
        r -= row;
    }
    panic!("coordinate {q} out of range for n = {n}");
}

impl SymmetricDirection {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            entries: exact_symmetric(entries)?,
        })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            entries: DMatrix::zeros(n, n),
        }
    }

    /// Symmetric matrix with `value` at `(i, j)` and `(j, i)`.
    pub fn pair(n: usize, i: usize, j: usize, value: f64) -> Self {
        let mut m = DMatrix::zeros(n, n);
        m[(i, j)] = value;
        m[(j, i)] = value;
        Self { entries: m }
    }

    pub fn from_coords(n: usize, coords: &[f64]) -> Result<Self> {
        if coords.len() != sym_dim(n) {
            return Err(DppError::DimensionMismatch {
                expected: sym_dim(n),
                found: coords.len(),
            });
        }
        let mut m = DMatrix::zeros(n, n);
        for (q, &c) in coords.iter().enumerate() {
            let (i, j) = sym_pair(n, q);
            if i == j {
                m[(i, i)] = c;
            } else {
                let v = c * std::f64::consts::FRAC_1_SQRT_2;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(Self { entries: m })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// Coordinates in the orthonormal basis of [`symmetric_basis`].
    pub fn coords(&self) -> Vec<f64> {
        sym_coords(&self.entries)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.norm()
    }

    /// Trace inner product `Tr(A B)`.
    pub fn inner(&self, other: &SymmetricDirection) -> f64 {
        self.entries.dot(&other.entries)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            entries: &self.entries * factor,
        }
    }

    pub fn normalized(&self) -> Self {
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            self.clone()
        } else {
            self.scaled(1.0 / norm)
        }
    }

    pub fn submatrix(&self, subset: SubsetMask) -> DMatrix<f64> {
        principal_submatrix(&self.entries, subset)
    }
}

/// Coordinates of a symmetric matrix: `m[i][i]` then `sqrt(2) m[i][j]`.
pub fn sym_coords(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = vec![0.0; sym_dim(n)];
    for i in 0..n {
        out[i] = m[(i, i)];
        for j in i + 1..n {
            out[sym_index(n, i, j)] = std::f64::consts::SQRT_2 * m[(i, j)];
        }
    }
    out
}

/// Orthonormal basis of the symmetric `n x n` matrices under `Tr(AB)`:
/// `E_ii` in increasing `i`, then `(E_ij + E_ji)/sqrt(2)` for `i < j` in
/// row-major order.
pub fn symmetric_basis(n: usize) -> Vec<SymmetricDirection> {
    (0..sym_dim(n))
        .map(|q| {
            let (i, j) = sym_pair(n, q);
            if i == j {
                SymmetricDirection::pair(n, i, i, 1.0)
            } else {
                SymmetricDirection::pair(n, i, j, std::f64::consts::FRAC_1_SQRT_2)
            }
        })
        .collect()
}

/// Graph on the ground set with an edge wherever the kernel has a nonzero
/// off-diagonal entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeterminantalGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    components: Vec<Vec<usize>>,
    component_of: Vec<usize>,
}

impl DeterminantalGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    pub fn component_of(&self, i: usize) -> usize {
        self.component_of[i]
    }

    pub fn same_component(&self, i: usize, j: usize) -> bool {
        self.component_of[i] == self.component_of[j]
    }

    pub fn is_irreducible(&self) -> bool {
        self.components.len() == 1
    }

    /// Pairs `i < j` in different components, row-major.
    pub fn cross_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if !self.same_component(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Builds the graph with an edge `{i, j}` iff `|L[i][j]| > zero_tol`.
pub fn determinantal_graph(l: &DMatrix<f64>, zero_tol: f64) -> DeterminantalGraph {
    let n = l.nrows();
    let mut adjacency = vec![Vec::new(); n];
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if l[(i, j)].abs() > zero_tol {
                edges.push((i, j));
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }

    let mut component_of = vec![usize::MAX; n];
    let mut components = Vec::new();
    for start in 0..n {
        if component_of[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = vec![start];
        component_of[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &w in &adjacency[v] {
                if component_of[w] == usize::MAX {
                    component_of[w] = id;
                    members.push(w);
                    queue.push_back(w);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }

    DeterminantalGraph {
        n,
        edges,
        components,
        component_of,
    }
}

/// JSON matrix literal `{"n": .., "entries": [row-major n*n reals]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixLiteral {
    pub n: usize,
    pub entries: Vec<f64>,
}

impl MatrixLiteral {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(m[(i, j)]);
            }
        }
        Self { n, entries }
    }

    /// Row-major matrix, symmetrized as `(A + A^T)/2`. Warns when the
    /// literal's asymmetry exceeds [`ASYMMETRY_WARN`].
    pub fn to_symmetric(&self) -> Result<DMatrix<f64>> {
        if self.entries.len() != self.n * self.n {
            return Err(DppError::DimensionMismatch {
                expected: self.n * self.n,
                found: self.entries.len(),
            });
        }
        let m = DMatrix::from_row_slice(self.n, self.n, &self.entries);
        let asym = max_asymmetry(&m);
        if asym > ASYMMETRY_WARN {
            log::warn!("matrix literal asymmetry {asym:e} exceeds {ASYMMETRY_WARN:e}; symmetrizing");
        }
        Ok(symmetrize(&m))
    }

    pub fn to_kernel(&self) -> Result<KernelMatrix> {
        KernelMatrix::new(self.to_symmetric()?)
    }
}
