//! Exact L-ensemble distribution over all `2^n` subsets.

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DppError, Result};
use crate::geometry::SubsetCache;
use crate::kernel::{l_to_k, principal_submatrix, KernelMatrix, SubsetMask};
use crate::par::{self, Execution};
use crate::rng;

/// Largest ground set for which the full table is enumerated by default.
pub const DEFAULT_MAX_N: usize = 20;

/// Residual of `sum_J det(L_J) = det(I + L)` above which a table is refused.
pub const NORMALIZATION_FAIL: f64 = 1e-6;

/// Draws generated from one random stream.
const SAMPLE_CHUNK: usize = 1 << 16;

/// `log det(m)` from a Cholesky factorization (`0` for the empty matrix).
pub(crate) fn log_det_spd(m: DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| DppError::Numerical("principal submatrix is not positive definite".into()))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// `log det(L_J)` for every subset, indexed by mask bits.
pub fn subset_log_dets(l: &KernelMatrix, exec: Execution) -> Result<Vec<f64>> {
    let n = l.n();
    let logs = par::map_indexed(exec, 1 << n, |bits| {
        log_det_spd(principal_submatrix(
            l.matrix(),
            SubsetMask::new_unchecked(bits as u32, n),
        ))
    });
    logs.into_iter().collect()
}

pub(crate) fn log_det_i_plus(l: &KernelMatrix) -> Result<f64> {
    let n = l.n();
    log_det_spd(DMatrix::identity(n, n) + l.matrix())
}

/// `P[Z = J] = det(L_J) / det(I + L)`.
pub fn subset_probability(l: &KernelMatrix, subset: SubsetMask) -> Result<f64> {
    check_mask(l.n(), subset)?;
    Ok((log_det_spd(l.submatrix(subset))? - log_det_i_plus(l)?).exp())
}

/// `P[S ⊆ Z] = det(K_S)`.
pub fn inclusion_probability(l: &KernelMatrix, subset: SubsetMask) -> Result<f64> {
    check_mask(l.n(), subset)?;
    let k = l_to_k(l)?;
    Ok(log_det_spd(principal_submatrix(k.matrix(), subset))?.exp())
}

/// `P[Z = ∅] = det(I - K)`.
pub fn empty_probability(l: &KernelMatrix) -> Result<f64> {
    let n = l.n();
    let k = l_to_k(l)?;
    Ok(log_det_spd(DMatrix::identity(n, n) - k.matrix())?.exp())
}

fn check_mask(n: usize, subset: SubsetMask) -> Result<()> {
    if subset.ground_size() != n {
        return Err(DppError::DimensionMismatch {
            expected: n,
            found: subset.ground_size(),
        });
    }
    Ok(())
}

/// Every point probability `p_J(L)` of an L-ensemble.
#[derive(Debug)]
pub struct DppTable {
    kernel: KernelMatrix,
    probs: Vec<f64>,
    log_dets: Vec<f64>,
    log_normalizer: f64,
    normalization_residual: f64,
    cache: OnceLock<SubsetCache>,
}

impl Clone for DppTable {
    fn clone(&self) -> Self {
        Self {
            kernel: self.kernel.clone(),
            probs: self.probs.clone(),
            log_dets: self.log_dets.clone(),
            log_normalizer: self.log_normalizer,
            normalization_residual: self.normalization_residual,
            cache: OnceLock::new(),
        }
    }
}

/// Builds the table with the default cap and execution mode.
pub fn build_table(l: &KernelMatrix) -> Result<DppTable> {
    DppTable::build(l, DEFAULT_MAX_N, Execution::default())
}

impl DppTable {
    /// Enumerates all minors, checks `sum_J det(L_J) = det(I + L)` and
    /// normalizes with a log-sum-exp.
    pub fn build(l: &KernelMatrix, max_n: usize, exec: Execution) -> Result<Self> {
        let n = l.n();
        if n > max_n || n > SubsetMask::MAX_N {
            return Err(DppError::GroundSetTooLarge {
                n,
                cap: max_n.min(SubsetMask::MAX_N),
            });
        }
        let log_dets = subset_log_dets(l, exec)?;
        let log_normalizer = log_det_i_plus(l)?;

        let peak = log_dets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_scaled: f64 = log_dets.iter().map(|v| (v - peak).exp()).sum();
        let log_sum = peak + sum_scaled.ln();
        let normalization_residual = (log_sum - log_normalizer).exp_m1().abs();
        if !(normalization_residual <= NORMALIZATION_FAIL) {
            return Err(DppError::NormalizationMismatch {
                residual: normalization_residual,
            });
        }
        if normalization_residual > 1e-9 {
            log::warn!("normalization residual {normalization_residual:e} above 1e-9");
        }

        let probs = log_dets.iter().map(|v| (v - log_sum).exp()).collect();
        Ok(Self {
            kernel: l.clone(),
            probs,
            log_dets,
            log_normalizer,
            normalization_residual,
            cache: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.kernel.n()
    }

    pub fn kernel(&self) -> &KernelMatrix {
        &self.kernel
    }

    /// Probabilities indexed by `SubsetMask::bits`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, subset: SubsetMask) -> f64 {
        self.probs[subset.index()]
    }

    pub fn log_dets(&self) -> &[f64] {
        &self.log_dets
    }

    /// `det(I + L)`.
    pub fn normalizer(&self) -> f64 {
        self.log_normalizer.exp()
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    /// Relative residual of `sum_J det(L_J) = det(I + L)` measured at build.
    pub fn normalization_residual(&self) -> f64 {
        self.normalization_residual
    }

    /// `P[S ⊆ Z]` as `det(K_S)`.
    pub fn inclusion_probability(&self, subset: SubsetMask) -> Result<f64> {
        inclusion_probability(&self.kernel, subset)
    }

    /// `P[S ⊆ Z]` as `sum_{J ⊇ S} p_J`.
    pub fn inclusion_by_summation(&self, subset: SubsetMask) -> f64 {
        let s = subset.bits() as usize;
        self.probs
            .iter()
            .enumerate()
            .filter(|(j, _)| j & s == s)
            .map(|(_, p)| p)
            .sum()
    }

    /// Per-subset factorizations of the kernel, built on first use.
    pub fn cache(&self) -> &SubsetCache {
        self.cache.get_or_init(|| {
            SubsetCache::build(&self.kernel, Execution::default())
                .expect("kernel factorizations succeeded while building the table")
        })
    }

    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_mask_csv(out, &self.probs)
    }
}

pub(crate) fn write_mask_csv<W: Write>(mut out: W, values: &[f64]) -> Result<()> {
    writeln!(out, "mask,probability")?;
    for (bits, v) in values.iter().enumerate() {
        writeln!(out, "{bits},{v:e}")?;
    }
    Ok(())
}

/// A batch of i.i.d. draws from a [`DppTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    n: usize,
    seed: u64,
    draws: Vec<SubsetMask>,
    counts: Vec<u64>,
}

/// Serialized form of a [`SampleBatch`]; draws are integer masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub n: usize,
    pub seed: u64,
    pub count: usize,
    pub draws: Vec<u32>,
}

/// Inverse-CDF sampling, default execution mode.
pub fn sample(table: &DppTable, count: usize, seed: u64) -> SampleBatch {
    SampleBatch::draw(table, count, seed, Execution::default())
}

fn locate(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

impl SampleBatch {
    /// Draws `count` subsets. Draws `[c*2^16, (c+1)*2^16)` come from stream
    /// `c` of `seed`, so the batch is identical under any execution mode.
    pub fn draw(table: &DppTable, count: usize, seed: u64, exec: Execution) -> Self {
        let n = table.n();
        let cdf = table.cumulative();
        let mut draws = vec![SubsetMask::empty(n); count];
        par::fill_chunks(exec, &mut draws, SAMPLE_CHUNK, |start, slice| {
            let mut r = rng::stream(seed, (start / SAMPLE_CHUNK) as u64);
            for d in slice.iter_mut() {
                let u: f64 = r.random();
                *d = SubsetMask::new_unchecked(locate(&cdf, u) as u32, n);
            }
        });
        Self::from_draws(n, seed, draws)
    }

    fn from_draws(n: usize, seed: u64, draws: Vec<SubsetMask>) -> Self {
        let mut counts = vec![0u64; 1 << n];
        for d in &draws {
            counts[d.index()] += 1;
        }
        Self { n, seed, draws, counts }
    }

    pub fn from_record(record: &SampleRecord) -> Result<Self> {
        if record.count != record.draws.len() {
            return Err(DppError::DimensionMismatch {
                expected: record.count,
                found: record.draws.len(),
            });
        }
        let draws = record
            .draws
            .iter()
            .map(|&b| SubsetMask::new(b, record.n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_draws(record.n, record.seed, draws))
    }

    pub fn to_record(&self) -> SampleRecord {
        SampleRecord {
            n: self.n,
            seed: self.seed,
            count: self.draws.len(),
            draws: self.draws.iter().map(|d| d.bits()).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draws(&self) -> &[SubsetMask] {
        &self.draws
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Empirical point frequencies `p̂_J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalTable {
    n: usize,
    freqs: Vec<f64>,
    /// Number of draws behind the frequencies; `None` for exact tables.
    sample_count: Option<u64>,
}

pub fn empirical_table(batch: &SampleBatch) -> Result<EmpiricalTable> {
    EmpiricalTable::from_counts(batch.n(), batch.counts())
}

impl EmpiricalTable {
    pub fn from_counts(n: usize, counts: &[u64]) -> Result<Self> {
        if counts.len() != 1 << n {
            return Err(DppError::DimensionMismatch {
                expected: 1 << n,
                found: counts.len(),
            });
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(DppError::EmptyBatch);
        }
        let freqs = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Self {
            n,
            freqs,
            sample_count: Some(total),
        })
    }

    /// Population frequencies: the exact table itself.
    pub fn exact(table: &DppTable) -> Self {
        Self {
            n: table.n(),
            freqs: table.probs().to_vec(),
            sample_count: None,
        }
    }

    /// Arbitrary frequencies; must be nonnegative and sum to one within `1e-9`.
    pub fn from_freqs(n: usize, freqs: Vec<f64>) -> Result<Self> {
        if freqs.len() != 1 << n {
            return Err(DppError::DimensionMismatch {
                expected: 1 << n,
                found: freqs.len(),
            });
        }
        let total: f64 = freqs.iter().sum();
        if freqs.iter().any(|f| !(*f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(DppError::InvalidConfig(format!(
                "frequencies must be nonnegative and sum to 1 (sum = {total})"
            )));
        }
        Ok(Self {
            n,
            freqs,
            sample_count: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn sample_count(&self) -> Option<u64> {
        self.sample_count
    }

    /// Empirical `P[S ⊆ Z]`.
    pub fn inclusion(&self, subset: SubsetMask) -> f64 {
        let s = subset.bits() as usize;
        self.freqs
            .iter()
            .enumerate()
            .filter(|(j, _)| j & s == s)
            .map(|(_, p)| p)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_mask_csv(out, &self.freqs)
    }
}
