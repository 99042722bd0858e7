//! Maximum-likelihood estimation of the kernel from observed subsets.
//!
//! The likelihood is maximized over `L = C C^T` with `C` lower triangular
//! and `log C_ii` as free coordinates. Trial points whose correlation kernel
//! `K = L (I + L)^{-1}` has an eigenvalue outside the configured box
//! `[α, β]` are rejected by the line search, so every iterate stays in
//! the compact set of kernels whose `K` has its spectrum in `[α, β]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dpp::{empirical_table, DppTable, EmpiricalTable, SampleBatch, DEFAULT_MAX_N};
use crate::error::{DppError, Result};
use crate::geometry::{
    hessian_matrix, sorted_eigen, weighted_gradient, weighted_log_likelihood, SINGULAR_INFORMATION_TOL,
};
use crate::kernel::{
    determinantal_graph, k_to_l, sym_dim, CorrelationKernel, DeterminantalGraph, KernelMatrix, SignDiagonal, SubsetMask,
};
use crate::optim::{self, BfgsOptions, Evaluation};
use crate::par::{self, Execution};
use crate::rng;

/// Largest ground set for exhaustive sign enumeration.
pub const SIGN_ENUM_MAX_N: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MleConfig {
    /// Bounds `(α, β)` on the eigenvalues of `K` during optimization.
    pub spectral_box: (f64, f64),
    pub restarts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Jitter scale for restarts after the first, relative to the mean
    /// diagonal of the moment estimate.
    pub init_jitter: f64,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            spectral_box: (1e-4, 1.0 - 1e-4),
            restarts: 8,
            max_iters: 2000,
            grad_tol: 1e-8,
            init_jitter: 0.1,
            seed: 0,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.spectral_box;
        if !(0.0 < a && a < b && b < 1.0) {
            return Err(DppError::InvalidConfig(format!(
                "spectral_box must satisfy 0 < α < β < 1, got ({a}, {b})"
            )));
        }
        if !(self.grad_tol > 0.0) {
            return Err(DppError::InvalidConfig("grad_tol must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(DppError::InvalidConfig("restarts must be at least 1".into()));
        }
        if !(self.init_jitter >= 0.0) {
            return Err(DppError::InvalidConfig("init_jitter must be nonnegative".into()));
        }
        Ok(())
    }

    /// Eigenvalue bounds on `L` equivalent to the box on `K`.
    fn l_bounds(&self) -> (f64, f64) {
        let (a, b) = self.spectral_box;
        (a / (1.0 - a), b / (1.0 - b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub initial_log_likelihood: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub estimate: KernelMatrix,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restart_index: usize,
    /// `‖∇Φ̂(L̂)‖_F` with the gradient taken with respect to `L`.
    pub gradient_norm: f64,
    pub restarts: Vec<RestartSummary>,
}

/// `Φ̂(L) = Σ_J p̂_J log det(L_J) - log det(I + L)`; cells with `p̂_J = 0`
/// contribute nothing.
pub fn empirical_log_likelihood(freqs: &EmpiricalTable, l: &KernelMatrix) -> Result<f64> {
    weighted_log_likelihood(freqs.freqs(), l)
}

/// `G = Σ_J p̂_J [L_J^{-1}]_padded - (I + L)^{-1}`, so that the derivative
/// of `Φ̂` along `H` is `Tr(G H)`.
pub fn likelihood_gradient(freqs: &EmpiricalTable, l: &KernelMatrix) -> Result<DMatrix<f64>> {
    weighted_gradient(freqs.freqs(), l)
}

fn clip_spectrum(k: &DMatrix<f64>, lo: f64, hi: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(k.clone());
    let clipped = eig.eigenvalues.map(|v| v.clamp(lo, hi));
    let m = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (&m + m.transpose()) * 0.5
}

fn kernel_from_k(k: &DMatrix<f64>, spectral_box: (f64, f64)) -> Result<KernelMatrix> {
    let (lo, hi) = spectral_box;
    k_to_l(&CorrelationKernel::new(clip_spectrum(k, lo, hi))?)
}

fn moment_k(freqs: &EmpiricalTable) -> DMatrix<f64> {
    let n = freqs.n();
    let single: Vec<f64> = (0..n)
        .map(|i| freqs.inclusion(SubsetMask::new_unchecked(1 << i, n)))
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            single[i]
        } else {
            let pair = freqs.inclusion(SubsetMask::new_unchecked((1 << i) | (1 << j), n));
            let gap = single[i] * single[j] - pair;
            // summation roundoff would otherwise surface as ~1e-8 entries
            if gap <= 1e-14 {
                0.0
            } else {
                gap.sqrt()
            }
        }
    })
}

/// Moment estimate: `K̂_ii = P̂(i ∈ Z)`,
/// `|K̂_ij| = sqrt(max(0, K̂_ii K̂_jj - P̂({i,j} ⊆ Z)))` with nonnegative
/// signs, spectrum clipped into `spectral_box`, mapped back to `L`.
pub fn moment_init(freqs: &EmpiricalTable, spectral_box: (f64, f64)) -> Result<KernelMatrix> {
    kernel_from_k(&moment_k(freqs), spectral_box)
}

/// Number of free coordinates of the Cholesky parametrization.
fn param_dim(n: usize) -> usize {
    sym_dim(n)
}

fn params_from_kernel(l: &KernelMatrix) -> Result<DVector<f64>> {
    let n = l.n();
    let chol = l
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| DppError::Numerical("starting kernel is not positive definite".into()))?;
    let c = chol.l();
    let mut theta = DVector::zeros(param_dim(n));
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            theta[k] = if i == j { c[(i, i)].ln() } else { c[(i, j)] };
            k += 1;
        }
    }
    Ok(theta)
}

fn factor_from_params(n: usize, theta: &DVector<f64>) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            c[(i, j)] = if i == j { theta[k].exp() } else { theta[k] };
            k += 1;
        }
    }
    c
}

struct Objective<'a> {
    freqs: &'a EmpiricalTable,
    l_bounds: (f64, f64),
}

impl Objective<'_> {
    /// Kernel at `theta` if its spectrum lies in the box.
    fn kernel(&self, theta: &DVector<f64>) -> Option<(DMatrix<f64>, KernelMatrix)> {
        let n = self.freqs.n();
        let c = factor_from_params(n, theta);
        let m = &c * c.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(m.clone()).eigenvalues;
        let (lo, hi) = self.l_bounds;
        // relative slack so the clipped starting point itself is feasible
        let slack = 1e-9;
        if eig
            .iter()
            .any(|&v| !(v >= lo * (1.0 - slack) && v <= hi * (1.0 + slack)))
        {
            return None;
        }
        KernelMatrix::new(m).ok().map(|l| (c, l))
    }

    fn evaluate(&self, theta: &DVector<f64>) -> Option<Evaluation> {
        let (c, l) = self.kernel(theta)?;
        let value = empirical_log_likelihood(self.freqs, &l).ok()?;
        let g = likelihood_gradient(self.freqs, &l).ok()?;
        let dc = (&g * &c) * 2.0;
        let n = l.n();
        let mut grad = DVector::zeros(param_dim(n));
        let mut k = 0;
        for i in 0..n {
            for j in 0..=i {
                grad[k] = if i == j { dc[(i, i)] * c[(i, i)] } else { dc[(i, j)] };
                k += 1;
            }
        }
        // minimize -Φ̂
        Some(Evaluation {
            value: -value,
            gradient: -grad,
            stationarity: g.norm(),
        })
    }
}

/// Pairs `(i, j)` with `1 <= i < j`: the off-diagonal positions whose signs
/// are not absorbed by conjugation once the signs on row 0 are fixed.
fn cycle_pairs(n: usize) -> Vec<(usize, usize)> {
    (1..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

fn restart_start(
    freqs: &EmpiricalTable,
    config: &MleConfig,
    base_k: &DMatrix<f64>,
    restart: usize,
) -> Result<KernelMatrix> {
    if restart == 0 {
        return kernel_from_k(base_k, config.spectral_box);
    }
    let n = freqs.n();
    let mut r = rng::stream(rng::derive_seed(config.seed, restart as u64), 0);
    let pairs = cycle_pairs(n);
    // Restart `r` flips the cycle pairs selected by the bits of `r`, so the
    // first 2^m restarts visit every sign class of the moment estimate once.
    // Beyond that the pattern is random.
    let pattern: u64 = if pairs.len() < 64 && (restart as u64) >> pairs.len() == 0 {
        restart as u64
    } else {
        r.random()
    };
    let scale = config.init_jitter * (base_k.trace() / n as f64).max(1e-3);
    let mut k = base_k.clone();
    for (bit, &(i, j)) in pairs.iter().enumerate() {
        if pattern >> (bit % 64) & 1 == 1 {
            k[(i, j)] = -k[(i, j)];
            k[(j, i)] = -k[(j, i)];
        }
    }
    for i in 0..n {
        for j in 0..=i {
            let noise = scale * r.sample::<f64, _>(StandardNormal);
            k[(i, j)] += noise;
            if i != j {
                k[(j, i)] += noise;
            }
        }
    }
    kernel_from_k(&k, config.spectral_box)
}

/// Maximizes `Φ̂` over the spectral box from `config.restarts` starting
/// points and returns the best local maximum (ties go to the lower restart
/// index). Deterministic given `config.seed`.
pub fn fit_mle(freqs: &EmpiricalTable, config: &MleConfig) -> Result<MleResult> {
    config.validate()?;
    let base_k = moment_k(freqs);
    let objective = Objective {
        freqs,
        l_bounds: config.l_bounds(),
    };
    let opts = BfgsOptions {
        max_iters: config.max_iters,
        grad_tol: config.grad_tol,
        ..Default::default()
    };

    let mut best: Option<(usize, optim::BfgsOutcome)> = None;
    let mut summaries = Vec::with_capacity(config.restarts);
    for restart in 0..config.restarts {
        let start = restart_start(freqs, config, &base_k, restart)?;
        let theta0 = params_from_kernel(&start)?;
        let out = optim::minimize(theta0, &opts, |t| objective.evaluate(t))
            .ok_or_else(|| DppError::Numerical("starting point outside the spectral box".into()))?;
        summaries.push(RestartSummary {
            restart,
            initial_log_likelihood: -out.history[0],
            log_likelihood: -out.eval.value,
            iterations: out.iterations,
            converged: out.converged,
            gradient_norm: out.eval.stationarity,
        });
        if best.as_ref().is_none_or(|(_, b)| out.eval.value < b.eval.value) {
            best = Some((restart, out));
        }
    }

    let (restart_index, out) = best.expect("at least one restart");
    let (_, estimate) = objective
        .kernel(&out.x)
        .ok_or_else(|| DppError::Numerical("optimizer returned an infeasible point".into()))?;
    Ok(MleResult {
        estimate,
        log_likelihood: -out.eval.value,
        iterations: out.iterations,
        converged: out.converged,
        restart_index,
        gradient_norm: out.eval.stationarity,
        restarts: summaries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub argmin_signs: SignDiagonal,
}

/// Sign vector number `c` of the `2^{n-1}` classes: `signs[0] = +1`, and
/// increasing `c` walks the classes in lexicographic order with `+ < -`.
fn class_signs(n: usize, c: u64) -> Vec<f64> {
    (0..n)
        .map(|i| if i > 0 && c >> (n - 1 - i) & 1 == 1 { -1.0 } else { 1.0 })
        .collect()
}

fn check_pair(l_hat: &KernelMatrix, l_star: &KernelMatrix) -> Result<usize> {
    let n = l_star.n();
    if l_hat.n() != n {
        return Err(DppError::DimensionMismatch {
            expected: n,
            found: l_hat.n(),
        });
    }
    if n > SIGN_ENUM_MAX_N {
        return Err(DppError::GroundSetTooLarge {
            n,
            cap: SIGN_ENUM_MAX_N,
        });
    }
    Ok(n)
}

fn orbit_argmin(l_hat: &KernelMatrix, l_star: &KernelMatrix) -> (f64, Vec<f64>) {
    let n = l_star.n();
    let (a, b) = (l_hat.matrix(), l_star.matrix());
    let mut best = (f64::INFINITY, class_signs(n, 0));
    for c in 0..(1u64 << (n - 1)) {
        let s = class_signs(n, c);
        let mut sq = 0.0;
        for i in 0..n {
            for j in 0..n {
                sq += (a[(i, j)] - s[i] * s[j] * b[(i, j)]).powi(2);
            }
        }
        if sq < best.0 {
            best = (sq, s);
        }
    }
    best
}

fn to_sign_diagonal(s: &[f64]) -> SignDiagonal {
    SignDiagonal::new(s.iter().map(|&v| v as i8).collect()).expect("entries are ±1")
}

/// `min_D ‖L̂ - D L* D‖_F` by exhaustive enumeration of the sign classes.
pub fn sign_orbit_loss(l_hat: &KernelMatrix, l_star: &KernelMatrix) -> Result<LossValue> {
    check_pair(l_hat, l_star)?;
    let (sq, s) = orbit_argmin(l_hat, l_star);
    Ok(LossValue {
        value: sq.sqrt(),
        argmin_signs: to_sign_diagonal(&s),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockwiseLoss {
    pub total: f64,
    /// Error on positions inside a block of `L*`.
    pub within: f64,
    /// Error on positions between different blocks of `L*`.
    pub cross: f64,
    /// The orientation minimizing the total loss; both parts use it.
    pub signs: SignDiagonal,
}

pub fn blockwise_loss(
    l_hat: &KernelMatrix,
    l_star: &KernelMatrix,
    graph: &DeterminantalGraph,
) -> Result<BlockwiseLoss> {
    let n = check_pair(l_hat, l_star)?;
    if graph.n() != n {
        return Err(DppError::DimensionMismatch {
            expected: n,
            found: graph.n(),
        });
    }
    let (sq, s) = orbit_argmin(l_hat, l_star);
    let (a, b) = (l_hat.matrix(), l_star.matrix());
    let (mut within, mut cross) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let d = (a[(i, j)] - s[i] * s[j] * b[(i, j)]).powi(2);
            if graph.same_component(i, j) {
                within += d;
            } else {
                cross += d;
            }
        }
    }
    Ok(BlockwiseLoss {
        total: sq.sqrt(),
        within: within.sqrt(),
        cross: cross.sqrt(),
        signs: to_sign_diagonal(&s),
    })
}

/// What produces the estimate in each risk replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    Mle(MleConfig),
    /// Returns the true kernel; for checking the harness itself.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub loss: f64,
    pub within: f64,
    pub cross: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub sample_size: usize,
    pub replicates: usize,
    pub mean_loss: f64,
    /// Sample standard deviation over `√replicates`.
    pub std_error: f64,
    pub median_loss: f64,
    pub mean_within: f64,
    pub median_within: f64,
    pub mean_cross: f64,
    pub median_cross: f64,
    pub nonconverged: usize,
    pub per_replicate: Vec<ReplicateOutcome>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

impl RiskEstimate {
    fn from_outcomes(sample_size: usize, per_replicate: Vec<ReplicateOutcome>) -> Self {
        let losses: Vec<f64> = per_replicate.iter().map(|r| r.loss).collect();
        let within: Vec<f64> = per_replicate.iter().map(|r| r.within).collect();
        let cross: Vec<f64> = per_replicate.iter().map(|r| r.cross).collect();
        let k = losses.len();
        let mean_loss = mean(&losses);
        let var = losses.iter().map(|l| (l - mean_loss).powi(2)).sum::<f64>() / (k as f64 - 1.0);
        Self {
            sample_size,
            replicates: k,
            mean_loss,
            std_error: (var / k as f64).sqrt(),
            median_loss: median(&losses),
            mean_within: mean(&within),
            median_within: median(&within),
            mean_cross: mean(&cross),
            median_cross: median(&cross),
            nonconverged: per_replicate.iter().filter(|r| !r.converged).count(),
            per_replicate,
        }
    }
}

/// Monte Carlo risk `E[ℓ(L̂, L*)]` at one sample size.
///
/// Replicate `r` draws its sample from seed `derive_seed(seed, r)` and fits
/// with `derive_seed(config.seed, r)`, so a replicate's outcome depends only
/// on its index: a run with `k` replicates reproduces the first `k` of any
/// larger run.
pub fn estimate_risk(
    table: &DppTable,
    sample_size: usize,
    replicates: usize,
    estimator: &Estimator,
    seed: u64,
    exec: Execution,
) -> Result<RiskEstimate> {
    if replicates < 2 {
        return Err(DppError::InvalidConfig(
            "risk estimation needs at least 2 replicates".into(),
        ));
    }
    if sample_size == 0 {
        return Err(DppError::InvalidConfig("sample size must be positive".into()));
    }
    if let Estimator::Mle(config) = estimator {
        config.validate()?;
    }
    let l_star = table.kernel();
    if l_star.n() > DEFAULT_MAX_N.min(SIGN_ENUM_MAX_N) {
        return Err(DppError::GroundSetTooLarge {
            n: l_star.n(),
            cap: DEFAULT_MAX_N.min(SIGN_ENUM_MAX_N),
        });
    }
    let graph = determinantal_graph(l_star.matrix(), 0.0);

    let outcomes = par::map_indexed(exec, replicates, |r| -> Result<ReplicateOutcome> {
        let (estimate, converged, iterations) = match estimator {
            Estimator::Oracle => (l_star.clone(), true, 0),
            Estimator::Mle(config) => {
                let batch = SampleBatch::draw(
                    table,
                    sample_size,
                    rng::derive_seed(seed, r as u64),
                    Execution::Sequential,
                );
                let freqs = empirical_table(&batch)?;
                let cfg = MleConfig {
                    seed: rng::derive_seed(config.seed, r as u64),
                    ..config.clone()
                };
                let fit = fit_mle(&freqs, &cfg)?;
                (fit.estimate, fit.converged, fit.iterations)
            }
        };
        let loss = blockwise_loss(&estimate, l_star, &graph)?;
        Ok(ReplicateOutcome {
            replicate: r,
            loss: loss.total,
            within: loss.within,
            cross: loss.cross,
            converged,
            iterations,
        })
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(RiskEstimate::from_outcomes(sample_size, outcomes))
}

/// `V(L*)`: inverse of the Fisher information `-d²Φ(L*)` in the orthonormal
/// symmetric basis.
pub fn asymptotic_covariance(l_star: &KernelMatrix) -> Result<DMatrix<f64>> {
    let table = DppTable::build(l_star, crate::geometry::GEOMETRY_MAX_N, Execution::default())?;
    let info = -hessian_matrix(&table).matrix;
    let (values, vectors) = sorted_eigen(&info);
    let smallest = values[0];
    if !(smallest > SINGULAR_INFORMATION_TOL) {
        return Err(DppError::SingularInformation {
            min_eigenvalue: smallest,
        });
    }
    let inv = DMatrix::from_diagonal(&DVector::from_iterator(values.len(), values.iter().map(|v| 1.0 / v)));
    let v = &vectors * inv * vectors.transpose();
    Ok((&v + v.transpose()) * 0.5)
}
