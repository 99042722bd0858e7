//! Experiment drivers: curvature scans along the tridiagonal family, Monte
//! Carlo rate studies, variance growth and the identity check sweep.
//!
//! Every report embeds the resolved configuration it was produced from and
//! carries no wall-clock data, so identical configs give identical reports.

use serde::{Deserialize, Serialize};

use crate::dpp::{DppTable, DEFAULT_MAX_N};
use crate::error::{DppError, Result};
use crate::geometry::{identity_residuals, min_curvature_with, sorted_eigen, IdentityResiduals};
use crate::kernel::{determinantal_graph, KernelMatrix, MatrixLiteral};
use crate::mle::{asymptotic_covariance, estimate_risk, Estimator, MleConfig, ReplicateOutcome, RiskEstimate};
use crate::par::Execution;
use crate::random::{random_kernel, random_symmetric};
use crate::rng;

/// Default cap on `N` for commands that assemble full Hessians.
pub const HESSIAN_BUDGET: usize = 10;

/// How a true kernel is described in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Literal {
        matrix: MatrixLiteral,
    },
    Tridiagonal {
        a: f64,
        b: f64,
        n: usize,
    },
    /// Block-diagonal kernel with the given diagonal blocks, in order.
    Blocks {
        blocks: Vec<MatrixLiteral>,
    },
}

/// Rejects tridiagonal parameters outside `a > 0`, `a² > 4b²`.
pub fn check_tridiagonal(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0) {
        return Err(DppError::InvalidConfig(format!(
            "tridiagonal kernel needs a > 0, got a = {a}"
        )));
    }
    if !(a * a > 4.0 * b * b) {
        return Err(DppError::InvalidConfig(format!(
            "tridiagonal kernel needs a^2 > 4 b^2, got a = {a}, b = {b}"
        )));
    }
    Ok(())
}

impl KernelSpec {
    pub fn build(&self) -> Result<KernelMatrix> {
        match self {
            KernelSpec::Literal { matrix } => matrix.to_kernel(),
            KernelSpec::Tridiagonal { a, b, n } => {
                check_tridiagonal(*a, *b)?;
                if *n == 0 {
                    return Err(DppError::InvalidConfig("tridiagonal kernel needs n >= 1".into()));
                }
                KernelMatrix::tridiagonal(*n, *a, *b)
            }
            KernelSpec::Blocks { blocks } => {
                if blocks.is_empty() {
                    return Err(DppError::InvalidConfig("block kernel needs at least one block".into()));
                }
                let blocks = blocks.iter().map(|b| b.to_kernel()).collect::<Result<Vec<_>>>()?;
                KernelMatrix::block_diagonal(&blocks)
            }
        }
    }
}

/// OLS fit of `log y` against `log x` (or against `x`, see [`fit_log_linear`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

fn ols(xs: &[f64], ys: &[f64]) -> LineFit {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    // a constant response is fitted exactly
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    LineFit { slope, intercept, r2 }
}

fn check_points(points: &[(f64, f64)], x_positive: bool) -> Result<()> {
    if points.len() < 3 {
        return Err(DppError::InsufficientPoints(points.len()));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*y > 0.0) || (x_positive && !(*x > 0.0))) {
        return Err(DppError::NonpositiveValue { x, y });
    }
    Ok(())
}

pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LineFit> {
    check_points(points, true)?;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    Ok(ols(&xs, &ys))
}

/// OLS of `log y` against `x`.
pub fn fit_log_linear(points: &[(f64, f64)]) -> Result<LineFit> {
    check_points(points, false)?;
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    Ok(ols(&xs, &ys))
}

/// Fit or `None` when there are too few usable points.
fn optional_fit(points: &[(f64, f64)], fit: fn(&[(f64, f64)]) -> Result<LineFit>) -> Option<LineFit> {
    fit(points).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TridiagonalScan {
    pub a: f64,
    pub b: f64,
    pub n_min: usize,
    pub n_max: usize,
    /// Largest `N` allowed before the run is refused.
    pub budget: usize,
}

impl Default for TridiagonalScan {
    fn default() -> Self {
        Self {
            a: 2.0,
            b: 0.9,
            n_min: 3,
            n_max: 9,
            budget: HESSIAN_BUDGET,
        }
    }
}

impl TridiagonalScan {
    pub fn validate(&self) -> Result<()> {
        check_tridiagonal(self.a, self.b)?;
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(DppError::InvalidConfig(format!(
                "need 1 <= n_min <= n_max, got {}..{}",
                self.n_min, self.n_max
            )));
        }
        if self.n_max > self.budget {
            return Err(DppError::GroundSetTooLarge {
                n: self.n_max,
                cap: self.budget,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureRow {
    pub n: usize,
    pub min_curvature: f64,
    pub reducible: bool,
    /// Whether the row entered the fit (strictly positive curvature).
    pub fitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `exp(intercept)` in `λ_min ≈ c1 exp(-c2 N)`.
    pub c1: f64,
    /// `-slope`.
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub config: TridiagonalScan,
    pub rows: Vec<CurvatureRow>,
    pub fit: Option<CurvatureFit>,
}

pub fn curvature_scan(config: &TridiagonalScan, exec: Execution) -> Result<CurvatureReport> {
    config.validate()?;
    let mut rows = Vec::new();
    for n in config.n_min..=config.n_max {
        let l = KernelMatrix::tridiagonal(n, config.a, config.b)?;
        let c = min_curvature_with(&l, exec)?;
        log::info!(
            "curvature-scan N={n} min_curvature={:e} reducible={}",
            c.value,
            c.reducible
        );
        rows.push(CurvatureRow {
            n,
            min_curvature: c.value,
            reducible: c.reducible,
            fitted: c.value > 0.0,
        });
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.fitted)
        .map(|r| (r.n as f64, r.min_curvature))
        .collect();
    let fit = optional_fit(&points, fit_log_linear).map(|f| CurvatureFit {
        slope: f.slope,
        intercept: f.intercept,
        r2: f.r2,
        c1: f.intercept.exp(),
        c2: -f.slope,
    });
    Ok(CurvatureReport {
        config: config.clone(),
        rows,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub n: usize,
    /// Largest eigenvalue of the asymptotic covariance; absent when the
    /// information matrix is singular.
    pub max_eigenvalue: Option<f64>,
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub config: TridiagonalScan,
    pub rows: Vec<VarianceRow>,
    /// Fit of `log max_eigenvalue` against `N`; absent when any row is
    /// singular or too few rows remain.
    pub fit: Option<LineFit>,
}

pub fn variance_growth(config: &TridiagonalScan) -> Result<VarianceReport> {
    config.validate()?;
    let mut rows = Vec::new();
    for n in config.n_min..=config.n_max {
        let l = KernelMatrix::tridiagonal(n, config.a, config.b)?;
        let row = match asymptotic_covariance(&l) {
            Ok(v) => {
                let top = sorted_eigen(&v).0[v.nrows() - 1];
                VarianceRow {
                    n,
                    max_eigenvalue: Some(top),
                    singular: false,
                }
            }
            Err(DppError::SingularInformation { .. }) => VarianceRow {
                n,
                max_eigenvalue: None,
                singular: true,
            },
            Err(e) => return Err(e),
        };
        log::info!("variance-growth N={n} max_eigenvalue={:?}", row.max_eigenvalue);
        rows.push(row);
    }
    let fit = if rows.iter().any(|r| r.singular) {
        None
    } else {
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.max_eigenvalue.unwrap())).collect();
        optional_fit(&points, fit_log_linear)
    };
    Ok(VarianceReport {
        config: config.clone(),
        rows,
        fit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Mle,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    pub kernel: KernelSpec,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub mle: MleConfig,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::Tridiagonal { a: 2.0, b: 0.5, n: 3 },
            sample_sizes: vec![1_000, 10_000, 100_000],
            replicates: 50,
            seed: 0,
            estimator: EstimatorKind::Mle,
            mle: MleConfig::default(),
        }
    }
}

impl RateConfig {
    pub fn validate(&self) -> Result<()> {
        let l = self.kernel.build()?;
        let cap = DEFAULT_MAX_N.min(crate::mle::SIGN_ENUM_MAX_N);
        if l.n() > cap {
            return Err(DppError::GroundSetTooLarge { n: l.n(), cap });
        }
        if self.sample_sizes.is_empty() || self.sample_sizes[0] == 0 {
            return Err(DppError::InvalidConfig(
                "sample_sizes must be nonempty and positive".into(),
            ));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DppError::InvalidConfig(
                "sample_sizes must be strictly increasing".into(),
            ));
        }
        if self.replicates < 2 {
            return Err(DppError::InvalidConfig("replicates must be at least 2".into()));
        }
        if self.replicates < 30 {
            log::warn!("{} replicates is below the recommended 30", self.replicates);
        }
        self.mle.validate()
    }

    fn estimator(&self) -> Estimator {
        match self.estimator {
            EstimatorKind::Mle => Estimator::Mle(self.mle.clone()),
            EstimatorKind::Oracle => Estimator::Oracle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub sample_size: usize,
    pub mean_loss: f64,
    pub std_error: f64,
    pub median_loss: f64,
    pub mean_within: f64,
    pub median_within: f64,
    pub mean_cross: f64,
    pub median_cross: f64,
    pub nonconverged: usize,
}

impl From<&RiskEstimate> for RateRow {
    fn from(r: &RiskEstimate) -> Self {
        Self {
            sample_size: r.sample_size,
            mean_loss: r.mean_loss,
            std_error: r.std_error,
            median_loss: r.median_loss,
            mean_within: r.mean_within,
            median_within: r.median_within,
            mean_cross: r.mean_cross,
            median_cross: r.median_cross,
            nonconverged: r.nonconverged,
        }
    }
}

/// Fitted `log loss` against `log n`; `None` when a loss is zero or there
/// are fewer than three sample sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSlopes {
    /// From mean total loss.
    pub total: Option<LineFit>,
    /// From mean within-block loss.
    pub within: Option<LineFit>,
    /// From median cross-block loss.
    pub cross: Option<LineFit>,
    /// From mean cross-block loss, reported alongside the median.
    pub cross_mean: Option<LineFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub sample_size: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub config: RateConfig,
    pub replicates: usize,
    pub seed: u64,
    pub rows: Vec<RateRow>,
    pub slopes: RateSlopes,
    /// Set when estimation stopped early; rows before it are complete.
    pub failure: Option<RunFailure>,
    #[serde(skip)]
    pub replicate_outcomes: Vec<(usize, Vec<ReplicateOutcome>)>,
}

fn slopes(rows: &[RateRow]) -> RateSlopes {
    let fit = |f: fn(&RateRow) -> f64| {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.sample_size as f64, f(r))).collect();
        optional_fit(&pts, fit_loglog_slope)
    };
    RateSlopes {
        total: fit(|r| r.mean_loss),
        within: fit(|r| r.mean_within),
        cross: fit(|r| r.median_cross),
        cross_mean: fit(|r| r.mean_cross),
    }
}

/// Risk at each sample size. The sample seed for size `s` is
/// `derive_seed(config.seed, s)`, independent of the rest of the list.
/// Estimation errors end the study early and are recorded in `failure`.
pub fn rate_study(config: &RateConfig, exec: Execution) -> Result<RateReport> {
    config.validate()?;
    let l_star = config.kernel.build()?;
    let table = DppTable::build(&l_star, DEFAULT_MAX_N, exec)?;
    let estimator = config.estimator();
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    let mut failure = None;
    for &s in &config.sample_sizes {
        match estimate_risk(
            &table,
            s,
            config.replicates,
            &estimator,
            rng::derive_seed(config.seed, s as u64),
            exec,
        ) {
            Ok(risk) => {
                log::info!(
                    "rate-study n={s} mean_loss={:e} within={:e} cross_median={:e} nonconverged={}",
                    risk.mean_loss,
                    risk.mean_within,
                    risk.median_cross,
                    risk.nonconverged
                );
                rows.push(RateRow::from(&risk));
                outcomes.push((s, risk.per_replicate));
            }
            Err(e) => {
                log::error!("rate-study n={s} failed: {e}");
                failure = Some(RunFailure {
                    sample_size: s,
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    Ok(RateReport {
        config: config.clone(),
        replicates: config.replicates,
        seed: config.seed,
        slopes: slopes(&rows),
        rows,
        failure,
        replicate_outcomes: outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentityCheckConfig {
    pub trials: usize,
    pub n_min: usize,
    pub n_max: usize,
    /// Diagonal shift of the random kernels `A A^T / n + shift I`.
    pub shift: f64,
    pub seed: u64,
    /// Largest relative residual counted as a pass.
    pub tolerance: f64,
}

impl Default for IdentityCheckConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            n_min: 2,
            n_max: 8,
            shift: 0.5,
            seed: 0,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityTrial {
    pub trial: usize,
    pub n: usize,
    pub residuals: IdentityResiduals,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub config: IdentityCheckConfig,
    pub trials: Vec<IdentityTrial>,
    pub max_abs_residual: f64,
    pub passed: bool,
}

/// Identity residuals over random `(L, H)` pairs; trial `t` uses stream
/// `derive_seed(seed, t)` and ground-set size cycling through the range.
pub fn verify_identities(config: &IdentityCheckConfig, exec: Execution) -> Result<IdentityReport> {
    if config.n_min == 0 || config.n_min > config.n_max || config.n_max > crate::geometry::GEOMETRY_MAX_N {
        return Err(DppError::InvalidConfig(format!(
            "need 1 <= n_min <= n_max <= {}, got {}..{}",
            crate::geometry::GEOMETRY_MAX_N,
            config.n_min,
            config.n_max
        )));
    }
    if !(config.shift > 0.0) || config.trials == 0 {
        return Err(DppError::InvalidConfig("need shift > 0 and trials >= 1".into()));
    }
    let span = config.n_max - config.n_min + 1;
    let trials = crate::par::map_indexed(exec, config.trials, |t| -> Result<IdentityTrial> {
        let mut r = rng::stream(rng::derive_seed(config.seed, t as u64), 0);
        let n = config.n_min + (t % span);
        let l = random_kernel(n, config.shift, &mut r);
        let h = random_symmetric(n, &mut r);
        Ok(IdentityTrial {
            trial: t,
            n,
            residuals: identity_residuals(&l, &h)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let max_abs_residual = trials.iter().map(|t| t.residuals.max_abs()).fold(0.0, f64::max);
    Ok(IdentityReport {
        config: config.clone(),
        passed: max_abs_residual <= config.tolerance,
        max_abs_residual,
        trials,
    })
}

/// Whether `L*` has more than one block.
pub fn is_reducible(l: &KernelMatrix) -> bool {
    !determinantal_graph(l.matrix(), 0.0).is_irreducible()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn loglog_exact_power() {
        let pts: Vec<(f64, f64)> = [1.0, 10.0, 100.0, 1000.0]
            .iter()
            .map(|&x: &f64| (x, x.powf(-0.5)))
            .collect();
        let f = fit_loglog_slope(&pts).unwrap();
        assert!((f.slope + 0.5).abs() <= 1e-12);
        assert!((f.r2 - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn loglog_constant() {
        let f = fit_loglog_slope(&[(1.0, 7.0), (2.0, 7.0), (5.0, 7.0)]).unwrap();
        assert!(f.slope.abs() <= 1e-15);
    }

    #[test]
    fn loglog_noisy_sixth_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let x = 10f64.powf(2.0 + 0.2 * i as f64);
                (x, 3.0 * x.powf(-1.0 / 6.0) * (1.0 + noise.sample(&mut rng)))
            })
            .collect();
        let f = fit_loglog_slope(&pts).unwrap();
        assert!((f.slope + 1.0 / 6.0).abs() <= 0.02, "{f:?}");
    }

    #[test]
    fn loglog_errors() {
        assert!(matches!(
            fit_loglog_slope(&[(1.0, 1.0), (2.0, 2.0)]),
            Err(DppError::InsufficientPoints(2))
        ));
        assert!(matches!(
            fit_loglog_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]),
            Err(DppError::NonpositiveValue { .. })
        ));
        assert!(fit_loglog_slope(&[(0.0, 1.0), (2.0, 1.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn tridiagonal_precondition_named() {
        let err = KernelSpec::Tridiagonal { a: 1.0, b: 0.6, n: 3 }.build().unwrap_err();
        assert!(err.to_string().contains("a^2 > 4 b^2"));
        assert!(KernelSpec::Tridiagonal { a: -1.0, b: 0.0, n: 3 }.build().is_err());
        assert!(KernelSpec::Tridiagonal { a: 2.0, b: 0.9, n: 3 }.build().is_ok());
    }

    #[test]
    fn kernel_spec_json() {
        let spec: KernelSpec = serde_json::from_str(
            r#"{"kind": "blocks", "blocks": [{"n": 2, "entries": [1, 0.5, 0.5, 1]}, {"n": 1, "entries": [2]}]}"#,
        )
        .unwrap();
        let l = spec.build().unwrap();
        assert_eq!(l.n(), 3);
        assert!(is_reducible(&l));
        assert!(
            serde_json::from_str::<KernelSpec>(r#"{"kind": "tridiagonal", "a": 2, "b": 0.5, "n": 3, "x": 1}"#).is_err()
        );
    }

    #[test]
    fn rate_config_checks() {
        let bad = RateConfig {
            sample_sizes: vec![100, 100, 1000],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let ok: RateConfig = serde_json::from_str(r#"{"replicates": 5}"#).unwrap();
        assert_eq!(ok.sample_sizes, vec![1000, 10000, 100000]);
        assert_eq!(ok.mle, MleConfig::default());
    }

    #[test]
    fn curvature_scan_reducible_rows_excluded() {
        let cfg = TridiagonalScan {
            a: 2.0,
            b: 0.0,
            n_min: 1,
            n_max: 4,
            budget: 10,
        };
        let r = curvature_scan(&cfg, Execution::default()).unwrap();
        assert!(r.rows[0].fitted);
        assert!(r.rows[1..]
            .iter()
            .all(|row| row.reducible && !row.fitted && row.min_curvature == 0.0));
        assert!(r.fit.is_none());
    }

    #[test]
    fn curvature_scan_budget() {
        let cfg = TridiagonalScan {
            n_max: 11,
            ..Default::default()
        };
        assert!(matches!(
            curvature_scan(&cfg, Execution::default()),
            Err(DppError::GroundSetTooLarge { .. })
        ));
    }

    #[test]
    fn curvature_scan_short_range_decays() {
        let cfg = TridiagonalScan {
            n_min: 3,
            n_max: 6,
            ..Default::default()
        };
        let r = curvature_scan(&cfg, Execution::default()).unwrap();
        assert!(r.rows.iter().all(|row| row.min_curvature > 0.0));
        let fit = r.fit.unwrap();
        assert!(fit.slope < 0.0 && fit.r2 >= 0.95);
    }

    #[test]
    fn variance_growth_reducible_rows_flagged() {
        let cfg = TridiagonalScan {
            a: 2.0,
            b: 0.0,
            n_min: 2,
            n_max: 4,
            budget: 10,
        };
        let r = variance_growth(&cfg).unwrap();
        assert!(r.rows.iter().all(|row| row.singular));
        assert!(r.fit.is_none());
    }

    #[test]
    fn oracle_rate_study_has_null_slopes() {
        let cfg = RateConfig {
            estimator: EstimatorKind::Oracle,
            sample_sizes: vec![10, 100, 1000],
            replicates: 3,
            ..Default::default()
        };
        let r = rate_study(&cfg, Execution::default()).unwrap();
        assert!(r.rows.iter().all(|row| row.mean_loss == 0.0 && row.mean_cross == 0.0));
        assert_eq!(
            r.slopes,
            RateSlopes {
                total: None,
                within: None,
                cross: None,
                cross_mean: None
            }
        );
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["slopes"]["total"].is_null());
        assert_eq!(json["config"]["mle"]["max_iters"], 2000);
    }

    #[test]
    fn identity_sweep_small() {
        let cfg = IdentityCheckConfig {
            trials: 12,
            n_max: 5,
            ..Default::default()
        };
        let a = verify_identities(&cfg, Execution::Sequential).unwrap();
        let b = verify_identities(&cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.passed, "{}", a.max_abs_residual);
    }
}
