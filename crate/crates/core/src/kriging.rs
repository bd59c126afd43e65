//! Ordinary Kriging with the anisotropic exponential correlation
//! `R(a, b) = exp(−Σ_k θ_k |a_k − b_k|^γ_k)`.
//!
//! Hyperparameters are fitted by maximizing the concentrated
//! log-likelihood (β₀ and σ² profiled out) with a seeded multistart
//! pattern search in `log10 θ`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::GlsFit;
use crate::optim::PatternSearch;
use crate::samples::SampleSet;
use crate::space::lhs_unit;

pub const LOG10_THETA_MIN: f64 = -4.0;
pub const LOG10_THETA_MAX: f64 = 4.0;
const GAMMA_MIN: f64 = 0.5;
const GAMMA_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationParams {
    pub theta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl CorrelationParams {
    pub fn new(theta: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if theta.len() != gamma.len() {
            return Err(Error::DimensionMismatch {
                expected: theta.len(),
                got: gamma.len(),
            });
        }
        if theta.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidSpace("theta must be positive".into()));
        }
        if gamma.iter().any(|&g| !(g > 0.0 && g <= 2.0)) {
            return Err(Error::InvalidSpace("gamma must lie in (0, 2]".into()));
        }
        Ok(Self { theta, gamma })
    }

    /// Gaussian correlation (γ = 2 in every dimension).
    pub fn gaussian(theta: Vec<f64>) -> Self {
        let gamma = vec![2.0; theta.len()];
        Self { theta, gamma }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn is_gaussian(&self) -> bool {
        self.gamma.iter().all(|&g| g == 2.0)
    }
}

fn dist_pow(delta: f64, gamma: f64) -> f64 {
    if gamma == 2.0 {
        delta * delta
    } else {
        delta.abs().powf(gamma)
    }
}

pub fn correlation(a: &[f64], b: &[f64], p: &CorrelationParams) -> f64 {
    let s: f64 = (0..a.len())
        .map(|k| p.theta[k] * dist_pow(a[k] - b[k], p.gamma[k]))
        .sum();
    (-s).exp()
}

pub fn build_correlation_matrix<P: AsRef<[f64]>>(points: &[P], p: &CorrelationParams) -> DMatrix<f64> {
    let n = points.len();
    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = correlation(points[i].as_ref(), points[j].as_ref(), p);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

pub fn correlation_vector<P: AsRef<[f64]>>(points: &[P], x: &[f64], p: &CorrelationParams) -> DVector<f64> {
    DVector::from_iterator(points.len(), points.iter().map(|q| correlation(q.as_ref(), x, p)))
}

/// Generalized least squares estimate of the constant trend.
pub fn estimate_beta0(r: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let fit = GlsFit::new(r, &DVector::from_column_slice(y), &DVector::from_element(y.len(), 1.0))?;
    Ok(fit.beta0)
}

/// Training data with the per-dimension pair distances cached for repeated
/// likelihood evaluations.
struct Design {
    points: Vec<Vec<f64>>,
    y: DVector<f64>,
    ones: DVector<f64>,
    /// `|x_ik − x_jk|` for `j < i`, per dimension, packed row by row.
    abs_delta: Vec<Vec<f64>>,
}

impl Design {
    fn new(points: Vec<Vec<f64>>, y: Vec<f64>) -> Self {
        let n = points.len();
        let d = points.first().map_or(0, Vec::len);
        let mut abs_delta = vec![Vec::with_capacity(n * n.saturating_sub(1) / 2); d];
        for i in 0..n {
            for j in 0..i {
                for (k, col) in abs_delta.iter_mut().enumerate() {
                    col.push((points[i][k] - points[j][k]).abs());
                }
            }
        }
        Self {
            ones: DVector::from_element(n, 1.0),
            y: DVector::from_vec(y),
            points,
            abs_delta,
        }
    }

    fn matrix(&self, p: &CorrelationParams) -> DMatrix<f64> {
        let n = self.points.len();
        let mut r = DMatrix::identity(n, n);
        let mut idx = 0;
        for i in 0..n {
            for j in 0..i {
                let s: f64 = self
                    .abs_delta
                    .iter()
                    .enumerate()
                    .map(|(k, col)| p.theta[k] * dist_pow(col[idx], p.gamma[k]))
                    .sum();
                let v = (-s).exp();
                r[(i, j)] = v;
                r[(j, i)] = v;
                idx += 1;
            }
        }
        r
    }

    fn fit(&self, p: &CorrelationParams) -> Result<GlsFit> {
        GlsFit::new(&self.matrix(p), &self.y, &self.ones)
    }
}

fn usable_design(data: &SampleSet) -> Design {
    let (points, y) = data
        .samples()
        .iter()
        .filter(|s| s.is_usable())
        .map(|s| (s.x.coords().to_vec(), s.y))
        .unzip();
    Design::new(points, y)
}

/// Concentrated log-likelihood of `data` under `p`, together with the
/// profiled process variance σ̂².
pub fn concentrated_log_likelihood(data: &SampleSet, p: &CorrelationParams) -> Result<(f64, f64)> {
    let design = usable_design(data);
    if design.points.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            have: design.points.len(),
        });
    }
    let fit = design.fit(p)?;
    Ok((fit.log_likelihood()?, fit.sigma2))
}

#[derive(Debug, Clone)]
pub struct KrigingConfig {
    /// Fixed exponent used in every dimension unless `optimize_gamma`.
    pub gamma: f64,
    pub optimize_gamma: bool,
    /// Number of multistart points; `None` means `max(20, 5d)`.
    pub n_starts: Option<usize>,
    pub seed: u64,
    /// Likelihood improvement below which the local search stops moving.
    pub tol: f64,
    pub max_evals_per_start: usize,
}

impl Default for KrigingConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            optimize_gamma: false,
            n_starts: None,
            seed: 0,
            tol: 1e-6,
            max_evals_per_start: 400,
        }
    }
}

impl KrigingConfig {
    pub fn starts(&self, dim: usize) -> usize {
        self.n_starts.unwrap_or_else(|| (5 * dim).max(20))
    }
}

/// Result of one multistart likelihood search.
#[derive(Debug, Clone)]
pub struct HyperSearch {
    pub params: CorrelationParams,
    pub log_likelihood: f64,
}

/// Maximizes `objective(params)` over `log10 θ ∈ [−4, 4]^d` (and γ when
/// requested). Starts run independently; the best wins with ties going to
/// the lower start index.
pub(crate) fn search_hyperparameters<F>(dim: usize, cfg: &KrigingConfig, objective: F) -> Result<HyperSearch>
where
    F: Fn(&CorrelationParams) -> Option<f64> + Sync,
{
    let n_vars = if cfg.optimize_gamma { 2 * dim } else { dim };
    let mut lower = vec![LOG10_THETA_MIN; dim];
    let mut upper = vec![LOG10_THETA_MAX; dim];
    if cfg.optimize_gamma {
        lower.extend(std::iter::repeat_n(GAMMA_MIN, dim));
        upper.extend(std::iter::repeat_n(GAMMA_MAX, dim));
    }
    let decode = |v: &[f64]| -> CorrelationParams {
        let theta = v[..dim].iter().map(|l| 10f64.powf(*l)).collect();
        let gamma = if cfg.optimize_gamma {
            v[dim..].to_vec()
        } else {
            vec![cfg.gamma; dim]
        };
        CorrelationParams { theta, gamma }
    };
    let starts: Vec<Vec<f64>> = lhs_unit(n_vars, cfg.starts(dim), cfg.seed)
        .into_iter()
        .map(|u| {
            u.iter()
                .enumerate()
                .map(|(k, &c)| lower[k] + c * (upper[k] - lower[k]))
                .collect()
        })
        .collect();
    let search = PatternSearch {
        initial_step: 1.0,
        min_step: 1e-3,
        tol: cfg.tol,
        max_evals: cfg.max_evals_per_start,
    };
    let results: Vec<Option<(Vec<f64>, f64)>> = starts
        .into_par_iter()
        .map(|x0| {
            let f0 = objective(&decode(&x0))?;
            Some(search.maximize(|v| objective(&decode(v)), x0, f0, &lower, &upper))
        })
        .collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for (x, f) in results.into_iter().flatten() {
        if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
            best = Some((x, f));
        }
    }
    let (x, log_likelihood) = best.ok_or(Error::AllStartsFailed)?;
    Ok(HyperSearch {
        params: decode(&x),
        log_likelihood,
    })
}

/// Trained ordinary Kriging model. Immutable once built.
#[derive(Debug, Clone)]
pub struct KrigingModel {
    data: SampleSet,
    points: Vec<Vec<f64>>,
    params: CorrelationParams,
    fit: GlsFit,
}

impl KrigingModel {
    /// Fits the linear system for fixed hyperparameters. Failed samples are
    /// skipped. Works for a single sample.
    pub fn fit(data: &SampleSet, params: CorrelationParams) -> Result<Self> {
        Self::build(data, params, None)
    }

    /// Like [`fit`](Self::fit) with a prescribed nugget instead of the
    /// adaptive schedule.
    pub fn fit_with_nugget(data: &SampleSet, params: CorrelationParams, nugget: f64) -> Result<Self> {
        Self::build(data, params, Some(nugget))
    }

    fn build(data: &SampleSet, params: CorrelationParams, nugget: Option<f64>) -> Result<Self> {
        if params.dim() != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                got: params.dim(),
            });
        }
        let data = data.usable();
        if data.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, have: 0 });
        }
        let design = usable_design(&data);
        let r = design.matrix(&params);
        let fit = match nugget {
            None => GlsFit::new(&r, &design.y, &design.ones)?,
            Some(n) => GlsFit::with_nugget(&r, &design.y, &design.ones, n)?,
        };
        Ok(Self {
            points: design.points,
            data,
            params,
            fit,
        })
    }

    /// Maximum likelihood training.
    pub fn train(data: &SampleSet, cfg: &KrigingConfig) -> Result<Self> {
        let usable = data.usable();
        if usable.len() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                have: usable.len(),
            });
        }
        let design = usable_design(&usable);
        let best = search_hyperparameters(data.dim(), cfg, |p| design.fit(p).ok()?.log_likelihood().ok())?;
        log::debug!(
            "kriging trained: theta = {:?}, log-likelihood = {}",
            best.params.theta,
            best.log_likelihood
        );
        Self::fit(&usable, best.params)
    }

    pub fn data(&self) -> &SampleSet {
        &self.data
    }

    pub fn params(&self) -> &CorrelationParams {
        &self.params
    }

    pub fn beta0(&self) -> f64 {
        self.fit.beta0
    }

    pub fn sigma2(&self) -> f64 {
        self.fit.sigma2
    }

    pub fn nugget(&self) -> f64 {
        self.fit.nugget
    }

    /// Lower Cholesky factor of `𝓡 + nugget·I`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.fit.chol.l()
    }

    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        build_correlation_matrix(&self.points, &self.params)
    }

    pub fn log_likelihood(&self) -> Result<f64> {
        self.fit.log_likelihood()
    }

    fn r(&self, x: &[f64]) -> DVector<f64> {
        correlation_vector(&self.points, x, &self.params)
    }

    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        self.fit.mean(&self.r(x))
    }

    pub fn predict_variance(&self, x: &[f64]) -> f64 {
        self.fit.variance(&self.r(x), 1.0, 1.0)
    }

    pub fn rcond_estimate(&self) -> f64 {
        self.fit.rcond_estimate()
    }
}
