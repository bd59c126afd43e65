//! Generalized least squares fit of a constant-trend Gaussian process on a
//! symmetric positive definite correlation system.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Number of nugget escalations attempted after the unregularized
/// factorization fails.
pub const NUGGET_RETRIES: usize = 8;

/// Smallest admissible squared Cholesky pivot relative to the matrix
/// diagonal, scaled by the system size.
const PIVOT_FLOOR: f64 = f64::EPSILON;

/// Cholesky factorization of `a + nugget·I`. Rejects factors whose pivots
/// are at round-off level.
pub fn cholesky_with_nugget(a: &DMatrix<f64>, nugget: f64) -> Option<Cholesky<f64, Dyn>> {
    let n = a.nrows();
    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] += nugget;
    }
    let diag: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    let chol = Cholesky::new(m)?;
    let l = chol.l_dirty();
    let floor = PIVOT_FLOOR * n as f64;
    for (i, &aii) in diag.iter().enumerate() {
        let p = l[(i, i)];
        if !p.is_finite() || p * p < floor * aii {
            return None;
        }
    }
    Some(chol)
}

/// Factorizes with the adaptive nugget schedule: no nugget first, then
/// `1e-10·n` growing tenfold per retry.
pub fn factorize(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = cholesky_with_nugget(a, 0.0) {
        return Ok((c, 0.0));
    }
    let mut nugget = 1e-10 * a.nrows() as f64;
    for _ in 0..NUGGET_RETRIES {
        if let Some(c) = cholesky_with_nugget(a, nugget) {
            log::debug!("factorization needed nugget {nugget:e}");
            return Ok((c, nugget));
        }
        nugget *= 10.0;
    }
    Err(Error::NotPositiveDefinite)
}

/// Solved GLS system for a constant trend `F·β₀`.
#[derive(Debug, Clone)]
pub struct GlsFit {
    pub chol: Cholesky<f64, Dyn>,
    pub nugget: f64,
    pub beta0: f64,
    /// Profiled process variance; zero when the residual vanishes.
    pub sigma2: f64,
    /// `A⁻¹ (y − F β₀)`.
    pub weights: DVector<f64>,
    /// `L⁻¹ F`, kept for the variance formula.
    linv_f: DVector<f64>,
    /// `Fᵀ A⁻¹ F`.
    pub f_ainv_f: f64,
    pub ln_det: f64,
}

impl GlsFit {
    pub fn new(a: &DMatrix<f64>, y: &DVector<f64>, trend: &DVector<f64>) -> Result<Self> {
        let (chol, nugget) = factorize(a)?;
        Ok(Self::from_factor(chol, nugget, y, trend))
    }

    pub fn with_nugget(a: &DMatrix<f64>, y: &DVector<f64>, trend: &DVector<f64>, nugget: f64) -> Result<Self> {
        let chol = cholesky_with_nugget(a, nugget).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self::from_factor(chol, nugget, y, trend))
    }

    fn from_factor(chol: Cholesky<f64, Dyn>, nugget: f64, y: &DVector<f64>, trend: &DVector<f64>) -> Self {
        let n = y.len();
        let l = chol.l_dirty();
        let linv_f = l.solve_lower_triangular(trend).expect("nonzero pivots");
        let linv_y = l.solve_lower_triangular(y).expect("nonzero pivots");
        let f_ainv_f = linv_f.dot(&linv_f);
        let beta0 = linv_f.dot(&linv_y) / f_ainv_f;
        let linv_resid = &linv_y - &linv_f * beta0;
        let sigma2 = linv_resid.dot(&linv_resid) / n as f64;
        let weights = l
            .tr_solve_lower_triangular(&linv_resid)
            .expect("nonzero pivots");
        let ln_det = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        Self {
            chol,
            nugget,
            beta0,
            sigma2,
            weights,
            linv_f,
            f_ainv_f,
            ln_det,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Concentrated log-likelihood `−(n/2)·ln σ̂² − ½·ln det`.
    pub fn log_likelihood(&self) -> Result<f64> {
        if !(self.sigma2 >= 1e-300) {
            return Err(Error::DegenerateVariance);
        }
        let n = self.len() as f64;
        Ok(-0.5 * n * self.sigma2.ln() - 0.5 * self.ln_det)
    }

    pub fn mean(&self, r: &DVector<f64>) -> f64 {
        self.beta0 + r.dot(&self.weights)
    }

    /// Mean squared error `σ²[f − rᵀA⁻¹r + (f − FᵀA⁻¹r)²/(FᵀA⁻¹F)]`
    /// for a prediction whose own trend entry is `f0` (1 for values),
    /// clamped at zero.
    pub fn variance(&self, r: &DVector<f64>, prior: f64, f0: f64) -> f64 {
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(r)
            .expect("nonzero pivots");
        let u = f0 - self.linv_f.dot(&z);
        let s2 = self.sigma2 * (prior - z.dot(&z) + u * u / self.f_ainv_f);
        s2.max(0.0)
    }

    /// Crude reciprocal condition estimate `(min L_ii / max L_ii)²`.
    pub fn rcond_estimate(&self) -> f64 {
        let l = self.chol.l_dirty();
        let diag: Vec<f64> = (0..self.len()).map(|i| l[(i, i)]).collect();
        let lo = diag.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = diag.iter().copied().fold(0.0, f64::max);
        (lo / hi).powi(2)
    }
}
