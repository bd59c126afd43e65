//! Gradient-enhanced Kriging.
//!
//! The direct variant augments the correlation system with value–gradient
//! and gradient–gradient covariances obtained by differentiating the
//! Gaussian kernel. Only samples that carry a gradient contribute gradient
//! rows, so partially differentiated data sets are handled natively. The
//! indirect variant feeds ordinary Kriging with first-order Taylor
//! pseudo-samples around every gradient sample.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kriging::{correlation, search_hyperparameters, CorrelationParams, KrigingConfig};
use crate::linalg::GlsFit;
use crate::samples::{Sample, SampleSet};
use crate::space::UnitPoint;

/// Default cap on the number of rows of the augmented system.
pub const DEFAULT_MAX_ROWS: usize = 40_000;

/// Default Taylor step of the indirect variant, in normalized units.
pub const DEFAULT_INDIRECT_STEP: f64 = 1e-2;

fn require_gaussian(p: &CorrelationParams) -> Result<()> {
    if p.is_gaussian() {
        Ok(())
    } else {
        Err(Error::GammaNotTwo)
    }
}

/// `∂R(xi, xj)/∂xj_k` for the Gaussian kernel, i.e. `2θ_k (xi_k − xj_k) R`.
pub fn correlation_jacobian(xi: &[f64], xj: &[f64], p: &CorrelationParams) -> Result<Vec<f64>> {
    require_gaussian(p)?;
    Ok(jacobian_unchecked(xi, xj, p))
}

fn jacobian_unchecked(xi: &[f64], xj: &[f64], p: &CorrelationParams) -> Vec<f64> {
    let r = correlation(xi, xj, p);
    (0..xi.len())
        .map(|k| 2.0 * p.theta[k] * (xi[k] - xj[k]) * r)
        .collect()
}

/// `∂²R(xi, xj)/∂xi_l ∂xj_m = [2θ_l δ_lm − 4θ_lθ_m Δ_l Δ_m] R` with
/// `Δ = xi − xj`.
pub fn correlation_hessian_cross(xi: &[f64], xj: &[f64], p: &CorrelationParams) -> Result<DMatrix<f64>> {
    require_gaussian(p)?;
    let d = xi.len();
    let r = correlation(xi, xj, p);
    let mut h = DMatrix::zeros(d, d);
    fill_hessian(&mut h, 0, 0, xi, xj, p, r);
    Ok(h)
}

fn fill_hessian(a: &mut DMatrix<f64>, row: usize, col: usize, xi: &[f64], xj: &[f64], p: &CorrelationParams, r: f64) {
    let d = xi.len();
    for l in 0..d {
        let dl = xi[l] - xj[l];
        for m in 0..d {
            let dm = xi[m] - xj[m];
            let mut v = -4.0 * p.theta[l] * p.theta[m] * dl * dm;
            if l == m {
                v += 2.0 * p.theta[l];
            }
            a[(row + l, col + m)] = v * r;
        }
    }
}

/// Augmented correlation system of the direct variant.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    pub matrix: DMatrix<f64>,
    /// Values of all usable samples followed by the gradient of each
    /// gradient sample, coordinates interleaved per sample.
    pub response: DVector<f64>,
    /// 1 for value rows, 0 for gradient rows.
    pub trend: DVector<f64>,
}

#[derive(Debug, Clone)]
struct GekDesign {
    points: Vec<Vec<f64>>,
    /// Positions in `points` of samples with gradients.
    grad_idx: Vec<usize>,
    response: DVector<f64>,
    trend: DVector<f64>,
}

impl GekDesign {
    fn new(data: &SampleSet) -> Self {
        let usable: Vec<&Sample> = data.samples().iter().filter(|s| s.is_usable()).collect();
        let points: Vec<Vec<f64>> = usable.iter().map(|s| s.x.coords().to_vec()).collect();
        let grad_idx: Vec<usize> = (0..usable.len()).filter(|&i| usable[i].grad.is_some()).collect();
        let d = data.dim();
        let n = points.len() + grad_idx.len() * d;
        let mut response = Vec::with_capacity(n);
        response.extend(usable.iter().map(|s| s.y));
        for &g in &grad_idx {
            response.extend_from_slice(usable[g].grad.as_ref().unwrap());
        }
        let mut trend = DVector::zeros(n);
        trend.rows_mut(0, points.len()).fill(1.0);
        Self {
            points,
            grad_idx,
            response: DVector::from_vec(response),
            trend,
        }
    }

    fn rows(&self) -> usize {
        self.response.len()
    }

    fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    fn matrix(&self, p: &CorrelationParams) -> DMatrix<f64> {
        let n_val = self.points.len();
        let d = self.dim();
        let n = self.rows();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n_val {
            a[(i, i)] = 1.0;
            for j in 0..i {
                let v = correlation(&self.points[i], &self.points[j], p);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        for (gi, &g) in self.grad_idx.iter().enumerate() {
            let col = n_val + gi * d;
            let xg = &self.points[g];
            for i in 0..n_val {
                let jac = jacobian_unchecked(&self.points[i], xg, p);
                for (m, v) in jac.into_iter().enumerate() {
                    a[(i, col + m)] = v;
                    a[(col + m, i)] = v;
                }
            }
            for (hi, &h) in self.grad_idx.iter().enumerate().take(gi + 1) {
                let row = n_val + hi * d;
                let xh = &self.points[h];
                let r = correlation(xh, xg, p);
                fill_hessian(&mut a, row, col, xh, xg, p, r);
                if hi != gi {
                    for l in 0..d {
                        for m in 0..d {
                            a[(col + m, row + l)] = a[(row + l, col + m)];
                        }
                    }
                }
            }
        }
        a
    }

    fn fit(&self, p: &CorrelationParams) -> Result<GlsFit> {
        GlsFit::new(&self.matrix(p), &self.response, &self.trend)
    }

    fn cross(&self, x: &[f64], p: &CorrelationParams) -> DVector<f64> {
        let d = self.dim();
        let mut r = DVector::zeros(self.rows());
        for (i, q) in self.points.iter().enumerate() {
            r[i] = correlation(q, x, p);
        }
        let n_val = self.points.len();
        for (gi, &g) in self.grad_idx.iter().enumerate() {
            let jac = jacobian_unchecked(x, &self.points[g], p);
            r.rows_mut(n_val + gi * d, d).copy_from_slice(&jac);
        }
        r
    }
}

/// Assembles the augmented system. Fails with `NoGradients` when no sample
/// carries a gradient.
pub fn build_augmented_system(data: &SampleSet, p: &CorrelationParams) -> Result<AugmentedSystem> {
    require_gaussian(p)?;
    let design = GekDesign::new(data);
    if design.grad_idx.is_empty() {
        log::warn!("no gradient samples; the augmented system reduces to ordinary Kriging");
        return Err(Error::NoGradients);
    }
    Ok(AugmentedSystem {
        matrix: design.matrix(p),
        response: design.response,
        trend: design.trend,
    })
}

#[derive(Debug, Clone)]
pub struct GekConfig {
    pub kriging: KrigingConfig,
    pub max_rows: usize,
}

impl Default for GekConfig {
    fn default() -> Self {
        Self {
            kriging: KrigingConfig::default(),
            max_rows: DEFAULT_MAX_ROWS,
        }
    }
}

/// Trained direct gradient-enhanced Kriging model.
#[derive(Debug, Clone)]
pub struct GekModel {
    data: SampleSet,
    design: GekDesign,
    params: CorrelationParams,
    fit: GlsFit,
}

fn check_size(design: &GekDesign, cap: usize) -> Result<()> {
    let rows = design.rows();
    log::info!(
        "augmented system: {rows} rows, about {:.1} MiB dense",
        (rows * rows * 8) as f64 / (1024.0 * 1024.0)
    );
    if rows > cap {
        return Err(Error::SystemTooLarge { rows, cap });
    }
    Ok(())
}

impl GekModel {
    /// Fits the augmented system for fixed Gaussian hyperparameters. Without
    /// gradient samples this is ordinary Kriging.
    pub fn fit(data: &SampleSet, params: CorrelationParams) -> Result<Self> {
        Self::build(data, params, None, DEFAULT_MAX_ROWS)
    }

    pub fn fit_with_nugget(data: &SampleSet, params: CorrelationParams, nugget: f64) -> Result<Self> {
        Self::build(data, params, Some(nugget), DEFAULT_MAX_ROWS)
    }

    fn build(data: &SampleSet, params: CorrelationParams, nugget: Option<f64>, cap: usize) -> Result<Self> {
        require_gaussian(&params)?;
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
        let design = GekDesign::new(&data);
        check_size(&design, cap)?;
        let a = design.matrix(&params);
        let fit = match nugget {
            None => GlsFit::new(&a, &design.response, &design.trend)?,
            Some(n) => GlsFit::with_nugget(&a, &design.response, &design.trend, n)?,
        };
        Ok(Self {
            data,
            design,
            params,
            fit,
        })
    }

    /// Maximum likelihood training over θ with γ = 2 forced. Falls back to
    /// the value-only system, with a warning, when no gradients exist.
    pub fn train(data: &SampleSet, cfg: &GekConfig) -> Result<Self> {
        let usable = data.usable();
        if usable.len() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                have: usable.len(),
            });
        }
        if usable.n_grad() == 0 {
            log::warn!("direct GEK without gradient samples: fitting ordinary Kriging");
        }
        let design = GekDesign::new(&usable);
        check_size(&design, cfg.max_rows)?;
        let mut kcfg = cfg.kriging.clone();
        kcfg.gamma = 2.0;
        kcfg.optimize_gamma = false;
        let best = search_hyperparameters(data.dim(), &kcfg, |p| design.fit(p).ok()?.log_likelihood().ok())?;
        log::debug!(
            "direct GEK trained: theta = {:?}, log-likelihood = {}",
            best.params.theta,
            best.log_likelihood
        );
        Self::build(&usable, best.params, None, cfg.max_rows)
    }

    /// True when no gradient rows entered the system.
    pub fn is_value_only(&self) -> bool {
        self.design.grad_idx.is_empty()
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

    pub fn system_size(&self) -> usize {
        self.design.rows()
    }

    pub fn log_likelihood(&self) -> Result<f64> {
        self.fit.log_likelihood()
    }

    /// Reciprocal condition estimate of the factored augmented matrix.
    pub fn rcond_estimate(&self) -> f64 {
        self.fit.rcond_estimate()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.fit.mean(&self.design.cross(x, &self.params))
    }

    pub fn predict_variance(&self, x: &[f64]) -> f64 {
        self.fit.variance(&self.design.cross(x, &self.params), 1.0, 1.0)
    }
}

/// Adds `2d` first-order Taylor pseudo-samples `x ± step·e_k` with values
/// `y ± step·∂y/∂x_k` around every gradient sample. Pseudo-samples leaving
/// the unit cube or colliding with existing points are dropped; none of the
/// returned samples carries a gradient.
pub fn indirect_gek_augment(data: &SampleSet, step: f64) -> Result<SampleSet> {
    if !(step > 0.0) {
        return Err(Error::InvalidSpace("Taylor step must be positive".into()));
    }
    let base = data.usable();
    let mut out = base.without_gradients();
    for s in base.samples() {
        let Some(g) = &s.grad else { continue };
        for k in 0..data.dim() {
            for dir in [1.0, -1.0] {
                let mut x = s.x.coords().to_vec();
                x[k] += dir * step;
                let Ok(x) = UnitPoint::new(x) else { continue };
                let pseudo = Sample::new(x, s.y + dir * step * g[k], s.constraints.clone(), None, s.tag);
                match out.add_sample(pseudo) {
                    Ok(()) | Err(Error::DuplicatePoint(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(out)
}
