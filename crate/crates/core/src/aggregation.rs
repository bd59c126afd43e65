//! Primal-dual aggregation model.
//!
//! The prediction blends a Kriging model (primal) with the first-order
//! Taylor expansion about the nearest gradient-bearing sample `x_g` (dual):
//!
//! ```text
//! f(x) = α(x)·dual(x) + (1 − α(x))·primal(x)
//! α(x) = exp(−ρ ‖x − x_g‖₁ ‖∇f(x_g)‖₁)
//! ```
//!
//! All distances and gradients live in normalized coordinates, which makes
//! the single hyperparameter ρ independent of the units of the design
//! variables. ρ is picked from a log-spaced grid by K-fold cross
//! validation; during cross validation the Kriging correlation parameters
//! stay frozen at their full-data values and only the linear system is
//! refitted per fold.

use crate::error::{Error, Result};
use crate::kriging::{CorrelationParams, KrigingConfig, KrigingModel};
use crate::nearest::L1Tree;
use crate::samples::{split_folds, SampleSet};

#[derive(Debug, Clone)]
pub struct RhoGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for RhoGrid {
    fn default() -> Self {
        Self {
            min: 1e-3,
            max: 1e3,
            count: 25,
        }
    }
}

impl RhoGrid {
    /// Log-spaced values from `min` to `max` inclusive.
    pub fn values(&self) -> Vec<f64> {
        if self.count <= 1 {
            return vec![self.min];
        }
        let (lo, hi) = (self.min.log10(), self.max.log10());
        (0..self.count)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (self.count - 1) as f64))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct AggregationConfig {
    pub kriging: KrigingConfig,
    pub grid: RhoGrid,
    pub folds: usize,
    pub cv_seed: u64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            kriging: KrigingConfig::default(),
            grid: RhoGrid::default(),
            folds: 5,
            cv_seed: 0,
        }
    }
}

/// Gradient-bearing samples with an L1 nearest-neighbor index.
#[derive(Debug, Clone)]
struct DualSet {
    tree: L1Tree,
    values: Vec<f64>,
    grads: Vec<Vec<f64>>,
    grad_norm1: Vec<f64>,
}

impl DualSet {
    /// Gradient samples of `data` (usable ones only), addressed by their
    /// position in `data`.
    fn from_samples(data: &SampleSet) -> Self {
        let mut points = Vec::new();
        let mut ids = Vec::new();
        let mut values = Vec::new();
        let mut grads = Vec::new();
        for (i, s) in data.samples().iter().enumerate() {
            if let (true, Some(g)) = (s.is_usable(), &s.grad) {
                points.push(s.x.coords().to_vec());
                ids.push(i);
                values.push(s.y);
                grads.push(g.clone());
            }
        }
        let grad_norm1 = grads.iter().map(|g| g.iter().map(|v| v.abs()).sum()).collect();
        Self {
            tree: L1Tree::new(points, ids),
            values,
            grads,
            grad_norm1,
        }
    }

    /// Nearest gradient sample: slot, L1 distance.
    fn nearest(&self, x: &[f64]) -> Option<(usize, f64)> {
        self.tree.nearest(x)
    }

    fn taylor(&self, slot: usize, x: &[f64]) -> f64 {
        let xg = self.tree.point(slot);
        self.values[slot]
            + self.grads[slot]
                .iter()
                .zip(x.iter().zip(xg))
                .map(|(g, (a, b))| g * (a - b))
                .sum::<f64>()
    }

    /// Returns `(dual value, ‖x − x_g‖₁·‖∇f(x_g)‖₁)`.
    fn eval(&self, x: &[f64]) -> Option<(f64, f64)> {
        let (slot, dist) = self.nearest(x)?;
        Some((self.taylor(slot, x), dist * self.grad_norm1[slot]))
    }
}

/// Outcome of the ρ search: the grid and the pooled CV RMSE per grid value.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoSelection {
    pub rho: f64,
    pub grid: Vec<f64>,
    pub cv_errors: Vec<f64>,
}

/// One prediction broken into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatePrediction {
    pub value: f64,
    pub alpha: f64,
    pub primal: f64,
    /// `None` when the model has no gradient samples.
    pub dual: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AggregationModel {
    primal: KrigingModel,
    dual: DualSet,
    rho: f64,
    rho_grid: Vec<f64>,
    cv_errors: Vec<f64>,
}

impl AggregationModel {
    /// Combines a fitted primal model with the gradient samples of its own
    /// training data, for a given ρ.
    pub fn from_primal(primal: KrigingModel, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidSpace("rho must be positive".into()));
        }
        let dual = DualSet::from_samples(primal.data());
        if dual.tree.is_empty() {
            log::warn!("aggregation model without gradient samples: alpha is zero everywhere");
        }
        Ok(Self {
            primal,
            dual,
            rho,
            rho_grid: vec![rho],
            cv_errors: Vec::new(),
        })
    }

    /// Trains the primal model by maximum likelihood, then selects ρ by
    /// cross validation.
    pub fn train(data: &SampleSet, cfg: &AggregationConfig) -> Result<Self> {
        Self::tune(KrigingModel::train(data, &cfg.kriging)?, cfg)
    }

    /// Selects ρ by cross validation for an already trained primal model.
    /// Without gradient samples the result is the plain primal model. The
    /// fold count is reduced when there are fewer samples than folds.
    pub fn tune(primal: KrigingModel, cfg: &AggregationConfig) -> Result<Self> {
        let grid = cfg.grid.values();
        let n = primal.data().len();
        let k = cfg.folds.min(n);
        if k != cfg.folds {
            log::warn!("only {n} samples: using {k} folds instead of {}", cfg.folds);
        }
        if k < 2 {
            return Self::from_parts(primal, grid[0], grid, Vec::new());
        }
        match tune_rho(primal.data(), primal.params(), &grid, k, cfg.cv_seed) {
            Ok(sel) => Self::from_parts(primal, sel.rho, sel.grid, sel.cv_errors),
            Err(Error::NoGradients) => Self::from_parts(primal, grid[0], grid, Vec::new()),
            Err(e) => Err(e),
        }
    }

    /// Restores a model with a known ρ and CV record.
    pub fn from_parts(primal: KrigingModel, rho: f64, rho_grid: Vec<f64>, cv_errors: Vec<f64>) -> Result<Self> {
        let mut model = Self::from_primal(primal, rho)?;
        model.rho_grid = rho_grid;
        model.cv_errors = cv_errors;
        Ok(model)
    }

    pub fn primal(&self) -> &KrigingModel {
        &self.primal
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn rho_grid(&self) -> &[f64] {
        &self.rho_grid
    }

    pub fn cv_errors(&self) -> &[f64] {
        &self.cv_errors
    }

    pub fn has_gradients(&self) -> bool {
        !self.dual.tree.is_empty()
    }

    /// Index (into the primal training data) and coordinates of the
    /// nearest gradient sample in L1.
    pub fn nearest_gradient_sample(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        let (slot, _) = self.dual.nearest(x).ok_or(Error::NoGradients)?;
        Ok((self.dual.tree.id(slot), self.dual.tree.point(slot).to_vec()))
    }

    pub fn dual_predict(&self, x: &[f64]) -> Result<f64> {
        let (slot, _) = self.dual.nearest(x).ok_or(Error::NoGradients)?;
        Ok(self.dual.taylor(slot, x))
    }

    pub fn alpha(&self, x: &[f64]) -> Result<f64> {
        let (_, spread) = self.dual.eval(x).ok_or(Error::NoGradients)?;
        Ok(alpha(self.rho, spread))
    }

    pub fn predict_parts(&self, x: &[f64]) -> AggregatePrediction {
        let primal = self.primal.predict_mean(x);
        match self.dual.eval(x) {
            Some((dual, spread)) => {
                let a = alpha(self.rho, spread);
                AggregatePrediction {
                    value: blend(a, dual, primal),
                    alpha: a,
                    primal,
                    dual: Some(dual),
                }
            }
            None => AggregatePrediction {
                value: primal,
                alpha: 0.0,
                primal,
                dual: None,
            },
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_parts(x).value
    }

    /// Uncertainty is borrowed from the primal Kriging model.
    pub fn predict_variance(&self, x: &[f64]) -> f64 {
        self.primal.predict_variance(x)
    }
}

fn alpha(rho: f64, spread: f64) -> f64 {
    (-rho * spread).exp()
}

fn blend(alpha: f64, dual: f64, primal: f64) -> f64 {
    alpha * dual + (1.0 - alpha) * primal
}

/// Held-out quantities of one CV point that do not depend on ρ.
struct HeldOut {
    y: f64,
    primal: f64,
    dual: Option<(f64, f64)>,
}

/// Selects ρ from `grid` by K-fold cross validation over the usable samples
/// of `data`, with correlation parameters frozen at `params`. Returns the
/// smallest ρ attaining the minimum pooled RMSE.
pub fn tune_rho(data: &SampleSet, params: &CorrelationParams, grid: &[f64], k: usize, seed: u64) -> Result<RhoSelection> {
    if grid.is_empty() || grid.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidSpace("rho grid must hold positive values".into()));
    }
    let folds = split_folds(data, k, seed)?;
    if data.n_grad() == 0 {
        return Err(Error::NoGradients);
    }
    let mut held = Vec::with_capacity(data.n_ok());
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let train_set = data.subset(&train);
        let primal = KrigingModel::fit(&train_set, params.clone())?;
        let dual = DualSet::from_samples(&train_set);
        for &i in test {
            let x = &data.samples()[i].x;
            held.push(HeldOut {
                y: data.samples()[i].y,
                primal: primal.predict_mean(x),
                dual: dual.eval(x),
            });
        }
    }
    let cv_errors: Vec<f64> = grid
        .iter()
        .map(|&rho| {
            let sse: f64 = held
                .iter()
                .map(|h| {
                    let pred = match h.dual {
                        Some((dual, spread)) => blend(alpha(rho, spread), dual, h.primal),
                        None => h.primal,
                    };
                    (pred - h.y).powi(2)
                })
                .sum();
            (sse / held.len() as f64).sqrt()
        })
        .collect();
    let mut best = 0;
    for (i, &e) in cv_errors.iter().enumerate() {
        if e < cv_errors[best] {
            best = i;
        }
    }
    log::debug!("rho = {} selected with CV RMSE {}", grid[best], cv_errors[best]);
    Ok(RhoSelection {
        rho: grid[best],
        grid: grid.to_vec(),
        cv_errors,
    })
}
