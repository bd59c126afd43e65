//! Paired K-fold cross validation of model families and the gradient-noise
//! robustness benchmark built on it.
//!
//! Every model family sees the same folds, so RMSE differences are paired
//! comparisons. Hyperparameters are retrained on each training split.

use crate::error::{Error, Result};
use crate::evaluator::{with_noise, Builtin, NoiseSpec};
use crate::samples::{split_folds, Sample, SampleSet, Tag};
use crate::space::{lhs_sample, ParameterSpace};
use crate::surrogate::{ModelKind, Surrogate, SurrogateConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub kind: ModelKind,
    pub rmse: f64,
    pub fold_rmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub k: usize,
    pub folds: Vec<Vec<usize>>,
    pub rows: Vec<CvRow>,
}

fn rmse(sq_errors: &[f64]) -> f64 {
    (sq_errors.iter().sum::<f64>() / sq_errors.len() as f64).sqrt()
}

/// Held-out predictions of `kind` for every fold.
fn fold_errors(data: &SampleSet, folds: &[Vec<usize>], cfg: &SurrogateConfig) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(folds.len());
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let model = Surrogate::train(&data.subset(&train), cfg)?.model;
        out.push(
            test.iter()
                .map(|&i| {
                    let s = &data.samples()[i];
                    (model.mean(&s.x) - s.y).powi(2)
                })
                .collect(),
        );
    }
    Ok(out)
}

/// K-fold CV RMSE of each requested model family on identical folds.
pub fn cross_validate(data: &SampleSet, kinds: &[ModelKind], cfg: &SurrogateConfig, k: usize, seed: u64) -> Result<CvReport> {
    let folds = split_folds(data, k, seed)?;
    let mut rows = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let errs = fold_errors(data, &folds, &cfg.with_kind(kind))?;
        let pooled: Vec<f64> = errs.iter().flatten().copied().collect();
        rows.push(CvRow {
            kind,
            rmse: rmse(&pooled),
            fold_rmse: errs.iter().map(|e| rmse(e)).collect(),
        });
    }
    Ok(CvReport { k, folds, rows })
}

/// Gradient corruption applied to one benchmark data set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCondition {
    pub level: f64,
    pub drop_rate: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub function: Builtin,
    pub space: ParameterSpace,
    pub n_samples: usize,
    pub conditions: Vec<NoiseCondition>,
    pub kinds: Vec<ModelKind>,
    /// The first seed is the reference seed; the rest are reported only.
    pub seeds: Vec<u64>,
    pub folds: usize,
    pub model: SurrogateConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub seed: u64,
    pub condition: NoiseCondition,
    pub kind: ModelKind,
    pub rmse: f64,
}

/// Noise-free LHS data set of a builtin, gradients in normalized space.
pub fn builtin_dataset(function: Builtin, space: &ParameterSpace, n: usize, seed: u64, noise: Option<&NoiseSpec>) -> Result<SampleSet> {
    let mut set = SampleSet::new(space.clone(), 0);
    for (i, u) in lhs_sample(space, n, seed).into_iter().enumerate() {
        let x = space.denormalize(&u);
        let (y, g) = function.eval(&x)?;
        let mut result = crate::evaluator::EvalResult {
            y,
            constraints: Vec::new(),
            grad: Some(g),
            status: crate::samples::Status::Ok,
        };
        if let Some(spec) = noise {
            result = with_noise(result, spec, i);
        }
        let grad = match result.grad {
            Some(g) => Some(space.scale_gradient(&g)?),
            None => None,
        };
        set.add_sample(Sample::new(u, result.y, Vec::new(), grad, Tag::Doe))?;
    }
    Ok(set)
}

/// Paired CV RMSE for every (seed, condition, model) combination. Noise
/// only touches gradients, so held-out values are exact.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<Vec<BenchmarkRow>> {
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidSpace("benchmark needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        for &condition in &cfg.conditions {
            let noise = NoiseSpec::new(condition.level, condition.drop_rate, seed)?;
            let data = builtin_dataset(cfg.function, &cfg.space, cfg.n_samples, seed, Some(&noise))?;
            let mut model = cfg.model.clone();
            model.kriging.seed = seed;
            model.cv_seed = seed;
            let report = cross_validate(&data, &cfg.kinds, &model, cfg.folds, seed)?;
            for row in report.rows {
                log::info!(
                    "seed {seed} level {} drop {}: {} rmse {}",
                    condition.level,
                    condition.drop_rate,
                    row.kind,
                    row.rmse
                );
                rows.push(BenchmarkRow {
                    seed,
                    condition,
                    kind: row.kind,
                    rmse: row.rmse,
                });
            }
        }
    }
    Ok(rows)
}
