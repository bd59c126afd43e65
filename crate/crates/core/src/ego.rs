//! Efficient Global Optimization.
//!
//! A Latin Hypercube design is evaluated first; afterwards every iteration
//! refits the objective surrogate and one Kriging surrogate per constraint,
//! maximizes the penalized expected improvement
//!
//! ```text
//! A(x) = EI(μ(x), s(x), f_min) − P · Σ_j max(0, ĉ_j(x))
//! ```
//!
//! and evaluates the proposal, until the evaluation budget is spent.
//! Constraints are feasible when `c_j ≤ 0`. Failed evaluations consume
//! budget but never enter a fit.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evaluator::{with_noise, BlackBox, EvalResult, NoiseSpec};
use crate::optim::PatternSearch;
use crate::samples::{linf, Sample, SampleSet, Status, Tag};
use crate::space::{lhs_unit, ParameterSpace, UnitPoint};
use crate::surrogate::{ModelKind, Surrogate, SurrogateConfig};

/// Minimum L∞ separation between a proposal and every existing sample.
pub const PROPOSAL_SEPARATION: f64 = 1e-6;

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Closed-form expected improvement below `f_min` of a Gaussian with mean
/// `mu` and standard deviation `s`.
pub fn expected_improvement(mu: f64, s: f64, f_min: f64) -> f64 {
    if !(s > 0.0) {
        return 0.0;
    }
    let diff = f_min - mu;
    let z = diff / s;
    (diff * normal_cdf(z) + s * normal_pdf(z)).max(0.0)
}

/// The EI baseline: the best feasible objective, or the objective of the
/// least violating sample when nothing is feasible.
pub fn best_feasible(samples: &[Sample]) -> Result<f64> {
    let usable = samples.iter().filter(|s| s.is_usable());
    let mut best_feasible: Option<f64> = None;
    let mut least_violating: Option<(f64, f64)> = None;
    for s in usable {
        if s.is_feasible() {
            best_feasible = Some(best_feasible.map_or(s.y, |b| b.min(s.y)));
        }
        let v = s.violation();
        if least_violating.is_none_or(|(bv, _)| v < bv) {
            least_violating = Some((v, s.y));
        }
    }
    best_feasible
        .or(least_violating.map(|(_, y)| y))
        .ok_or(Error::EmptyHistory)
}

/// Surrogates of one EGO iteration.
pub struct AcquisitionModels<'a> {
    pub objective: &'a Surrogate,
    pub constraints: &'a [Surrogate],
    pub f_min: f64,
    pub penalty: f64,
}

impl AcquisitionModels<'_> {
    pub fn acquisition(&self, x: &[f64]) -> f64 {
        acquisition(x, self.objective, self.constraints, self.f_min, self.penalty)
    }
}

pub fn acquisition(x: &[f64], objective: &Surrogate, constraints: &[Surrogate], f_min: f64, penalty: f64) -> f64 {
    let ei = expected_improvement(objective.mean(x), objective.variance(x).sqrt(), f_min);
    let violation: f64 = constraints.iter().map(|c| c.mean(x).max(0.0)).sum();
    ei - penalty * violation
}

/// Default penalty: `10³ · max(1, max y − min y)` over usable samples.
pub fn default_penalty(data: &SampleSet) -> f64 {
    let (lo, hi) = data
        .samples()
        .iter()
        .filter(|s| s.is_usable())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.y), hi.max(s.y)));
    let range = if hi >= lo { hi - lo } else { 0.0 };
    1e3 * range.max(1.0)
}

#[derive(Debug, Clone)]
pub struct AcquisitionConfig {
    pub n_candidates: usize,
    pub n_refine: usize,
    pub initial_step: f64,
    pub min_step: f64,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            n_candidates: 10_000,
            n_refine: 10,
            initial_step: 0.05,
            min_step: 1e-6,
            seed: 0,
        }
    }
}

/// Multistart maximization of the acquisition: LHS screening followed by
/// pattern-search refinement of the best candidates. The result keeps at
/// least [`PROPOSAL_SEPARATION`] from every sample in `existing`.
pub fn maximize_acquisition(models: &AcquisitionModels<'_>, existing: &SampleSet, cfg: &AcquisitionConfig) -> Result<UnitPoint> {
    let d = existing.dim();
    let candidates = lhs_unit(d, cfg.n_candidates, cfg.seed);
    let mut scored: Vec<(f64, Vec<f64>)> = candidates
        .into_iter()
        .map(|u| {
            let a = models.acquisition(&u);
            (a, u.into_inner())
        })
        .collect();
    // descending score, stable in candidate order
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&i, &j| scored[j].0.total_cmp(&scored[i].0));

    let search = PatternSearch {
        initial_step: cfg.initial_step,
        min_step: cfg.min_step,
        tol: 0.0,
        max_evals: 20_000,
    };
    let (lower, upper) = (vec![0.0; d], vec![1.0; d]);
    let mut refined: Vec<(f64, Vec<f64>)> = order
        .iter()
        .take(cfg.n_refine)
        .map(|&i| {
            let (a0, x0) = scored[i].clone();
            let (x, a) = search.maximize(|x| Some(models.acquisition(x)), x0, a0, &lower, &upper);
            (a, x)
        })
        .collect();
    refined.sort_by(|a, b| b.0.total_cmp(&a.0));
    let rest = order.iter().skip(cfg.n_refine).map(|&i| std::mem::take(&mut scored[i]));
    let far_enough = |x: &[f64]| {
        existing
            .samples()
            .iter()
            .all(|s| linf(&s.x, x) >= PROPOSAL_SEPARATION)
    };
    refined
        .into_iter()
        .chain(rest)
        .find(|(_, x)| far_enough(x))
        .map(|(_, x)| UnitPoint::new(x).expect("search stays in the unit cube"))
        .ok_or(Error::AllCandidatesDuplicate)
}

/// Optimization problem: a design space and a black box returning the
/// objective plus `m` constraint values (feasible when `≤ 0`).
pub struct Problem {
    pub space: ParameterSpace,
    pub evaluator: Box<dyn BlackBox>,
    pub n_constraints: usize,
    pub noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone)]
pub struct EgoConfig {
    pub n_doe: usize,
    pub budget: usize,
    pub model: SurrogateConfig,
    pub doe_seed: u64,
    pub acquisition: AcquisitionConfig,
    /// `None` selects [`default_penalty`].
    pub penalty: Option<f64>,
    /// Concurrent evaluations during the initial design.
    pub workers: usize,
}

impl Default for EgoConfig {
    fn default() -> Self {
        Self {
            n_doe: 10,
            budget: 30,
            model: SurrogateConfig::default(),
            doe_seed: 0,
            acquisition: AcquisitionConfig::default(),
            penalty: None,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub index: usize,
    pub tag: Tag,
    pub status: Status,
    /// Raw design coordinates.
    pub x: Vec<f64>,
    pub y: f64,
    pub constraints: Vec<f64>,
    pub has_grad: bool,
    pub feasible: bool,
    /// Best feasible objective up to and including this entry.
    pub best_so_far: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizationReport {
    pub history: Vec<HistoryEntry>,
    pub model: ModelKind,
    pub budget_used: usize,
    pub doe_seconds: f64,
    pub ego_seconds: f64,
    pub samples: SampleSet,
    pub warnings: Vec<String>,
}

impl OptimizationReport {
    /// Entry holding the best feasible objective.
    pub fn best(&self) -> Option<&HistoryEntry> {
        self.history
            .iter()
            .filter(|e| e.feasible)
            .min_by(|a, b| a.y.total_cmp(&b.y))
    }
}

/// Outcome of turning one evaluation into a sample.
fn ingest(problem: &Problem, x: UnitPoint, raw: Vec<f64>, result: EvalResult, index: usize, tag: Tag, samples: &mut SampleSet) -> HistoryEntry {
    let m = problem.n_constraints;
    let result = match &problem.noise {
        Some(spec) if result.status != Status::Failed => with_noise(result, spec, index),
        _ => result,
    };
    let valid = result.status != Status::Failed
        && result.y.is_finite()
        && result.constraints.len() == m
        && result.constraints.iter().all(|c| c.is_finite());
    if result.status != Status::Failed && !valid {
        log::error!("evaluation {index}: malformed result ({} constraints, expected {m})", result.constraints.len());
    }
    let sample = if valid {
        let grad = result
            .grad
            .filter(|g| g.len() == x.len() && g.iter().all(|v| v.is_finite()))
            .and_then(|g| problem.space.scale_gradient(&g).ok());
        Sample::new(x, result.y, result.constraints, grad, tag)
    } else {
        Sample::failed(x, m, tag)
    };
    let entry = HistoryEntry {
        index,
        tag,
        status: sample.status,
        x: raw,
        y: sample.y,
        constraints: sample.constraints.clone(),
        has_grad: sample.grad.is_some(),
        feasible: sample.is_feasible(),
        best_so_far: None,
    };
    if let Err(e) = samples.add_sample(sample) {
        log::warn!("evaluation {index} not added to the data set: {e}");
    }
    entry
}

fn evaluate_batch(problem: &Problem, points: &[Vec<f64>], first_index: usize, workers: usize) -> Vec<EvalResult> {
    let run = || {
        use rayon::prelude::*;
        points
            .par_iter()
            .enumerate()
            .map(|(i, x)| problem.evaluator.evaluate(x, first_index + i))
            .collect()
    };
    if workers <= 1 {
        return points
            .iter()
            .enumerate()
            .map(|(i, x)| problem.evaluator.evaluate(x, first_index + i))
            .collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

/// Fits the objective and constraint surrogates for one iteration.
pub fn fit_models(samples: &SampleSet, cfg: &SurrogateConfig) -> Result<(Surrogate, Vec<Surrogate>, Vec<String>)> {
    let trained = Surrogate::train(samples, cfg)?;
    let mut warnings = trained.warnings;
    let ccfg = cfg.with_kind(ModelKind::Kriging);
    let mut constraints = Vec::with_capacity(samples.n_constraints());
    for j in 0..samples.n_constraints() {
        let t = Surrogate::train(&samples.constraint_view(j), &ccfg)?;
        warnings.extend(t.warnings);
        constraints.push(t.model);
    }
    Ok((trained.model, constraints, warnings))
}

/// Proposes the next design for the given data.
pub fn propose(samples: &SampleSet, cfg: &EgoConfig, iteration: usize) -> Result<(UnitPoint, Vec<String>)> {
    let mut acq = cfg.acquisition.clone();
    acq.seed = acq.seed.wrapping_add(iteration as u64);
    if samples.n_ok() < 2 {
        // not enough data for a surrogate: random non-duplicate point
        let mut rng = ChaCha8Rng::seed_from_u64(acq.seed);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..samples.dim()).map(|_| rng.random()).collect();
            if samples.any_within(&x, PROPOSAL_SEPARATION).is_none() {
                return Ok((UnitPoint::new(x)?, vec!["too few successful samples: random proposal".into()]));
            }
        }
        return Err(Error::AllCandidatesDuplicate);
    }
    let (objective, constraints, warnings) = fit_models(samples, &cfg.model)?;
    let models = AcquisitionModels {
        objective: &objective,
        constraints: &constraints,
        f_min: best_feasible(samples.samples())?,
        penalty: cfg.penalty.unwrap_or_else(|| default_penalty(samples)),
    };
    Ok((maximize_acquisition(&models, samples, &acq)?, warnings))
}

/// Evaluates an `n`-point LHS design with up to `workers` concurrent
/// evaluations. Failed evaluations are kept with status `failed`.
pub fn run_doe(problem: &Problem, n: usize, seed: u64, workers: usize) -> (SampleSet, Vec<HistoryEntry>) {
    let mut samples = SampleSet::new(problem.space.clone(), problem.n_constraints);
    let mut history = Vec::with_capacity(n);
    let design = lhs_unit(problem.space.dim(), n, seed);
    let raw: Vec<Vec<f64>> = design.iter().map(|u| problem.space.denormalize(u)).collect();
    let results = evaluate_batch(problem, &raw, 0, workers);
    for (i, ((u, x), r)) in design.into_iter().zip(raw).zip(results).enumerate() {
        history.push(ingest(problem, u, x, r, i, Tag::Doe, &mut samples));
    }
    (samples, history)
}

pub fn run_ego(problem: &Problem, cfg: &EgoConfig) -> Result<OptimizationReport> {
    let d = problem.space.dim();
    if cfg.budget < cfg.n_doe {
        return Err(Error::BudgetExhaustedBeforeDoE {
            budget: cfg.budget,
            n_doe: cfg.n_doe,
        });
    }
    if cfg.n_doe < d + 2 {
        return Err(Error::InvalidSpace(format!(
            "initial design needs at least d + 2 = {} points",
            d + 2
        )));
    }
    let t0 = Instant::now();
    let (mut samples, mut history) = run_doe(problem, cfg.n_doe, cfg.doe_seed, cfg.workers);
    let doe_seconds = t0.elapsed().as_secs_f64();
    let mut warnings = Vec::new();

    let t1 = Instant::now();
    while history.len() < cfg.budget {
        let index = history.len();
        let (u, notes) = propose(&samples, cfg, index - cfg.n_doe)?;
        for n in notes {
            if !warnings.contains(&n) {
                warnings.push(n);
            }
        }
        let x = problem.space.denormalize(&u);
        let r = problem.evaluator.evaluate(&x, index);
        let entry = ingest(problem, u, x, r, index, Tag::Ego, &mut samples);
        log::info!(
            "iteration {}: y = {} ({})",
            index - cfg.n_doe,
            entry.y,
            if entry.feasible { "feasible" } else { "infeasible" }
        );
        history.push(entry);
    }
    let ego_seconds = t1.elapsed().as_secs_f64();

    let mut best: Option<f64> = None;
    for e in &mut history {
        if e.feasible {
            best = Some(best.map_or(e.y, |b: f64| b.min(e.y)));
        }
        e.best_so_far = best;
    }
    Ok(OptimizationReport {
        budget_used: history.len(),
        history,
        model: cfg.model.kind,
        doe_seconds,
        ego_seconds,
        samples,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kriging::{CorrelationParams, KrigingModel};

    #[test]
    fn ei_closed_form() {
        assert_eq!(expected_improvement(1.0, 0.0, 2.0), 0.0);
        assert!((expected_improvement(0.0, 1.0, 0.0) - 0.3989422804014327).abs() < 1e-15);
        assert!((expected_improvement(0.0, 1.0, 1.0) - 1.0833154705876864).abs() < 1e-12);
    }

    fn pt(v: &[f64]) -> UnitPoint {
        UnitPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn baseline_selection() {
        let all = vec![
            Sample::new(pt(&[0.1]), 3.0, vec![-1.0], None, Tag::Doe),
            Sample::new(pt(&[0.2]), 1.0, vec![-0.5], None, Tag::Doe),
        ];
        assert_eq!(best_feasible(&all).unwrap(), 1.0);
        let none = vec![
            Sample::new(pt(&[0.1]), 3.0, vec![0.2], None, Tag::Doe),
            Sample::new(pt(&[0.2]), 1.0, vec![0.5], None, Tag::Doe),
        ];
        assert_eq!(best_feasible(&none).unwrap(), 3.0);
        let mixed = vec![
            Sample::new(pt(&[0.1]), 3.0, vec![-0.2], None, Tag::Doe),
            Sample::new(pt(&[0.2]), 1.0, vec![0.5], None, Tag::Doe),
            Sample::failed(pt(&[0.3]), 1, Tag::Ego),
        ];
        assert_eq!(best_feasible(&mixed).unwrap(), 3.0);
        assert!(matches!(best_feasible(&[]), Err(Error::EmptyHistory)));
    }

    #[test]
    fn single_sample_proposal_moves_away() {
        let mut s = SampleSet::new(ParameterSpace::unit(1).unwrap(), 0);
        s.add_sample(Sample::new(pt(&[0.4]), 1.0, vec![], None, Tag::Doe)).unwrap();
        let model = Surrogate::Kriging(KrigingModel::fit(&s, CorrelationParams::gaussian(vec![10.0])).unwrap());
        let models = AcquisitionModels {
            objective: &model,
            constraints: &[],
            f_min: 1.0,
            penalty: 1e3,
        };
        assert_eq!(models.acquisition(&[0.4]), 0.0);
        let cfg = AcquisitionConfig {
            n_candidates: 200,
            ..Default::default()
        };
        let x = maximize_acquisition(&models, &s, &cfg).unwrap();
        assert!((x[0] - 0.4).abs() > 1e-3);
        assert_eq!(maximize_acquisition(&models, &s, &cfg).unwrap(), x);
    }

    #[test]
    fn budget_checks() {
        let problem = Problem {
            space: ParameterSpace::unit(2).unwrap(),
            evaluator: Box::new(|x: &[f64]| crate::evaluator::evaluate_builtin("sphere", x).unwrap()),
            n_constraints: 0,
            noise: None,
        };
        let cfg = EgoConfig {
            n_doe: 8,
            budget: 5,
            ..Default::default()
        };
        assert!(matches!(run_ego(&problem, &cfg), Err(Error::BudgetExhaustedBeforeDoE { .. })));
        let cfg = EgoConfig {
            n_doe: 3,
            budget: 5,
            ..Default::default()
        };
        assert!(run_ego(&problem, &cfg).is_err());
    }
}
