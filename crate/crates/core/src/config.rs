//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Every random stream
//! is seeded from the config: `seed` is required and the per-stage seeds
//! default to fixed offsets from it.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use crate::aggregation::RhoGrid;
use crate::crossval::NoiseCondition;
use crate::ego::{AcquisitionConfig, EgoConfig};
use crate::error::{Error, Result};
use crate::evaluator::{BlackBox, Builtin, BuiltinEvaluator, ExternalEvaluator, LinearConstraint, NoiseSpec, DEFAULT_TIMEOUT};
use crate::gek::{DEFAULT_INDIRECT_STEP, DEFAULT_MAX_ROWS};
use crate::kriging::KrigingConfig;
use crate::space::ParameterSpace;
use crate::surrogate::{ModelKind, SurrogateConfig};

/// Environment variable overriding the external evaluator work directory.
pub const WORKDIR_ENV: &str = "GRADBOOST_WORKDIR";

const KNOWN_KEYS: &[&str] = &[
    "lower",
    "upper",
    "names",
    "evaluator",
    "constraint_a",
    "constraint_t",
    "n_constraints",
    "workdir",
    "timeout",
    "model",
    "n_doe",
    "budget",
    "seed",
    "seed_doe",
    "seed_train",
    "seed_acq",
    "seed_noise",
    "seed_cv",
    "rho_min",
    "rho_max",
    "rho_count",
    "k_folds",
    "penalty",
    "workers",
    "noise_level",
    "drop_rate",
    "gamma",
    "optimize_gamma",
    "n_starts",
    "indirect_step",
    "max_rows",
    "n_candidates",
    "n_refine",
    "cv_models",
    "benchmark_samples",
    "benchmark_conditions",
    "benchmark_models",
    "benchmark_extra_seeds",
];

#[derive(Debug, Clone, PartialEq)]
pub enum EvaluatorSpec {
    Builtin(Builtin),
    External(String),
}

impl FromStr for EvaluatorSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(name) = s.strip_prefix("builtin:") {
            name.trim()
                .parse()
                .map(EvaluatorSpec::Builtin)
                .map_err(|e: Error| e.to_string())
        } else if let Some(cmd) = s.strip_prefix("external:") {
            if cmd.trim().is_empty() {
                Err("external evaluator needs a command".into())
            } else {
                Ok(EvaluatorSpec::External(cmd.trim().to_string()))
            }
        } else {
            Err(format!("evaluator must be builtin:<name> or external:<command>, got `{s}`"))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub space: ParameterSpace,
    pub evaluator: EvaluatorSpec,
    pub constraint: Option<LinearConstraint>,
    pub n_constraints: usize,
    pub workdir: PathBuf,
    pub timeout: Duration,
    pub model: ModelKind,
    pub n_doe: usize,
    pub budget: usize,
    pub seed: u64,
    pub seed_doe: u64,
    pub seed_train: u64,
    pub seed_acq: u64,
    pub seed_noise: u64,
    pub seed_cv: u64,
    pub rho_grid: RhoGrid,
    pub k_folds: usize,
    pub penalty: Option<f64>,
    pub workers: usize,
    pub noise: NoiseSpec,
    pub gamma: f64,
    pub optimize_gamma: bool,
    pub n_starts: Option<usize>,
    pub indirect_step: f64,
    pub max_rows: usize,
    pub n_candidates: usize,
    pub n_refine: usize,
    pub cv_models: Vec<ModelKind>,
    pub benchmark_samples: usize,
    pub benchmark_conditions: Vec<NoiseCondition>,
    pub benchmark_models: Vec<ModelKind>,
    pub benchmark_extra_seeds: usize,
    /// Canonical `key=value` pairs actually in effect, for hashing.
    canonical: BTreeMap<String, String>,
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.map.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<T>().map(Some).map_err(|e| Error::Config {
                line,
                reason: format!("{key}: {e}"),
            }),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>().map_err(|e| Error::Config {
                        line,
                        reason: format!("{key}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    fn line(&self, key: &str) -> usize {
        self.get(key).map_or(0, |(l, _)| l)
    }
}

fn parse_condition(s: &str) -> std::result::Result<NoiseCondition, String> {
    let (level, drop) = s.split_once(':').unwrap_or((s, "0"));
    let level = level.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let drop_rate = drop.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok(NoiseCondition { level, drop_rate })
}

impl RunConfig {
    /// Parses `text`, then applies command-line `overrides` (key, value),
    /// which replace file entries and enter the config hash.
    pub fn parse(text: &str, overrides: &[(&str, String)]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: i + 1,
                    reason: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = k.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config {
                    line: i + 1,
                    reason: format!("unknown key `{key}`"),
                });
            }
            if map.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Config {
                    line: i + 1,
                    reason: format!("duplicate key `{key}`"),
                });
            }
        }
        for (key, value) in overrides {
            if !KNOWN_KEYS.contains(key) {
                return Err(Error::Config {
                    line: 0,
                    reason: format!("unknown override key `{key}`"),
                });
            }
            let line = map.get(*key).map_or(0, |(l, _)| *l);
            map.insert((*key).to_string(), (line, value.trim().to_string()));
        }
        let e = Entries { map };
        let cfg_err = |line: usize, reason: String| Error::Config { line, reason };

        let lower: Vec<f64> = e.list("lower")?.ok_or_else(|| cfg_err(0, "missing key `lower`".into()))?;
        let upper: Vec<f64> = e.list("upper")?.ok_or_else(|| cfg_err(0, "missing key `upper`".into()))?;
        let mut space = ParameterSpace::new(lower, upper).map_err(|err| cfg_err(e.line("upper"), err.to_string()))?;
        if let Some(names) = e.list::<String>("names")? {
            space = space.with_names(names).map_err(|err| cfg_err(e.line("names"), err.to_string()))?;
        }
        let d = space.dim();

        let evaluator: EvaluatorSpec = e
            .parse("evaluator")?
            .ok_or_else(|| cfg_err(0, "missing key `evaluator`".into()))?;
        let constraint = match (e.parse::<f64>("constraint_a")?, e.parse::<f64>("constraint_t")?) {
            (None, None) => None,
            (Some(a), Some(t)) => Some(LinearConstraint { a, t }),
            _ => {
                return Err(cfg_err(
                    e.line("constraint_a").max(e.line("constraint_t")),
                    "constraint_a and constraint_t go together".into(),
                ))
            }
        };
        let n_constraints = match &evaluator {
            EvaluatorSpec::Builtin(_) => {
                if let Some((line, _)) = e.get("n_constraints") {
                    return Err(cfg_err(line, "n_constraints applies to external evaluators only".into()));
                }
                usize::from(constraint.is_some())
            }
            EvaluatorSpec::External(_) => e.parse("n_constraints")?.unwrap_or(0),
        };
        let workdir = std::env::var_os(WORKDIR_ENV)
            .map(PathBuf::from)
            .or(e.parse::<PathBuf>("workdir")?)
            .unwrap_or_else(|| PathBuf::from("work"));
        let timeout = e
            .parse::<f64>("timeout")?
            .map(Duration::from_secs_f64)
            .unwrap_or(DEFAULT_TIMEOUT);

        let seed: u64 = e.parse("seed")?.ok_or_else(|| cfg_err(0, "missing key `seed`".into()))?;
        let seed_or = |key: &str, offset: u64| -> Result<u64> {
            Ok(e.parse(key)?.unwrap_or(seed.wrapping_add(offset)))
        };

        let n_doe = e.parse("n_doe")?.unwrap_or((2 * d).max(10));
        let budget = e.parse("budget")?.unwrap_or(n_doe + 20);
        if budget < n_doe {
            return Err(cfg_err(e.line("budget"), format!("budget {budget} is below n_doe {n_doe}")));
        }
        let noise = NoiseSpec::new(
            e.parse("noise_level")?.unwrap_or(0.0),
            e.parse("drop_rate")?.unwrap_or(0.0),
            seed_or("seed_noise", 3)?,
        )
        .map_err(|err| cfg_err(e.line("noise_level").max(e.line("drop_rate")), err.to_string()))?;

        let rho_grid = RhoGrid {
            min: e.parse("rho_min")?.unwrap_or(1e-3),
            max: e.parse("rho_max")?.unwrap_or(1e3),
            count: e.parse("rho_count")?.unwrap_or(25),
        };
        if !(rho_grid.min > 0.0 && rho_grid.max >= rho_grid.min && rho_grid.count >= 1) {
            return Err(cfg_err(e.line("rho_min"), "rho grid needs 0 < rho_min <= rho_max, rho_count >= 1".into()));
        }
        let penalty = match e.get("penalty") {
            None | Some((_, "auto")) => None,
            Some(_) => e.parse("penalty")?,
        };
        let gamma = e.parse("gamma")?.unwrap_or(2.0);
        if !(gamma > 0.0 && gamma <= 2.0) {
            return Err(cfg_err(e.line("gamma"), "gamma must lie in (0, 2]".into()));
        }
        let n_starts = match e.get("n_starts") {
            None | Some((_, "auto")) => None,
            Some(_) => e.parse("n_starts")?,
        };
        let benchmark_conditions = match e.get("benchmark_conditions") {
            None => vec![
                NoiseCondition { level: 0.0, drop_rate: 0.0 },
                NoiseCondition { level: 0.5, drop_rate: 0.2 },
            ],
            Some((line, v)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| parse_condition(s).map_err(|r| cfg_err(line, format!("benchmark_conditions: {r}"))))
                .collect::<Result<Vec<_>>>()?,
        };

        let canonical = e.map.iter().map(|(k, (_, v))| (k.clone(), v.clone())).collect();
        Ok(Self {
            space,
            evaluator,
            constraint,
            n_constraints,
            workdir,
            timeout,
            model: e.parse("model")?.unwrap_or(ModelKind::Aggregation),
            n_doe,
            budget,
            seed,
            seed_doe: seed_or("seed_doe", 0)?,
            seed_train: seed_or("seed_train", 1)?,
            seed_acq: seed_or("seed_acq", 2)?,
            seed_noise: noise.seed,
            seed_cv: seed_or("seed_cv", 4)?,
            rho_grid,
            k_folds: e.parse("k_folds")?.unwrap_or(5),
            penalty,
            workers: e.parse("workers")?.unwrap_or(1),
            noise,
            gamma,
            optimize_gamma: e.parse("optimize_gamma")?.unwrap_or(false),
            n_starts,
            indirect_step: e.parse("indirect_step")?.unwrap_or(DEFAULT_INDIRECT_STEP),
            max_rows: e.parse("max_rows")?.unwrap_or(DEFAULT_MAX_ROWS),
            n_candidates: e.parse("n_candidates")?.unwrap_or(10_000),
            n_refine: e.parse("n_refine")?.unwrap_or(10),
            cv_models: e.list("cv_models")?.unwrap_or_else(|| ModelKind::ALL.to_vec()),
            benchmark_samples: e.parse("benchmark_samples")?.unwrap_or(40),
            benchmark_conditions,
            benchmark_models: e
                .list("benchmark_models")?
                .unwrap_or_else(|| vec![ModelKind::Kriging, ModelKind::GekDirect, ModelKind::Aggregation]),
            benchmark_extra_seeds: e.parse("benchmark_extra_seeds")?.unwrap_or(5),
            canonical,
        })
    }

    /// FNV-1a (64 bit) over the sorted `key=value` lines in effect.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for (k, v) in &self.canonical {
            for b in k.bytes().chain(std::iter::once(b'=')).chain(v.bytes()).chain(std::iter::once(b'\n')) {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    pub fn kriging(&self) -> KrigingConfig {
        KrigingConfig {
            gamma: self.gamma,
            optimize_gamma: self.optimize_gamma,
            n_starts: self.n_starts,
            seed: self.seed_train,
            ..KrigingConfig::default()
        }
    }

    pub fn surrogate(&self) -> SurrogateConfig {
        SurrogateConfig {
            kind: self.model,
            kriging: self.kriging(),
            gek_max_rows: self.max_rows,
            indirect_step: self.indirect_step,
            rho_grid: self.rho_grid.clone(),
            folds: self.k_folds,
            cv_seed: self.seed_cv,
        }
    }

    pub fn ego(&self) -> EgoConfig {
        EgoConfig {
            n_doe: self.n_doe,
            budget: self.budget,
            model: self.surrogate(),
            doe_seed: self.seed_doe,
            acquisition: AcquisitionConfig {
                n_candidates: self.n_candidates,
                n_refine: self.n_refine,
                seed: self.seed_acq,
                ..AcquisitionConfig::default()
            },
            penalty: self.penalty,
            workers: self.workers,
        }
    }

    pub fn black_box(&self) -> Result<Box<dyn BlackBox>> {
        Ok(match &self.evaluator {
            EvaluatorSpec::Builtin(f) => {
                let mut ev = BuiltinEvaluator::new(*f);
                if let Some(c) = self.constraint {
                    ev = ev.with_constraint(c);
                }
                Box::new(ev)
            }
            EvaluatorSpec::External(cmd) => {
                Box::new(ExternalEvaluator::new(cmd, &self.workdir)?.with_timeout(self.timeout))
            }
        })
    }

    /// Noise spec, or `None` when it would be the identity.
    pub fn noise(&self) -> Option<NoiseSpec> {
        (!self.noise.is_identity()).then_some(self.noise)
    }
}
