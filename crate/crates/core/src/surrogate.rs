//! Uniform front over the model families used by the optimizer and the CLI.

use std::fmt;
use std::str::FromStr;

use crate::aggregation::{AggregationConfig, AggregationModel, RhoGrid};
use crate::error::{Error, Result};
use crate::gek::{indirect_gek_augment, GekConfig, GekModel, DEFAULT_INDIRECT_STEP, DEFAULT_MAX_ROWS};
use crate::kriging::{CorrelationParams, KrigingConfig, KrigingModel};
use crate::samples::SampleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Kriging,
    GekDirect,
    GekIndirect,
    Aggregation,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Kriging,
        ModelKind::GekDirect,
        ModelKind::GekIndirect,
        ModelKind::Aggregation,
    ];
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Kriging => "kriging",
            ModelKind::GekDirect => "gek-direct",
            ModelKind::GekIndirect => "gek-indirect",
            ModelKind::Aggregation => "aggregation",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "kriging" => Ok(ModelKind::Kriging),
            "gek-direct" => Ok(ModelKind::GekDirect),
            "gek-indirect" => Ok(ModelKind::GekIndirect),
            "aggregation" => Ok(ModelKind::Aggregation),
            other => Err(format!("unknown model type `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateConfig {
    pub kind: ModelKind,
    pub kriging: KrigingConfig,
    pub gek_max_rows: usize,
    pub indirect_step: f64,
    pub rho_grid: RhoGrid,
    pub folds: usize,
    pub cv_seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Kriging,
            kriging: KrigingConfig::default(),
            gek_max_rows: DEFAULT_MAX_ROWS,
            indirect_step: DEFAULT_INDIRECT_STEP,
            rho_grid: RhoGrid::default(),
            folds: 5,
            cv_seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn with_kind(&self, kind: ModelKind) -> Self {
        Self { kind, ..self.clone() }
    }

    fn aggregation(&self) -> AggregationConfig {
        AggregationConfig {
            kriging: self.kriging.clone(),
            grid: self.rho_grid.clone(),
            folds: self.folds,
            cv_seed: self.cv_seed,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Surrogate {
    Kriging(KrigingModel),
    GekDirect(GekModel),
    /// Ordinary Kriging trained on Taylor pseudo-samples; `source` holds
    /// the original data.
    GekIndirect {
        step: f64,
        source: SampleSet,
        model: KrigingModel,
    },
    Aggregation(AggregationModel),
}

/// A trained model plus any degradations applied while training it.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Surrogate,
    pub warnings: Vec<String>,
}

fn train_kriging(data: &SampleSet, cfg: &KrigingConfig, warnings: &mut Vec<String>) -> Result<KrigingModel> {
    match KrigingModel::train(data, cfg) {
        Err(Error::AllStartsFailed) => {
            let msg = "likelihood undefined for every start (constant data?): using theta = 1".to_string();
            log::warn!("{msg}");
            warnings.push(msg);
            KrigingModel::fit(data, CorrelationParams::gaussian(vec![1.0; data.dim()]))
        }
        other => other,
    }
}

impl Surrogate {
    pub fn train(data: &SampleSet, cfg: &SurrogateConfig) -> Result<Trained> {
        let mut warnings = Vec::new();
        let has_grad = data.usable().n_grad() > 0;
        let model = match cfg.kind {
            ModelKind::Kriging => Surrogate::Kriging(train_kriging(data, &cfg.kriging, &mut warnings)?),
            ModelKind::GekDirect if !has_grad => {
                warnings.push("gek-direct: no gradient samples, fell back to kriging".into());
                log::warn!("{}", warnings[0]);
                Surrogate::Kriging(train_kriging(data, &cfg.kriging, &mut warnings)?)
            }
            ModelKind::GekDirect => {
                let gcfg = GekConfig {
                    kriging: cfg.kriging.clone(),
                    max_rows: cfg.gek_max_rows,
                };
                Surrogate::GekDirect(GekModel::train(data, &gcfg)?)
            }
            ModelKind::GekIndirect => {
                if !has_grad {
                    warnings.push("gek-indirect: no gradient samples, fitting kriging on primal data".into());
                }
                let augmented = indirect_gek_augment(data, cfg.indirect_step)?;
                Surrogate::GekIndirect {
                    step: cfg.indirect_step,
                    source: data.usable(),
                    model: train_kriging(&augmented, &cfg.kriging, &mut warnings)?,
                }
            }
            ModelKind::Aggregation => {
                if !has_grad {
                    warnings.push("aggregation: no gradient samples, alpha is zero everywhere".into());
                }
                let acfg = cfg.aggregation();
                let primal = train_kriging(data, &acfg.kriging, &mut warnings)?;
                Surrogate::Aggregation(AggregationModel::tune(primal, &acfg)?)
            }
        };
        Ok(Trained { model, warnings })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Surrogate::Kriging(_) => ModelKind::Kriging,
            Surrogate::GekDirect(_) => ModelKind::GekDirect,
            Surrogate::GekIndirect { .. } => ModelKind::GekIndirect,
            Surrogate::Aggregation(_) => ModelKind::Aggregation,
        }
    }

    pub fn dim(&self) -> usize {
        self.params().dim()
    }

    pub fn params(&self) -> &CorrelationParams {
        match self {
            Surrogate::Kriging(m) => m.params(),
            Surrogate::GekDirect(m) => m.params(),
            Surrogate::GekIndirect { model, .. } => model.params(),
            Surrogate::Aggregation(m) => m.primal().params(),
        }
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        match self {
            Surrogate::Kriging(m) => m.predict_mean(x),
            Surrogate::GekDirect(m) => m.predict(x),
            Surrogate::GekIndirect { model, .. } => model.predict_mean(x),
            Surrogate::Aggregation(m) => m.predict(x),
        }
    }

    pub fn variance(&self, x: &[f64]) -> f64 {
        match self {
            Surrogate::Kriging(m) => m.predict_variance(x),
            Surrogate::GekDirect(m) => m.predict_variance(x),
            Surrogate::GekIndirect { model, .. } => model.predict_variance(x),
            Surrogate::Aggregation(m) => m.predict_variance(x),
        }
    }

    pub fn log_likelihood(&self) -> Option<f64> {
        match self {
            Surrogate::Kriging(m) => m.log_likelihood().ok(),
            Surrogate::GekDirect(m) => m.log_likelihood().ok(),
            Surrogate::GekIndirect { model, .. } => model.log_likelihood().ok(),
            Surrogate::Aggregation(m) => m.primal().log_likelihood().ok(),
        }
    }

    pub fn beta0(&self) -> f64 {
        match self {
            Surrogate::Kriging(m) => m.beta0(),
            Surrogate::GekDirect(m) => m.beta0(),
            Surrogate::GekIndirect { model, .. } => model.beta0(),
            Surrogate::Aggregation(m) => m.primal().beta0(),
        }
    }

    pub fn sigma2(&self) -> f64 {
        match self {
            Surrogate::Kriging(m) => m.sigma2(),
            Surrogate::GekDirect(m) => m.sigma2(),
            Surrogate::GekIndirect { model, .. } => model.sigma2(),
            Surrogate::Aggregation(m) => m.primal().sigma2(),
        }
    }

    /// Reciprocal condition estimate of the factorized correlation system.
    pub fn rcond_estimate(&self) -> f64 {
        match self {
            Surrogate::Kriging(m) => m.rcond_estimate(),
            Surrogate::GekDirect(m) => m.rcond_estimate(),
            Surrogate::GekIndirect { model, .. } => model.rcond_estimate(),
            Surrogate::Aggregation(m) => m.primal().rcond_estimate(),
        }
    }

    /// Samples the model was trained on (before any pseudo-samples).
    pub fn data(&self) -> &SampleSet {
        match self {
            Surrogate::Kriging(m) => m.data(),
            Surrogate::GekDirect(m) => m.data(),
            Surrogate::GekIndirect { source, .. } => source,
            Surrogate::Aggregation(m) => m.primal().data(),
        }
    }

    pub fn nugget(&self) -> f64 {
        match self {
            Surrogate::Kriging(m) => m.nugget(),
            Surrogate::GekDirect(m) => m.nugget(),
            Surrogate::GekIndirect { model, .. } => model.nugget(),
            Surrogate::Aggregation(m) => m.primal().nugget(),
        }
    }
}
