//! Self-describing text serialization of trained surrogates.
//!
//! Layout: optional `#` comment lines, the version line, `key = value`
//! fields, a `data` marker, then the training data in sample-CSV form.
//! Loading refits the linear system with the stored hyperparameters and
//! nugget, which reproduces the saved predictor exactly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::aggregation::AggregationModel;
use crate::error::{Error, Result};
use crate::gek::{indirect_gek_augment, GekModel};
use crate::kriging::{CorrelationParams, KrigingModel};
use crate::numfmt::{fmt_f64, fmt_list};
use crate::samples::SampleSet;
use crate::surrogate::{ModelKind, Surrogate};

pub const MAGIC: &str = "gradboost-model v1";

/// Serializes a model. `preamble` lines are written first and must be
/// `#` comments.
pub fn to_string(model: &Surrogate, preamble: &[String]) -> Result<String> {
    let p = model.params();
    let mut fields: Vec<(String, String)> = vec![
        ("kind".into(), model.kind().to_string()),
        ("dim".into(), model.dim().to_string()),
        ("theta".into(), fmt_list(&p.theta, ", ")),
        ("gamma".into(), fmt_list(&p.gamma, ", ")),
    ];
    fields.push(("beta0".into(), fmt_f64(model.beta0())));
    fields.push(("sigma2".into(), fmt_f64(model.sigma2())));
    match model {
        Surrogate::Kriging(_) => {}
        Surrogate::GekDirect(m) => fields.push(("system_size".into(), m.system_size().to_string())),
        Surrogate::GekIndirect { step, .. } => fields.push(("step".into(), fmt_f64(*step))),
        Surrogate::Aggregation(m) => {
            fields.push(("rho".into(), fmt_f64(m.rho())));
            fields.push(("rho_grid".into(), fmt_list(m.rho_grid(), ", ")));
            fields.push(("cv_rmse".into(), fmt_list(m.cv_errors(), ", ")));
        }
    }
    let data = model.data();
    fields.push(("nugget".into(), fmt_f64(model.nugget())));
    if let Some(ll) = model.log_likelihood() {
        fields.push(("log_likelihood".into(), fmt_f64(ll)));
    }

    let mut s = String::new();
    for line in preamble {
        s.push_str(line);
        s.push('\n');
    }
    s.push_str(MAGIC);
    s.push('\n');
    for (k, v) in fields {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s.push_str("data\n");
    s.push_str(&data.to_csv_string(&[])?);
    Ok(s)
}

pub fn save(model: &Surrogate, path: &Path, preamble: &[String]) -> Result<()> {
    std::fs::write(path, to_string(model, preamble)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Surrogate> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}

fn bad(reason: impl Into<String>) -> Error {
    Error::ModelFormat(reason.into())
}

fn list(fields: &BTreeMap<&str, &str>, key: &str) -> Result<Vec<f64>> {
    let v = fields.get(key).ok_or_else(|| bad(format!("missing field `{key}`")))?;
    v.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| bad(format!("{key}: {e}"))))
        .collect()
}

fn scalar(fields: &BTreeMap<&str, &str>, key: &str) -> Result<f64> {
    match list(fields, key)?.as_slice() {
        [v] => Ok(*v),
        _ => Err(bad(format!("{key}: expected one value"))),
    }
}

pub fn from_str(text: &str) -> Result<Surrogate> {
    let mut lines = text.split_inclusive('\n');
    let mut magic_seen = false;
    let mut fields = BTreeMap::new();
    let mut consumed = 0;
    for line in lines.by_ref() {
        consumed += line.len();
        let t = line.trim();
        if !magic_seen {
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if t != MAGIC {
                return Err(bad(format!("expected `{MAGIC}`, got `{t}`")));
            }
            magic_seen = true;
            continue;
        }
        if t == "data" {
            break;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| bad(format!("malformed field line `{t}`")))?;
        fields.insert(k.trim(), v.trim());
    }
    if !magic_seen {
        return Err(bad("missing version line"));
    }
    let data = SampleSet::from_csv_str(&text[consumed..], None)?;

    let kind: ModelKind = fields
        .get("kind")
        .ok_or_else(|| bad("missing field `kind`"))?
        .parse()
        .map_err(bad)?;
    let dim = scalar(&fields, "dim")? as usize;
    if dim != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: data.dim(),
        });
    }
    let params = CorrelationParams::new(list(&fields, "theta")?, list(&fields, "gamma")?)?;
    if params.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: params.dim(),
        });
    }
    let nugget = scalar(&fields, "nugget")?;
    Ok(match kind {
        ModelKind::Kriging => Surrogate::Kriging(KrigingModel::fit_with_nugget(&data, params, nugget)?),
        ModelKind::GekDirect => Surrogate::GekDirect(GekModel::fit_with_nugget(&data, params, nugget)?),
        ModelKind::GekIndirect => {
            let step = scalar(&fields, "step")?;
            let augmented = indirect_gek_augment(&data, step)?;
            Surrogate::GekIndirect {
                step,
                model: KrigingModel::fit_with_nugget(&augmented, params, nugget)?,
                source: data,
            }
        }
        ModelKind::Aggregation => {
            let primal = KrigingModel::fit_with_nugget(&data, params, nugget)?;
            Surrogate::Aggregation(AggregationModel::from_parts(
                primal,
                scalar(&fields, "rho")?,
                list(&fields, "rho_grid")?,
                list(&fields, "cv_rmse")?,
            )?)
        }
    })
}
