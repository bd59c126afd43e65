//! Evaluated designs: objective values, optional gradients, constraint
//! values and evaluation status, plus CSV persistence and fold splitting.
//!
//! Coordinates and gradients are stored in normalized space. The CSV layout
//! is
//!
//! ```text
//! #bounds,l1,u1,...,ld,ud
//! x1,...,xd,y,c1,...,cm,has_grad,g1,...,gd,status,tag
//! ```
//!
//! with empty gradient cells when `has_grad=0` and empty value cells for
//! failed evaluations.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numfmt::fmt_f64;
use crate::space::{ParameterSpace, UnitPoint};

/// L∞ distance below which two successful samples count as the same design.
pub const DEDUP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed,
    GradientFailed,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Ok => "ok",
            Status::Failed => "failed",
            Status::GradientFailed => "gradient_failed",
        })
    }
}

impl FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ok" => Ok(Status::Ok),
            "failed" => Ok(Status::Failed),
            "gradient_failed" => Ok(Status::GradientFailed),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Doe,
    Ego,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tag::Doe => "doe",
            Tag::Ego => "ego",
        })
    }
}

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "doe" => Ok(Tag::Doe),
            "ego" => Ok(Tag::Ego),
            other => Err(format!("unknown tag `{other}`")),
        }
    }
}

/// One evaluated design. For `Status::Failed` the value and constraints are
/// NaN placeholders and must not be used.
#[derive(Debug, Clone)]
pub struct Sample {
    pub x: UnitPoint,
    pub y: f64,
    pub grad: Option<Vec<f64>>,
    pub constraints: Vec<f64>,
    pub status: Status,
    pub tag: Tag,
}

fn canon(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

impl Sample {
    /// A successful evaluation. The status is `GradientFailed` when no
    /// gradient is supplied.
    pub fn new(x: UnitPoint, y: f64, constraints: Vec<f64>, grad: Option<Vec<f64>>, tag: Tag) -> Self {
        let status = if grad.is_some() {
            Status::Ok
        } else {
            Status::GradientFailed
        };
        Self {
            x,
            y: canon(y),
            grad: grad.map(|g| g.into_iter().map(canon).collect()),
            constraints: constraints.into_iter().map(canon).collect(),
            status,
            tag,
        }
    }

    pub fn failed(x: UnitPoint, m: usize, tag: Tag) -> Self {
        Self {
            x,
            y: f64::NAN,
            grad: None,
            constraints: vec![f64::NAN; m],
            status: Status::Failed,
            tag,
        }
    }

    /// Whether the objective value may be used for fitting.
    pub fn is_usable(&self) -> bool {
        self.status != Status::Failed
    }

    /// Total constraint violation `sum_j max(0, c_j)`.
    pub fn violation(&self) -> f64 {
        self.constraints.iter().map(|c| c.max(0.0)).sum()
    }

    pub fn is_feasible(&self) -> bool {
        self.is_usable() && self.constraints.iter().all(|&c| c <= 0.0)
    }
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

impl PartialEq for Sample {
    fn eq(&self, other: &Self) -> bool {
        self.status == other.status
            && self.tag == other.tag
            && bits_eq(&self.x, &other.x)
            && self.y.to_bits() == other.y.to_bits()
            && bits_eq(&self.constraints, &other.constraints)
            && match (&self.grad, &other.grad) {
                (None, None) => true,
                (Some(a), Some(b)) => bits_eq(a, b),
                _ => false,
            }
    }
}

/// Ordered collection of samples sharing one design space and constraint
/// count.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    space: ParameterSpace,
    m: usize,
    samples: Vec<Sample>,
}

impl SampleSet {
    pub fn new(space: ParameterSpace, m: usize) -> Self {
        Self {
            space,
            m,
            samples: Vec::new(),
        }
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn n_constraints(&self) -> usize {
        self.m
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of samples with a usable objective value (N).
    pub fn n_ok(&self) -> usize {
        self.samples.iter().filter(|s| s.is_usable()).count()
    }

    /// Number of samples carrying a gradient (N̄).
    pub fn n_grad(&self) -> usize {
        self.samples.iter().filter(|s| s.grad.is_some()).count()
    }

    pub fn usable_indices(&self) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].is_usable())
            .collect()
    }

    /// Appends `s`, rejecting dimension mismatches, non-finite data and
    /// designs that duplicate an existing successful sample.
    pub fn add_sample(&mut self, s: Sample) -> Result<()> {
        let d = self.dim();
        if s.x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.x.len(),
            });
        }
        if s.constraints.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: s.constraints.len(),
            });
        }
        if let Some(g) = &s.grad {
            if g.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpace("gradient entries must be finite".into()));
            }
        }
        if s.is_usable() {
            if !s.y.is_finite() || s.constraints.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidSpace(
                    "objective and constraint values must be finite".into(),
                ));
            }
            if let Some(i) = self.nearest_usable_within(&s.x, DEDUP_TOL) {
                log::warn!("rejecting duplicate of sample {i}");
                return Err(Error::DuplicatePoint(i));
            }
        }
        self.samples.push(s);
        Ok(())
    }

    fn nearest_usable_within(&self, x: &[f64], tol: f64) -> Option<usize> {
        self.samples
            .iter()
            .position(|t| t.is_usable() && linf(&t.x, x) <= tol)
    }

    /// Index of any sample (including failed ones) within `tol` in L∞.
    pub fn any_within(&self, x: &[f64], tol: f64) -> Option<usize> {
        self.samples.iter().position(|t| linf(&t.x, x) < tol)
    }

    /// Samples at the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> SampleSet {
        SampleSet {
            space: self.space.clone(),
            m: self.m,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Only the usable samples.
    pub fn usable(&self) -> SampleSet {
        self.subset(&self.usable_indices())
    }

    /// Copy with every gradient removed.
    pub fn without_gradients(&self) -> SampleSet {
        let mut out = self.clone();
        for s in &mut out.samples {
            if s.grad.take().is_some() {
                s.status = Status::GradientFailed;
            }
        }
        out
    }

    /// Copy where the objective is replaced by constraint `j`; gradients
    /// are dropped since constraint gradients are not collected.
    pub fn constraint_view(&self, j: usize) -> SampleSet {
        let mut out = self.without_gradients();
        for s in &mut out.samples {
            if s.is_usable() {
                s.y = s.constraints[j];
            }
        }
        out
    }

    pub fn save_csv(&self, path: &Path, preamble: &[String]) -> Result<()> {
        let text = self.to_csv_string(preamble)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_string(&self, preamble: &[String]) -> Result<String> {
        let d = self.dim();
        let mut out = String::new();
        for line in preamble {
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("#bounds");
        for k in 0..d {
            out.push(',');
            out.push_str(&fmt_f64(self.space.lower()[k]));
            out.push(',');
            out.push_str(&fmt_f64(self.space.upper()[k]));
        }
        out.push('\n');

        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(csv_header(d, self.m))?;
        for s in &self.samples {
            let mut rec: Vec<String> = s.x.iter().map(|&v| fmt_f64(v)).collect();
            let usable = s.is_usable();
            rec.push(if usable { fmt_f64(s.y) } else { String::new() });
            for &c in &s.constraints {
                rec.push(if usable { fmt_f64(c) } else { String::new() });
            }
            match &s.grad {
                Some(g) => {
                    rec.push("1".into());
                    rec.extend(g.iter().map(|&v| fmt_f64(v)));
                }
                None => {
                    rec.push("0".into());
                    rec.extend(std::iter::repeat_n(String::new(), d));
                }
            }
            rec.push(s.status.to_string());
            rec.push(s.tag.to_string());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io("<memory>", e.into_error()))?;
        out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
        Ok(out)
    }

    /// Loads a sample file. The `#bounds` line, when present, defines the
    /// space; otherwise `space` must be supplied. When both are present
    /// they must agree.
    pub fn load_csv(path: &Path, space: Option<&ParameterSpace>) -> Result<SampleSet> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text, space)
    }

    pub fn from_csv_str(text: &str, space: Option<&ParameterSpace>) -> Result<SampleSet> {
        let file_space = parse_bounds_line(text)?;
        let space = match (file_space, space) {
            (Some(f), Some(given)) => {
                if f.lower() != given.lower() || f.upper() != given.upper() {
                    return Err(Error::HeaderMismatch(
                        "#bounds line disagrees with the configured space".into(),
                    ));
                }
                f
            }
            (Some(f), None) => f,
            (None, Some(given)) => given.clone(),
            (None, None) => {
                return Err(Error::HeaderMismatch(
                    "no #bounds line and no space supplied".into(),
                ))
            }
        };
        let d = space.dim();

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .flexible(true)
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let m = header_constraint_count(&header, d)?;
        if header != csv_header(d, m) {
            return Err(Error::HeaderMismatch(format!(
                "expected columns {:?}",
                csv_header(d, m).join(",")
            )));
        }

        let mut set = SampleSet::new(space, m);
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let bad = |reason: String| Error::MalformedRow { line, reason };
            let width = d + 1 + m + 1 + d + 2;
            if rec.len() != width {
                return Err(bad(format!("expected {width} cells, found {}", rec.len())));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("column {} is not a number: `{}`", header[i], &rec[i])))
            };
            let status: Status = rec[width - 2].parse().map_err(bad)?;
            let tag: Tag = rec[width - 1].parse().map_err(bad)?;
            let x = (0..d).map(num).collect::<Result<Vec<_>>>()?;
            let x = UnitPoint::new(x).map_err(|e| bad(e.to_string()))?;
            let has_grad = match &rec[d + 1 + m] {
                "1" => true,
                "0" | "" => false,
                other => return Err(bad(format!("has_grad must be 0 or 1, got `{other}`"))),
            };
            let g0 = d + 2 + m;
            let grad = if has_grad {
                Some((g0..g0 + d).map(num).collect::<Result<Vec<_>>>()?)
            } else {
                None
            };
            let sample = if status == Status::Failed {
                Sample::failed(x, m, tag)
            } else {
                let y = num(d)?;
                let c = (d + 1..d + 1 + m).map(num).collect::<Result<Vec<_>>>()?;
                let mut s = Sample::new(x, y, c, grad, tag);
                if status == Status::GradientFailed && s.grad.is_some() {
                    return Err(bad("gradient_failed row carries a gradient".into()));
                }
                if status == Status::Ok && s.grad.is_none() {
                    // an ok row without gradient columns is a primal-only sample
                    s.status = Status::GradientFailed;
                }
                s
            };
            set.add_sample(sample).map_err(|e| match e {
                Error::MalformedRow { .. } => e,
                other => bad(other.to_string()),
            })?;
        }
        Ok(set)
    }
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn csv_header(d: usize, m: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    h.push("y".into());
    h.extend((1..=m).map(|j| format!("c{j}")));
    h.push("has_grad".into());
    h.extend((1..=d).map(|k| format!("g{k}")));
    h.push("status".into());
    h.push("tag".into());
    h
}

fn header_constraint_count(header: &[String], d: usize) -> Result<usize> {
    let fixed = 2 * d + 4;
    if header.len() < fixed {
        return Err(Error::HeaderMismatch(format!(
            "header has {} columns, need at least {fixed} for d = {d}",
            header.len()
        )));
    }
    Ok(header.len() - fixed)
}

pub(crate) fn parse_bounds_line(text: &str) -> Result<Option<ParameterSpace>> {
    for (i, line) in text.lines().enumerate() {
        let Some(rest) = line.strip_prefix("#bounds") else {
            continue;
        };
        let bad = |reason: &str| Error::MalformedRow {
            line: i + 1,
            reason: reason.to_string(),
        };
        let vals = rest
            .split(',')
            .filter(|c| !c.trim().is_empty())
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("non-numeric bound"))?;
        if vals.is_empty() || vals.len() % 2 != 0 {
            return Err(bad("#bounds needs lower,upper pairs"));
        }
        let lower = vals.iter().step_by(2).copied().collect();
        let upper = vals.iter().skip(1).step_by(2).copied().collect();
        return ParameterSpace::new(lower, upper).map(Some);
    }
    Ok(None)
}

/// Splits the usable samples into `k` disjoint folds whose sizes differ by
/// at most one. Indices refer to positions in `set`.
pub fn split_folds(set: &SampleSet, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    split_indices(&set.usable_indices(), k, seed)
}

pub fn split_indices(indices: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = indices.len();
    if k < 2 || k > n {
        return Err(Error::FoldsOutOfRange { k, n });
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space2() -> ParameterSpace {
        ParameterSpace::new(vec![-1.0, 0.0], vec![1.0, 4.0]).unwrap()
    }

    fn pt(a: f64, b: f64) -> UnitPoint {
        UnitPoint::new(vec![a, b]).unwrap()
    }

    fn sample_set() -> SampleSet {
        let mut s = SampleSet::new(space2(), 1);
        s.add_sample(Sample::new(pt(0.1, 0.2), 1.5, vec![-0.25], Some(vec![0.5, -1.0 / 3.0]), Tag::Doe))
            .unwrap();
        s.add_sample(Sample::new(pt(0.7, 0.9), -2.0e-300, vec![3.0], None, Tag::Doe))
            .unwrap();
        s.add_sample(Sample::failed(pt(0.4, 0.4), 1, Tag::Ego)).unwrap();
        s
    }

    #[test]
    fn counts_and_dedup() {
        let mut s = SampleSet::new(space2(), 0);
        s.add_sample(Sample::new(pt(0.5, 0.5), 1.0, vec![], None, Tag::Doe)).unwrap();
        assert_eq!(s.n_ok(), 1);
        assert_eq!(s.n_grad(), 0);
        let dup = s.add_sample(Sample::new(pt(0.5, 0.5 + 1e-11), 2.0, vec![], None, Tag::Doe));
        assert!(matches!(dup, Err(Error::DuplicatePoint(0))));
        s.add_sample(Sample::new(pt(0.1, 0.5), 1.0, vec![], Some(vec![0.0, 1.0]), Tag::Doe))
            .unwrap();
        assert_eq!((s.n_ok(), s.n_grad()), (2, 1));
        let wrong = s.add_sample(Sample::new(UnitPoint::new(vec![0.3]).unwrap(), 1.0, vec![], None, Tag::Doe));
        assert!(matches!(wrong, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let s = sample_set();
        let text = s.to_csv_string(&["# test".into()]).unwrap();
        let back = SampleSet::from_csv_str(&text, None).unwrap();
        assert_eq!(back, s);
        assert!(text.contains(",3.0000000000000000e0,0,,,gradient_failed,doe\n"));
        assert!(text.contains(",,,0,,,failed,ego\n"));
    }

    #[test]
    fn missing_gradient_cells() {
        let text = "#bounds,0,1\nx1,y,has_grad,g1,status,tag\n0.5,2.0,0,,ok,doe\n";
        let s = SampleSet::from_csv_str(text, None).unwrap();
        assert!(s.samples()[0].grad.is_none());
        assert_eq!(s.n_ok(), 1);
    }

    #[test]
    fn malformed_value() {
        let text = "#bounds,0,1\nx1,y,has_grad,g1,status,tag\n0.5,2.0,0,,ok,doe\n0.25,abc,0,,ok,doe\n";
        match SampleSet::from_csv_str(text, None) {
            Err(Error::MalformedRow { line: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_checks() {
        let text = "#bounds,0,1\nx1,z,has_grad,g1,status,tag\n";
        assert!(matches!(SampleSet::from_csv_str(text, None), Err(Error::HeaderMismatch(_))));
        let text = "#bounds,0,1\nx1,y,has_grad,g1,status,tag\n";
        let other = ParameterSpace::new(vec![0.0], vec![2.0]).unwrap();
        assert!(matches!(SampleSet::from_csv_str(text, Some(&other)), Err(Error::HeaderMismatch(_))));
    }

    #[test]
    fn folds_balanced() {
        let mut s = SampleSet::new(ParameterSpace::unit(1).unwrap(), 0);
        for i in 0..7 {
            s.add_sample(Sample::new(UnitPoint::new(vec![i as f64 / 7.0]).unwrap(), 0.0, vec![], None, Tag::Doe))
                .unwrap();
        }
        let folds = split_folds(&s, 3, 9).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 3]);
        assert_eq!(split_folds(&s, 3, 9).unwrap(), folds);
        assert!(split_folds(&s, 1, 0).is_err());
        assert!(split_folds(&s, 8, 0).is_err());
    }
}
