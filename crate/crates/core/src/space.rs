//! Box-bounded design domain and its map onto the unit hypercube.
//!
//! Every model in the crate works in normalized `[0, 1]^d` coordinates.
//! Raw designs are mapped in with [`ParameterSpace::normalize`] and raw
//! gradients are chain-rule scaled with [`ParameterSpace::scale_gradient`].

use std::ops::Deref;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const BOUNDS_TOL: f64 = 1e-12;

/// Axis-aligned design domain `lower[k] <= x[k] <= upper[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
    names: Option<Vec<String>>,
}

impl ParameterSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidSpace("dimension must be at least 1".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidSpace(format!(
                    "bounds of coordinate {k} must satisfy lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self {
            lower,
            upper,
            names: None,
        })
    }

    /// The unit hypercube of dimension `dim`.
    pub fn unit(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: names.len(),
            });
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    fn width(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// Maps a raw design onto the unit hypercube. Coordinates outside the
    /// box by more than 1e-12 are rejected; those within the tolerance are
    /// snapped onto the boundary.
    pub fn normalize(&self, x: &[f64]) -> Result<UnitPoint> {
        self.check_dim(x.len())?;
        let mut coords = Vec::with_capacity(x.len());
        for (k, &v) in x.iter().enumerate() {
            let (lo, hi) = (self.lower[k], self.upper[k]);
            if !v.is_finite() || v < lo - BOUNDS_TOL || v > hi + BOUNDS_TOL {
                return Err(Error::OutOfBounds {
                    index: k,
                    value: v,
                    lower: lo,
                    upper: hi,
                });
            }
            coords.push(((v - lo) / self.width(k)).clamp(0.0, 1.0));
        }
        Ok(UnitPoint(coords))
    }

    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        debug_assert_eq!(u.len(), self.dim());
        u.iter()
            .enumerate()
            .map(|(k, &c)| self.lower[k] + c * self.width(k))
            .collect()
    }

    /// Chain rule for `f(denormalize(u))`: `d/du_k = df/dx_k * width_k`.
    pub fn scale_gradient(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(g.len())?;
        Ok(g.iter()
            .enumerate()
            .map(|(k, &v)| v * self.width(k))
            .collect())
    }

    /// Inverse of [`scale_gradient`](Self::scale_gradient).
    pub fn unscale_gradient(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(g.len())?;
        Ok(g.iter()
            .enumerate()
            .map(|(k, &v)| v / self.width(k))
            .collect())
    }
}

/// A point of the unit hypercube.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitPoint(Vec<f64>);

impl UnitPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        for (k, &c) in coords.iter().enumerate() {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::OutOfBounds {
                    index: k,
                    value: c,
                    lower: 0.0,
                    upper: 1.0,
                });
            }
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for UnitPoint {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for UnitPoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Latin Hypercube design of `n` points in `dim` dimensions.
///
/// Each column is an independent random permutation of the `n` strata
/// `[i/n, (i+1)/n)`, with a uniform offset inside the stratum.
pub fn lhs_unit(dim: usize, n: usize, seed: u64) -> Vec<UnitPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns = Vec::with_capacity(dim);
    for _ in 0..dim {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let col: Vec<f64> = perm
            .into_iter()
            .map(|stratum| {
                let offset: f64 = rng.random();
                // stays strictly inside the stratum even after rounding
                ((stratum as f64 + offset) / n as f64).min((stratum as f64 + 1.0) / n as f64 - f64::EPSILON)
            })
            .collect();
        columns.push(col);
    }
    (0..n)
        .map(|i| UnitPoint(columns.iter().map(|c| c[i]).collect()))
        .collect()
}

pub fn lhs_sample(space: &ParameterSpace, n: usize, seed: u64) -> Vec<UnitPoint> {
    lhs_unit(space.dim(), n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym2() -> ParameterSpace {
        ParameterSpace::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap()
    }

    #[test]
    fn bounds_map_to_corners() {
        let s = sym2();
        assert_eq!(s.normalize(&[-2.0, -2.0]).unwrap().coords(), &[0.0, 0.0]);
        assert_eq!(s.normalize(&[2.0, 2.0]).unwrap().coords(), &[1.0, 1.0]);
        assert_eq!(s.normalize(&[0.0, 0.0]).unwrap().coords(), &[0.5, 0.5]);
        assert_eq!(s.denormalize(&[0.0, 0.0]), vec![-2.0, -2.0]);
        assert_eq!(s.denormalize(&[1.0, 1.0]), vec![2.0, 2.0]);
        assert_eq!(s.denormalize(&[0.5, 0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn out_of_bounds_is_rejected() {
        let s = sym2();
        match s.normalize(&[0.0, 2.1]) {
            Err(Error::OutOfBounds { index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(s.normalize(&[2.0 + 1e-13, 0.0]).is_ok());
        assert!(s.normalize(&[0.0]).is_err());
    }

    #[test]
    fn invalid_spaces() {
        assert!(ParameterSpace::new(vec![], vec![]).is_err());
        assert!(ParameterSpace::new(vec![1.0], vec![1.0]).is_err());
        assert!(ParameterSpace::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn gradient_scaling() {
        let unit = ParameterSpace::unit(3).unwrap();
        assert_eq!(unit.scale_gradient(&[1.0, -2.0, 3.0]).unwrap(), vec![1.0, -2.0, 3.0]);
        let s = ParameterSpace::new(vec![0.0, 5.0], vec![2.0, 7.0]).unwrap();
        assert_eq!(s.scale_gradient(&[1.0, 1.0]).unwrap(), vec![2.0, 2.0]);
        assert_eq!(s.scale_gradient(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(s.scale_gradient(&[1.0]).is_err());
    }

    #[test]
    fn lhs_four_by_two() {
        let pts = lhs_unit(2, 4, 11);
        for k in 0..2 {
            let mut strata: Vec<usize> = pts.iter().map(|p| (p[k] * 4.0).floor() as usize).collect();
            strata.sort();
            assert_eq!(strata, vec![0, 1, 2, 3]);
        }
        assert_eq!(lhs_unit(2, 4, 11), pts);
        let one = lhs_unit(3, 1, 5);
        assert_eq!(one.len(), 1);
        assert!(one[0].iter().all(|c| (0.0..1.0).contains(c)));
    }
}
