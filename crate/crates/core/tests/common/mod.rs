#![allow(dead_code)]

use gradboost::samples::{split_folds, Sample, SampleSet, Tag};
use gradboost::space::{lhs_unit, ParameterSpace, UnitPoint};
use nalgebra::{DMatrix, DVector};

/// `(x, y, gradient)` in unit coordinates.
pub type Row = (Vec<f64>, f64, Option<Vec<f64>>);

/// Builds a sample set in the unit cube from rows.
pub fn unit_set(d: usize, rows: &[Row]) -> SampleSet {
    let mut set = SampleSet::new(ParameterSpace::unit(d).unwrap(), 0);
    for (x, y, g) in rows {
        set.add_sample(Sample::new(UnitPoint::new(x.clone()).unwrap(), *y, vec![], g.clone(), Tag::Doe))
            .unwrap();
    }
    set
}

/// LHS data of `f` on the unit cube; `with_grad(i)` selects which samples
/// keep their gradient.
pub fn lhs_set<F, G>(d: usize, n: usize, seed: u64, f: F, with_grad: G) -> SampleSet
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
    G: Fn(usize) -> bool,
{
    let rows: Vec<_> = lhs_unit(d, n, seed)
        .into_iter()
        .enumerate()
        .map(|(i, u)| {
            let (y, g) = f(&u);
            (u.to_vec(), y, with_grad(i).then_some(g))
        })
        .collect();
    unit_set(d, &rows)
}

pub fn sine_1d(x: &[f64]) -> (f64, Vec<f64>) {
    let w = 2.0 * std::f64::consts::PI;
    ((w * x[0]).sin(), vec![w * (w * x[0]).cos()])
}

/// Central finite-difference gradient.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[k] += h;
            b[k] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

/// Gaussian correlation written out directly.
pub fn gauss(a: &[f64], b: &[f64], theta: &[f64]) -> f64 {
    (-a.iter().zip(b).zip(theta).map(|((p, q), t)| t * (p - q) * (p - q)).sum::<f64>()).exp()
}

/// Ordinary Kriging mean by dense LU solves, for use as an oracle.
pub struct OracleKriging {
    points: Vec<Vec<f64>>,
    theta: Vec<f64>,
    beta0: f64,
    weights: DVector<f64>,
}

impl OracleKriging {
    pub fn new(points: Vec<Vec<f64>>, y: &[f64], theta: &[f64]) -> Self {
        let n = points.len();
        let r = DMatrix::from_fn(n, n, |i, j| gauss(&points[i], &points[j], theta));
        let lu = r.lu();
        let ones = DVector::from_element(n, 1.0);
        let yv = DVector::from_column_slice(y);
        let rinv_1 = lu.solve(&ones).unwrap();
        let rinv_y = lu.solve(&yv).unwrap();
        let beta0 = ones.dot(&rinv_y) / ones.dot(&rinv_1);
        let weights = lu.solve(&(yv - ones * beta0)).unwrap();
        Self {
            points,
            theta: theta.to_vec(),
            beta0,
            weights,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.beta0
            + self
                .points
                .iter()
                .zip(self.weights.iter())
                .map(|(p, w)| w * gauss(p, x, &self.theta))
                .sum::<f64>()
    }
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum()
}

/// Exhaustive nearest neighbor in L1; ties go to the first candidate.
pub fn brute_nearest(points: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..points.len() {
        if l1(&points[i], x) < l1(&points[best], x) {
            best = i;
        }
    }
    best
}

/// Every one of the `n` strata of every axis holds exactly one point.
pub fn stratified(points: &[impl AsRef<[f64]>], d: usize) -> bool {
    let n = points.len();
    (0..d).all(|k| {
        let mut hits = vec![0usize; n];
        for p in points {
            let s = ((p.as_ref()[k] * n as f64).floor() as usize).min(n - 1);
            hits[s] += 1;
        }
        hits.iter().all(|&h| h == 1)
    })
}

/// Brute-force ρ CV: each fold refit from scratch with dense LU solves and
/// an exhaustive nearest-gradient scan over the training fold.
pub fn brute_cv(data: &SampleSet, theta: &[f64], grid: &[f64], k: usize, seed: u64) -> Vec<f64> {
    let folds = split_folds(data, k, seed).unwrap();
    let mut residuals: Vec<Vec<f64>> = vec![Vec::new(); grid.len()];
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = (0..folds.len()).filter(|&g| g != f).flat_map(|g| folds[g].clone()).collect();
        let s = data.samples();
        let pts: Vec<Vec<f64>> = train.iter().map(|&i| s[i].x.to_vec()).collect();
        let y: Vec<f64> = train.iter().map(|&i| s[i].y).collect();
        let krig = OracleKriging::new(pts, &y, theta);
        let grads: Vec<usize> = train.iter().copied().filter(|&i| s[i].grad.is_some()).collect();
        let gpts: Vec<Vec<f64>> = grads.iter().map(|&i| s[i].x.to_vec()).collect();
        for &i in test {
            let x = &s[i].x;
            let primal = krig.predict(x);
            let gi = grads[brute_nearest(&gpts, x)];
            let g = s[gi].grad.as_ref().unwrap();
            let xg = &s[gi].x;
            let dual = s[gi].y + g.iter().zip(x.iter().zip(xg.iter())).map(|(g, (a, b))| g * (a - b)).sum::<f64>();
            let spread = l1(x, xg) * g.iter().map(|v| v.abs()).sum::<f64>();
            for (r, &rho) in grid.iter().enumerate() {
                let a = (-rho * spread).exp();
                residuals[r].push(a * dual + (1.0 - a) * primal - s[i].y);
            }
        }
    }
    residuals
        .iter()
        .map(|r| (r.iter().map(|e| e * e).sum::<f64>() / r.len() as f64).sqrt())
        .collect()
}
