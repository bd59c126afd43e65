//! Bounded derivative-free local search shared by likelihood training and
//! acquisition maximization.

/// Compass (coordinate pattern) search that maximizes `f` inside a box.
///
/// Each sweep probes `x ± step·e_k` for every coordinate and moves to the
/// first probe that improves the best value by more than `tol`. A sweep
/// without a move halves the step; the search stops once the step drops
/// below `min_step` or `max_evals` evaluations are spent.
#[derive(Debug, Clone, Copy)]
pub struct PatternSearch {
    pub initial_step: f64,
    pub min_step: f64,
    pub tol: f64,
    pub max_evals: usize,
}

impl PatternSearch {
    /// `f` returns `None` where it is undefined; such points are never
    /// accepted. Returns the best point and value found, starting from
    /// `(x0, f0)`.
    pub fn maximize<F>(&self, mut f: F, x0: Vec<f64>, f0: f64, lower: &[f64], upper: &[f64]) -> (Vec<f64>, f64)
    where
        F: FnMut(&[f64]) -> Option<f64>,
    {
        let mut x = x0;
        let mut fx = f0;
        let mut step = self.initial_step;
        let mut evals = 0usize;
        let mut probe = x.clone();
        while step >= self.min_step && evals < self.max_evals {
            let mut moved = false;
            for k in 0..x.len() {
                for dir in [1.0, -1.0] {
                    let cand = (x[k] + dir * step).clamp(lower[k], upper[k]);
                    if cand == x[k] {
                        continue;
                    }
                    probe.copy_from_slice(&x);
                    probe[k] = cand;
                    evals += 1;
                    if let Some(v) = f(&probe) {
                        if v > fx + self.tol {
                            x[k] = cand;
                            fx = v;
                            moved = true;
                            break;
                        }
                    }
                    if evals >= self.max_evals {
                        return (x, fx);
                    }
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        (x, fx)
    }
}
