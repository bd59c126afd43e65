mod common;

use common::{fd_gradient, stratified};
use gradboost::evaluator::Builtin;
use gradboost::space::{lhs_sample, lhs_unit, ParameterSpace};
use gradboost::Error;
use proptest::prelude::*;

#[test]
fn lhs_strata_exhaustive() {
    for n in [4, 16, 64] {
        for d in [1, 2, 8] {
            for seed in 0..5 {
                let pts = lhs_unit(d, n, seed);
                assert_eq!(pts.len(), n);
                assert!(stratified(&pts, d), "n={n} d={d} seed={seed}");
            }
        }
    }
}

#[test]
fn lhs_same_seed_same_design() {
    assert_eq!(lhs_unit(3, 10, 42), lhs_unit(3, 10, 42));
    assert_ne!(lhs_unit(3, 10, 42), lhs_unit(3, 10, 43));
}

#[test]
fn lhs_sample_lies_in_the_box() {
    let space = ParameterSpace::new(vec![-5.0, 10.0], vec![5.0, 11.0]).unwrap();
    for u in lhs_sample(&space, 30, 1) {
        let x = space.denormalize(&u);
        assert!((-5.0..=5.0).contains(&x[0]) && (10.0..=11.0).contains(&x[1]));
    }
}

#[test]
fn out_of_bounds_rejected_not_clipped() {
    let space = ParameterSpace::new(vec![0.0, -1.0], vec![2.0, 1.0]).unwrap();
    assert!(matches!(space.normalize(&[2.5, 0.0]), Err(Error::OutOfBounds { index: 0, .. })));
    assert!(matches!(space.normalize(&[1.0]), Err(Error::DimensionMismatch { .. })));
    assert!(ParameterSpace::new(vec![1.0], vec![1.0]).is_err());
    assert!(ParameterSpace::new(vec![0.0], vec![f64::INFINITY]).is_err());
}

#[test]
fn scaled_gradient_matches_fd_in_unit_coordinates() {
    let space = ParameterSpace::new(vec![-2.0, -1.0, 0.5], vec![2.0, 3.0, 1.5]).unwrap();
    for u in lhs_unit(3, 10, 9) {
        let raw = Builtin::Rosenbrock.eval(&space.denormalize(&u)).unwrap().1;
        let scaled = space.scale_gradient(&raw).unwrap();
        let fd = fd_gradient(|v| Builtin::Rosenbrock.eval(&space.denormalize(v)).unwrap().0, &u, 1e-6);
        for (a, b) in scaled.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
        }
        let back = space.unscale_gradient(&scaled).unwrap();
        for (a, b) in back.iter().zip(&raw) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

proptest! {
    #[test]
    fn lhs_stratified_for_any_seed(n in 1usize..40, d in 1usize..6, seed in any::<u64>()) {
        prop_assert!(stratified(&lhs_unit(d, n, seed), d));
    }

    #[test]
    fn normalize_round_trip(lo in -1e3f64..1e3, w in 1e-3f64..1e3, t in 0.0f64..=1.0) {
        let space = ParameterSpace::new(vec![lo], vec![lo + w]).unwrap();
        let x = lo + t * w;
        let u = space.normalize(&[x]).unwrap();
        prop_assert!((0.0..=1.0).contains(&u[0]));
        let back = space.denormalize(&u)[0];
        prop_assert!((back - x).abs() <= 1e-12 * (1.0 + x.abs() + w));
    }
}
