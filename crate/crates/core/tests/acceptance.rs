//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::{brute_cv, brute_nearest, fd_gradient, gauss, l1, lhs_set, sine_1d, stratified, unit_set};
use gradboost::aggregation::{tune_rho, AggregationModel, RhoGrid};
use gradboost::config::{EvaluatorSpec, RunConfig};
use gradboost::crossval::{builtin_dataset, run_benchmark, BenchmarkConfig};
use gradboost::ego::{expected_improvement, run_ego, Problem};
use gradboost::evaluator::{Builtin, NoiseSpec};
use gradboost::gek::{correlation_hessian_cross, correlation_jacobian, GekConfig, GekModel};
use gradboost::kriging::{CorrelationParams, KrigingConfig, KrigingModel};
use gradboost::nearest::L1Tree;
use gradboost::samples::{Sample, SampleSet, Tag};
use gradboost::space::{lhs_sample, lhs_unit, ParameterSpace};
use gradboost::surrogate::{ModelKind, Surrogate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn shipped(name: &str) -> RunConfig {
    let text = fs::read_to_string(configs_dir().join(name)).unwrap();
    RunConfig::parse(&text, &[]).unwrap()
}

fn kriging_interpolation() -> Outcome {
    let start = Instant::now();
    let space = ParameterSpace::new(vec![-5.0, 0.0], vec![10.0, 15.0]).unwrap();
    let mut data = SampleSet::new(space.clone(), 0);
    for u in lhs_sample(&space, 20, 0) {
        let y = Builtin::Branin.eval(&space.denormalize(&u)).unwrap().0;
        data.add_sample(Sample::new(u, y, vec![], None, Tag::Doe)).unwrap();
    }
    let model = KrigingModel::train(&data, &KrigingConfig::default()).unwrap();
    let ymax = data.samples().iter().map(|s| s.y.abs()).fold(0.0, f64::max);
    let err = data
        .samples()
        .iter()
        .map(|s| (model.predict_mean(&s.x) - s.y).abs())
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let bound = 1e-8 * (1.0 + ymax);
    check(
        model.nugget() == 0.0 && err <= bound && secs < 5.0,
        format!("nugget {} max error {err:.3e} (bound {bound:.3e}) in {secs:.2} s", model.nugget()),
    )
}

fn predictor_limits() -> Outcome {
    let data = lhs_set(2, 10, 1, |x| ((5.0 * x[0]).sin() + x[1], vec![0.0; 2]), |_| false);
    let model = KrigingModel::train(&data, &KrigingConfig::default()).unwrap();
    let far = (model.predict_mean(&[1e4, -1e4]) - model.beta0()).abs();
    let single = unit_set(2, &[(vec![0.3, 0.6], 4.25, None)]);
    let flat = KrigingModel::fit(&single, CorrelationParams::gaussian(vec![2.0, 2.0])).unwrap();
    let spread = lhs_unit(2, 200, 0)
        .iter()
        .map(|x| (flat.predict_mean(x) - 4.25).abs())
        .fold(0.0, f64::max);
    check(
        far <= 1e-10 && spread <= 1e-12,
        format!("far field |mean - beta0| {far:.3e}; single sample max deviation {spread:.3e}"),
    )
}

fn random_pair(rng: &mut ChaCha8Rng, d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let a = (0..d).map(|_| rng.random::<f64>()).collect();
    let b = (0..d).map(|_| rng.random::<f64>()).collect();
    let theta = (0..d).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
    (a, b, theta)
}

fn gek_kernel_derivatives() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_j: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=4);
        let (xi, xj, theta) = random_pair(&mut rng, d);
        let jac = correlation_jacobian(&xi, &xj, &CorrelationParams::gaussian(theta.clone())).unwrap();
        let fd = fd_gradient(|v| gauss(&xi, v, &theta), &xj, 1e-6);
        let diff: Vec<f64> = jac.iter().zip(&fd).map(|(a, b)| a - b).collect();
        worst_j = worst_j.max(norm(&diff) / norm(&fd).max(1e-3));
    }
    let h = 1e-4;
    let mut worst_h: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let (xi, xj, theta) = random_pair(&mut rng, d);
        let hess = correlation_hessian_cross(&xi, &xj, &CorrelationParams::gaussian(theta.clone())).unwrap();
        for l in 0..d {
            let row = |s: f64| {
                let mut a = xi.clone();
                a[l] += s;
                fd_gradient(|v| gauss(&a, v, &theta), &xj, h)
            };
            let (up, down) = (row(h), row(-h));
            let fd: Vec<f64> = up.iter().zip(&down).map(|(u, w)| (u - w) / (2.0 * h)).collect();
            let diff: Vec<f64> = (0..d).map(|m| hess[(l, m)] - fd[m]).collect();
            worst_h = worst_h.max(norm(&diff) / norm(&fd).max(1e-3));
        }
    }
    check(
        worst_j <= 1e-6 && worst_h <= 1e-4,
        format!("worst relative error: jacobian {worst_j:.3e}, cross-hessian {worst_h:.3e}"),
    )
}

fn gek_gradient_reproduction() -> Outcome {
    let data = lhs_set(1, 6, 0, sine_1d, |_| true);
    let model = GekModel::train(&data, &GekConfig::default()).unwrap();
    let worst = data
        .samples()
        .iter()
        .map(|s| {
            let fd = fd_gradient(|v| model.predict(v), &s.x, 1e-4)[0];
            let g = s.grad.as_ref().unwrap()[0];
            (fd - g).abs() / g.abs().max(1.0)
        })
        .fold(0.0, f64::max);
    check(worst <= 1e-4, format!("worst relative gradient error {worst:.3e} over 6 samples"))
}

fn gek_linear_exactness() -> Outcome {
    let f = |x: &[f64]| 1.5 * x[0] - 2.0 * x[1] + 0.25;
    let rows: Vec<_> = [[0.1, 0.2], [0.7, 0.4], [0.3, 0.9]]
        .iter()
        .map(|x| (x.to_vec(), f(x), Some(vec![1.5, -2.0])))
        .collect();
    let data = unit_set(2, &rows);
    let model = GekModel::train(&data, &GekConfig::default()).unwrap();
    let err = lhs_unit(2, 200, 1)
        .iter()
        .map(|x| (model.predict(x) - f(x)).abs())
        .fold(0.0, f64::max);
    check(
        err <= 1e-6,
        format!("max hold-out error {err:.3e} at theta {:?}", model.params().theta),
    )
}

fn smooth(x: &[f64]) -> (f64, Vec<f64>) {
    let y = (3.0 * x[0]).sin() + x[1] * x[1] - 0.5 * x[0] * x[1];
    (y, vec![3.0 * (3.0 * x[0]).cos() - 0.5 * x[1], 2.0 * x[1] - 0.5 * x[0]])
}

fn aggregation_with(data: &SampleSet, rho: f64) -> AggregationModel {
    let primal = KrigingModel::fit(data, CorrelationParams::gaussian(vec![2.0, 2.0])).unwrap();
    AggregationModel::from_primal(primal, rho).unwrap()
}

fn aggregation_algebra() -> Outcome {
    let data = lhs_set(2, 8, 3, smooth, |i| i % 2 == 0);
    let base = aggregation_with(&data, 1.0);
    let at_samples = data
        .samples()
        .iter()
        .filter(|s| s.grad.is_some())
        .all(|s| base.alpha(&s.x).unwrap() == 1.0);

    let probe = [0.37, 0.61];
    let (idx, xg) = base.nearest_gradient_sample(&probe).unwrap();
    let g = data.samples()[idx].grad.clone().unwrap();
    let spread = l1(&probe, &xg) * g.iter().map(|v| v.abs()).sum::<f64>();
    let mid = aggregation_with(&data, std::f64::consts::LN_2 / spread).predict_parts(&probe);
    let mid_err = (mid.value - 0.5 * (mid.dual.unwrap() + mid.primal)).abs();

    let steep = aggregation_with(&data, 1e3);
    let mut vanishing = 0;
    let mut primal_err: f64 = 0.0;
    for x in lhs_unit(2, 100, 7) {
        let p = steep.predict_parts(&x);
        if p.alpha < 1e-12 {
            vanishing += 1;
            primal_err = primal_err.max((p.value - p.primal).abs() / (1.0 + p.primal.abs()));
        }
    }

    let hand = unit_set(2, &[(vec![0.0, 0.0], 0.0, Some(vec![1.0, 2.0])), (vec![0.9, 0.1], 1.0, None)]);
    let primal = KrigingModel::fit(&hand, CorrelationParams::gaussian(vec![1.0, 1.0])).unwrap();
    let a = AggregationModel::from_primal(primal, 1.0).unwrap().alpha(&[1.0, 1.0]).unwrap();
    let hand_err = (a - (-6.0f64).exp()).abs();

    check(
        at_samples && mid_err <= 1e-12 && vanishing > 0 && primal_err <= 1e-10 && hand_err <= 1e-12,
        format!(
            "alpha at gradient samples is 1: {at_samples}; midpoint error {mid_err:.3e}; \
             {vanishing} vanishing-alpha points, max primal deviation {primal_err:.3e}; alpha {a:.8} (error {hand_err:.3e})"
        ),
    )
}

fn cv_oracle_equivalence() -> Outcome {
    let data = lhs_set(2, 15, 21, smooth, |i| i % 3 != 1);
    let theta = [6.0, 4.0];
    let grid = RhoGrid::default().values();
    let sel = tune_rho(&data, &CorrelationParams::gaussian(theta.to_vec()), &grid, 5, 9).unwrap();
    let oracle = brute_cv(&data, &theta, &grid, 5, 9);
    let worst = sel
        .cv_errors
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    check(
        sel.cv_errors.len() == grid.len() && worst <= 1e-10,
        format!("{} rho values, worst CV RMSE difference {worst:.3e}", grid.len()),
    )
}

fn ei_closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let mu: f64 = rng.random_range(-2.0..2.0);
        let s: f64 = rng.random_range(0.1..2.0);
        let f_min = mu + s * rng.random_range(-1.5..2.5);
        let mut mc_rng = ChaCha8Rng::seed_from_u64(100 + i);
        let draws = 1_000_000;
        let mc = (0..draws)
            .map(|_| {
                let z: f64 = mc_rng.sample(StandardNormal);
                (f_min - (mu + s * z)).max(0.0)
            })
            .sum::<f64>()
            / draws as f64;
        let exact = expected_improvement(mu, s, f_min);
        worst = worst.max((exact - mc).abs() / exact);
    }
    let z0 = (expected_improvement(0.7, 1.0, 0.7) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs();
    let s0 = expected_improvement(0.7, 0.0, 3.0);
    check(
        worst <= 0.01 && z0 < 1e-15 && s0 == 0.0,
        format!("worst relative MC gap {worst:.3e}; z = 0 error {z0:.1e}; s = 0 value {s0}"),
    )
}

fn nearest_neighbor_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<Vec<f64>> = (0..60).map(|_| (0..3).map(|_| rng.random()).collect()).collect();
    let tree = L1Tree::new(pts.clone(), (0..60).collect());
    let mut mismatches = 0;
    for _ in 0..100 {
        let q: Vec<f64> = (0..3).map(|_| rng.random_range(-0.2..1.2)).collect();
        let (slot, _) = tree.nearest(&q).unwrap();
        mismatches += usize::from(tree.id(slot) != brute_nearest(&pts, &q));
    }
    let lattice: Vec<Vec<f64>> = (0..25).rev().map(|k| vec![(k / 5) as f64 / 4.0, (k % 5) as f64 / 4.0]).collect();
    let tree = L1Tree::new(lattice.clone(), (0..25).collect());
    let mut tie_mismatches = 0;
    let mut ties = 0;
    for _ in 0..100 {
        let q = [rng.random_range(0..9) as f64 / 8.0, rng.random_range(0..9) as f64 / 8.0];
        let want = brute_nearest(&lattice, &q);
        ties += usize::from(lattice.iter().filter(|p| l1(p, &q) == l1(&lattice[want], &q)).count() > 1);
        tie_mismatches += usize::from(tree.id(tree.nearest(&q).unwrap().0) != want);
    }
    check(
        mismatches == 0 && tie_mismatches == 0,
        format!("random queries: {mismatches}/100 mismatches; lattice queries: {tie_mismatches}/100 mismatches ({ties} ties)"),
    )
}

fn problem_of(cfg: &RunConfig) -> Problem {
    Problem {
        space: cfg.space.clone(),
        evaluator: cfg.black_box().unwrap(),
        n_constraints: cfg.n_constraints,
        noise: cfg.noise(),
    }
}

fn ego_regression() -> Outcome {
    let sphere = shipped("sphere.cfg");
    let start = Instant::now();
    let report = run_ego(&problem_of(&sphere), &sphere.ego()).unwrap();
    let t1 = start.elapsed().as_secs_f64();
    let best1 = report.best().unwrap().y;

    let constrained = shipped("constrained.cfg");
    let start = Instant::now();
    let report = run_ego(&problem_of(&constrained), &constrained.ego()).unwrap();
    let t2 = start.elapsed().as_secs_f64();
    let best = report.best().unwrap();
    let feasible = best.x[0] >= 0.5;
    check(
        best1 <= 1e-2 && t1 < 60.0 && feasible && (best.y - 0.5).abs() <= 0.05 && t2 < 60.0,
        format!(
            "sphere best {best1:.3e} in {t1:.2} s; constrained best {:.6} at x1 = {:.6} in {t2:.2} s",
            best.y, best.x[0]
        ),
    )
}

fn noise_robustness() -> Outcome {
    let cfg = shipped("rosenbrock-benchmark.cfg");
    let EvaluatorSpec::Builtin(function) = cfg.evaluator else {
        return Err("benchmark config must name a builtin".into());
    };
    let bench = BenchmarkConfig {
        function,
        space: cfg.space.clone(),
        n_samples: cfg.benchmark_samples,
        conditions: cfg.benchmark_conditions.clone(),
        kinds: cfg.benchmark_models.clone(),
        seeds: vec![cfg.seed],
        folds: cfg.k_folds,
        model: cfg.surrogate(),
    };
    let rows = run_benchmark(&bench).unwrap();
    let rmse = |level: f64, kind: ModelKind| {
        rows.iter()
            .find(|r| r.condition.level == level && r.kind == kind)
            .map(|r| r.rmse)
            .unwrap()
    };
    let (k0, g0) = (rmse(0.0, ModelKind::Kriging), rmse(0.0, ModelKind::GekDirect));
    let (g5, a5) = (rmse(0.5, ModelKind::GekDirect), rmse(0.5, ModelKind::Aggregation));
    check(
        g0 <= k0 && a5 <= g5,
        format!("seed {}: noise 0 gek-direct {g0:.4} vs kriging {k0:.4}; noise 0.5 aggregation {a5:.4} vs gek-direct {g5:.4}", cfg.seed),
    )
}

const SMALL_BENCH: &str = "lower = -2, -2\nupper = 2, 2\nevaluator = builtin:rosenbrock\nseed = 0\nk_folds = 3\n\
benchmark_samples = 12\nbenchmark_conditions = 0:0, 0.5:0.2\nbenchmark_models = kriging, gek-direct, aggregation\nbenchmark_extra_seeds = 1\n";

fn cli_outputs(dir: &Path, data_dir: &Path) -> Result<Vec<(String, String)>, String> {
    let bin = env!("CARGO_BIN_EXE_gradboost-acceptance-cli");
    let cfg = configs_dir().join("sphere.cfg");
    let bench = data_dir.join("bench.cfg");
    let points = data_dir.join("points.csv");
    let data = dir.join("design.csv");
    let d = dir.to_str().unwrap();
    let c = cfg.to_str().unwrap();
    let steps: Vec<Vec<String>> = [
        vec!["--config", c, "--out", d, "doe"],
        vec!["--config", c, "--out", d, "train", "--data", data.to_str().unwrap()],
        vec!["--out", d, "predict", "--model", dir.join("model.txt").to_str().unwrap(), "--points", points.to_str().unwrap()],
        vec!["--config", c, "--out", d, "cv", "--data", data.to_str().unwrap()],
        vec!["--config", c, "--out", d, "optimize"],
        vec!["--config", bench.to_str().unwrap(), "--out", d, "benchmark"],
    ]
    .iter()
    .map(|v| v.iter().map(|s| s.to_string()).collect())
    .collect();
    for (i, args) in steps.iter().enumerate() {
        let status = Command::new(bin).args(args).output().map_err(|e| e.to_string())?.status;
        if !status.success() {
            return Err(format!("{} exited with {status}", args.last().unwrap()));
        }
        if i == 0 {
            fs::rename(dir.join("samples.csv"), &data).map_err(|e| e.to_string())?;
        }
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    Ok(files
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).unwrap();
            let body = text.lines().skip(1).collect::<Vec<_>>().join("\n");
            (p.file_name().unwrap().to_string_lossy().into_owned(), body)
        })
        .collect())
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bench.cfg"), SMALL_BENCH).unwrap();
    fs::write(tmp.path().join("points.csv"), "x1,x2\n0.25,-1\n1,1.5\n-1.75,0\n").unwrap();
    let a = cli_outputs(&tmp.path().join("a"), tmp.path())?;
    let b = cli_outputs(&tmp.path().join("b"), tmp.path())?;
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    check(
        a.len() == b.len() && a.len() == 11 && differing.is_empty(),
        format!("{} output files compared, differing: {differing:?}", a.len()),
    )
}

fn lhs_stratification() -> Outcome {
    let mut failures = Vec::new();
    for n in [4, 16, 64] {
        for d in [1, 2, 8] {
            if !stratified(&lhs_unit(d, n, 0), d) {
                failures.push((n, d));
            }
        }
    }
    check(failures.is_empty(), format!("9 (n, d) cases, failing: {failures:?}"))
}

fn partial_gradient_path() -> Outcome {
    let space = ParameterSpace::new(vec![-2.0; 2], vec![2.0; 2]).unwrap();
    let noise = NoiseSpec::new(0.0, 1.0, 0).unwrap();
    let data = builtin_dataset(Builtin::Rosenbrock, &space, 12, 0, Some(&noise)).unwrap();
    let cfg = gradboost::surrogate::SurrogateConfig::default();
    let kriging = Surrogate::train(&data, &cfg.with_kind(ModelKind::Kriging)).unwrap().model;
    let agg = Surrogate::train(&data, &cfg.with_kind(ModelKind::Aggregation)).unwrap().model;
    let gap = lhs_unit(2, 200, 3)
        .iter()
        .map(|x| (agg.mean(x) - kriging.mean(x)).abs())
        .fold(0.0, f64::max);
    let gek = Surrogate::train(&data, &cfg.with_kind(ModelKind::GekDirect)).unwrap();
    let fell_back = gek.model.kind() == ModelKind::Kriging && !gek.warnings.is_empty();
    check(
        data.n_grad() == 0 && gap <= 1e-12 && fell_back,
        format!(
            "{} gradient samples; aggregation vs kriging max gap {gap:.3e}; gek-direct trained as {} with warning {:?}",
            data.n_grad(),
            gek.model.kind(),
            gek.warnings.first()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 14] = [
        ("kriging interpolation", kriging_interpolation),
        ("predictor limits", predictor_limits),
        ("gek kernel derivatives", gek_kernel_derivatives),
        ("gek gradient reproduction", gek_gradient_reproduction),
        ("gek exactness on linear targets", gek_linear_exactness),
        ("aggregation algebra", aggregation_algebra),
        ("cv oracle equivalence", cv_oracle_equivalence),
        ("expected improvement closed form", ei_closed_form),
        ("nearest-neighbor oracle", nearest_neighbor_oracle),
        ("ego regression", ego_regression),
        ("noise-robustness ordering", noise_robustness),
        ("cli determinism", cli_determinism),
        ("lhs stratification", lhs_stratification),
        ("partial-gradient path", partial_gradient_path),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
