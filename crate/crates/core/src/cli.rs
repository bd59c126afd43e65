//! Command-line front end: `doe`, `train`, `predict`, `cv`, `optimize` and
//! `benchmark`.
//!
//! Every output file starts with two comment lines. The first carries the
//! wall-clock timestamp and timings and is the only line that varies
//! between identical runs. The second names the tool version and the
//! config hash.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use crate::config::{EvaluatorSpec, RunConfig};
use crate::crossval::{builtin_dataset, cross_validate, run_benchmark, BenchmarkConfig, BenchmarkRow};
use crate::ego::{run_doe, run_ego, HistoryEntry, Problem};
use crate::error::{Error, Result};
use crate::modelfile;
use crate::numfmt::{fmt_f64, fmt_list};
use crate::samples::{parse_bounds_line, SampleSet, Status};
use crate::space::{ParameterSpace, UnitPoint};
use crate::surrogate::{ModelKind, Surrogate};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "gradboost", version, about = "Gradient-enhanced surrogate modeling and optimization")]
pub struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving the output files.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Replaces the `seed` key of the configuration.
    #[arg(long, global = true)]
    pub seed_override: Option<u64>,
    /// Replaces the `evaluator` key: `builtin:<name>` or `external:<command>`.
    #[arg(long, global = true)]
    pub evaluator: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the initial Latin hypercube design; writes samples.csv.
    Doe,
    /// Train the configured model; writes model.txt and fit_report.txt.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Predict at the points of a CSV file; writes predictions.csv.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        points: PathBuf,
    },
    /// K-fold cross validation of the configured model types; writes
    /// cv_report.csv and cv_folds.csv.
    Cv {
        #[arg(long)]
        data: PathBuf,
    },
    /// Full optimization loop; writes history.csv, summary.txt and samples.csv.
    Optimize,
    /// Paired gradient-noise benchmark; writes benchmark.csv and
    /// benchmark_trend.csv.
    Benchmark,
}

/// Result of a command that did not hit a hard error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some evaluations failed; partial results were written.
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 2,
        }
    }
}

/// Exit code for errors: usage, configuration and data problems alike.
pub const EXIT_ERROR: u8 = 1;

struct Header {
    hash: Option<u64>,
    started: SystemTime,
    clock: Instant,
}

impl Header {
    fn new(hash: Option<u64>) -> Self {
        Self {
            hash,
            started: SystemTime::now(),
            clock: Instant::now(),
        }
    }

    fn lines(&self, timings: &str) -> Vec<String> {
        let unix = self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let hash = self.hash.map_or_else(|| "none".to_string(), |h| format!("{h:016x}"));
        vec![
            format!(
                "# generated unix={unix} wall_seconds={:.3}{timings}",
                self.clock.elapsed().as_secs_f64()
            ),
            format!("# gradboost {VERSION} config={hash}"),
        ]
    }

    fn text(&self, timings: &str) -> String {
        let mut s = self.lines(timings).join("\n");
        s.push('\n');
        s
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config {
        line: 0,
        reason: "this command needs --config <path>".into(),
    })?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed_override {
        overrides.push(("seed", seed.to_string()));
    }
    if let Some(ev) = &cli.evaluator {
        overrides.push(("evaluator", ev.clone()));
    }
    RunConfig::parse(&text, &overrides)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn coord_names(space: &ParameterSpace) -> Vec<String> {
    match space.names() {
        Some(n) => n.to_vec(),
        None => (1..=space.dim()).map(|k| format!("x{k}")).collect(),
    }
}

fn problem(cfg: &RunConfig) -> Result<Problem> {
    Ok(Problem {
        space: cfg.space.clone(),
        evaluator: cfg.black_box()?,
        n_constraints: cfg.n_constraints,
        noise: cfg.noise(),
    })
}

fn count_failed(history: &[HistoryEntry]) -> usize {
    history.iter().filter(|e| e.status == Status::Failed).count()
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Doe => cmd_doe(cli),
        Command::Train { data } => cmd_train(cli, data),
        Command::Predict { model, points } => cmd_predict(cli, model, points),
        Command::Cv { data } => cmd_cv(cli, data),
        Command::Optimize => cmd_optimize(cli),
        Command::Benchmark => cmd_benchmark(cli),
    }
}

fn cmd_doe(cli: &Cli) -> Result<Outcome> {
    let cfg = load_config(cli)?;
    let header = Header::new(Some(cfg.hash()));
    prepare_out(&cli.out)?;
    let problem = problem(&cfg)?;
    let (samples, history) = run_doe(&problem, cfg.n_doe, cfg.seed_doe, cfg.workers);
    let path = cli.out.join("samples.csv");
    samples.save_csv(&path, &header.lines(""))?;
    let failed = count_failed(&history);
    println!(
        "doe: {} evaluations, {} with gradients, {failed} failed -> {}",
        history.len(),
        samples.n_grad(),
        path.display()
    );
    if failed > 0 {
        eprintln!("warning: {failed} of {} evaluations failed", history.len());
        return Ok(Outcome::Partial);
    }
    Ok(Outcome::Success)
}

/// Human-readable fit report: one `key = value` per line, then the CV
/// table for aggregation models.
pub fn fit_report(model: &Surrogate, requested: ModelKind, warnings: &[String]) -> String {
    let data = model.data();
    let p = model.params();
    let mut s = String::new();
    let _ = writeln!(s, "requested_model = {requested}");
    let _ = writeln!(s, "model = {}", model.kind());
    let _ = writeln!(s, "samples = {}", data.n_ok());
    let _ = writeln!(s, "gradient_samples = {}", data.n_grad());
    let _ = writeln!(s, "theta = {}", fmt_list(&p.theta, ", "));
    let _ = writeln!(s, "gamma = {}", fmt_list(&p.gamma, ", "));
    let _ = writeln!(s, "beta0 = {}", fmt_f64(model.beta0()));
    let _ = writeln!(s, "sigma2 = {}", fmt_f64(model.sigma2()));
    let _ = writeln!(
        s,
        "log_likelihood = {}",
        model.log_likelihood().map_or_else(|| "undefined".into(), fmt_f64)
    );
    let _ = writeln!(s, "nugget = {}", fmt_f64(model.nugget()));
    let _ = writeln!(s, "rcond_estimate = {}", fmt_f64(model.rcond_estimate()));
    match model {
        Surrogate::GekDirect(m) => {
            let _ = writeln!(s, "system_size = {}", m.system_size());
        }
        Surrogate::GekIndirect { step, model, .. } => {
            let _ = writeln!(s, "step = {}", fmt_f64(*step));
            let _ = writeln!(s, "pseudo_samples = {}", model.data().len() - data.n_ok());
        }
        _ => {}
    }
    for w in warnings {
        let _ = writeln!(s, "warning = {w}");
    }
    if let Surrogate::Aggregation(m) = model {
        let _ = writeln!(s, "rho = {}", fmt_f64(m.rho()));
        let _ = writeln!(
            s,
            "cv_note = theta frozen at the full-data fit; each fold refits only the linear system"
        );
        let _ = writeln!(s, "\nrho,cv_rmse");
        for (r, e) in m.rho_grid().iter().zip(m.cv_errors()) {
            let _ = writeln!(s, "{},{}", fmt_f64(*r), fmt_f64(*e));
        }
    }
    s
}

fn cmd_train(cli: &Cli, data: &Path) -> Result<Outcome> {
    let cfg = load_config(cli)?;
    let header = Header::new(Some(cfg.hash()));
    let set = SampleSet::load_csv(data, Some(&cfg.space))?;
    let trained = Surrogate::train(&set, &cfg.surrogate())?;
    prepare_out(&cli.out)?;
    for w in &trained.warnings {
        eprintln!("warning: {w}");
    }
    let lines = header.lines("");
    modelfile::save(&trained.model, &cli.out.join("model.txt"), &lines)?;
    let report = format!(
        "{}\n{}",
        lines.join("\n"),
        fit_report(&trained.model, cfg.model, &trained.warnings)
    );
    write(&cli.out, "fit_report.txt", &report)?;
    println!(
        "train: {} model on {} samples -> {}",
        trained.model.kind(),
        trained.model.data().n_ok(),
        cli.out.join("model.txt").display()
    );
    Ok(Outcome::Success)
}

/// Reads prediction points. With a `#bounds` line the coordinates are
/// normalized and the bounds must match `space`; otherwise they are raw.
/// The first `d` columns are the coordinates; others are ignored.
pub fn read_points(text: &str, space: &ParameterSpace) -> Result<Vec<UnitPoint>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let normalized = match parse_bounds_line(text)? {
        Some(b) => {
            if b.lower() != space.lower() || b.upper() != space.upper() {
                return Err(Error::HeaderMismatch("#bounds line disagrees with the model space".into()));
            }
            true
        }
        None => false,
    };
    let d = space.dim();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.len() < d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: header.len(),
        });
    }
    let names = coord_names(space);
    let default: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    let cols: Vec<&str> = header.iter().take(d).collect();
    if cols != names && cols != default {
        return Err(Error::HeaderMismatch(format!(
            "points need columns {} first",
            default.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() < d {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected at least {d} cells"),
            });
        }
        let x = (0..d)
            .map(|k| {
                rec[k].trim().parse::<f64>().map_err(|_| Error::MalformedRow {
                    line,
                    reason: format!("not a number: `{}`", &rec[k]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(if normalized {
            UnitPoint::new(x)?
        } else {
            space.normalize(&x)?
        });
    }
    Ok(out)
}

fn cmd_predict(cli: &Cli, model_path: &Path, points: &Path) -> Result<Outcome> {
    let hash = match &cli.config {
        Some(_) => Some(load_config(cli)?.hash()),
        None => None,
    };
    let header = Header::new(hash);
    let model = modelfile::load(model_path)?;
    let space = model.data().space().clone();
    let text = fs::read_to_string(points).map_err(|e| Error::io(points, e))?;
    let xs = read_points(&text, &space)?;
    prepare_out(&cli.out)?;

    let mut cols = coord_names(&space);
    cols.extend(["mean".into(), "variance".into()]);
    if model.kind() == ModelKind::Aggregation {
        cols.extend(["alpha".into(), "dual".into(), "primal".into()]);
    }
    let mut body = cols.join(",");
    body.push('\n');
    for u in &xs {
        let mut row: Vec<String> = space.denormalize(u).into_iter().map(fmt_f64).collect();
        match &model {
            Surrogate::Aggregation(m) => {
                let p = m.predict_parts(u);
                row.push(fmt_f64(p.value));
                row.push(fmt_f64(m.predict_variance(u)));
                row.push(fmt_f64(p.alpha));
                row.push(p.dual.map_or_else(String::new, fmt_f64));
                row.push(fmt_f64(p.primal));
            }
            other => {
                row.push(fmt_f64(other.mean(u)));
                row.push(fmt_f64(other.variance(u)));
            }
        }
        body.push_str(&row.join(","));
        body.push('\n');
    }
    let path = write(&cli.out, "predictions.csv", &(header.text("") + &body))?;
    println!("predict: {} points -> {}", xs.len(), path.display());
    Ok(Outcome::Success)
}

fn cmd_cv(cli: &Cli, data: &Path) -> Result<Outcome> {
    let cfg = load_config(cli)?;
    let header = Header::new(Some(cfg.hash()));
    let set = SampleSet::load_csv(data, Some(&cfg.space))?;
    let report = cross_validate(&set, &cfg.cv_models, &cfg.surrogate(), cfg.k_folds, cfg.seed_cv)?;
    prepare_out(&cli.out)?;

    let mut s = String::from("model,rmse");
    for f in 1..=report.k {
        let _ = write!(s, ",fold{f}");
    }
    s.push('\n');
    for row in &report.rows {
        let _ = writeln!(s, "{},{},{}", row.kind, fmt_f64(row.rmse), fmt_list(&row.fold_rmse, ","));
    }
    write(&cli.out, "cv_report.csv", &(header.text("") + &s))?;

    let mut assignment: Vec<(usize, usize)> = report
        .folds
        .iter()
        .enumerate()
        .flat_map(|(f, idx)| idx.iter().map(move |&i| (i, f + 1)))
        .collect();
    assignment.sort_unstable();
    let mut s = String::from("sample,fold\n");
    for (i, f) in assignment {
        let _ = writeln!(s, "{i},{f}");
    }
    write(&cli.out, "cv_folds.csv", &(header.text("") + &s))?;
    for row in &report.rows {
        println!("cv: {} rmse {}", row.kind, row.rmse);
    }
    Ok(Outcome::Success)
}

fn history_csv(history: &[HistoryEntry], space: &ParameterSpace, m: usize) -> String {
    let mut cols = vec!["index".to_string(), "tag".into(), "status".into()];
    cols.extend(coord_names(space));
    cols.push("y".into());
    cols.extend((1..=m).map(|j| format!("c{j}")));
    cols.extend(["has_grad".into(), "feasible".into(), "best_so_far".into()]);
    let mut s = cols.join(",");
    s.push('\n');
    for e in history {
        let ok = e.status != Status::Failed;
        let mut row = vec![e.index.to_string(), e.tag.to_string(), e.status.to_string()];
        row.extend(e.x.iter().map(|&v| fmt_f64(v)));
        row.push(if ok { fmt_f64(e.y) } else { String::new() });
        row.extend(e.constraints.iter().map(|&c| if ok { fmt_f64(c) } else { String::new() }));
        row.push(u8::from(e.has_grad).to_string());
        row.push(u8::from(e.feasible).to_string());
        row.push(e.best_so_far.map_or_else(String::new, fmt_f64));
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn cmd_optimize(cli: &Cli) -> Result<Outcome> {
    let cfg = load_config(cli)?;
    let header = Header::new(Some(cfg.hash()));
    prepare_out(&cli.out)?;
    let problem = problem(&cfg)?;
    let report = run_ego(&problem, &cfg.ego())?;
    let timings = format!(" doe_seconds={:.3} ego_seconds={:.3}", report.doe_seconds, report.ego_seconds);
    let head = header.text(&timings);

    write(&cli.out, "history.csv", &(head.clone() + &history_csv(&report.history, &cfg.space, cfg.n_constraints)))?;
    report.samples.save_csv(&cli.out.join("samples.csv"), &header.lines(&timings))?;

    let failed = count_failed(&report.history);
    let count = |st: Status| report.history.iter().filter(|e| e.status == st).count();
    let mut s = String::new();
    let _ = writeln!(s, "model = {}", report.model);
    let _ = writeln!(s, "n_doe = {}", cfg.n_doe);
    let _ = writeln!(s, "budget = {}", cfg.budget);
    let _ = writeln!(s, "budget_used = {}", report.budget_used);
    let _ = writeln!(s, "evaluations_ok = {}", count(Status::Ok));
    let _ = writeln!(s, "evaluations_gradient_failed = {}", count(Status::GradientFailed));
    let _ = writeln!(s, "evaluations_failed = {failed}");
    match report.best() {
        Some(b) => {
            let _ = writeln!(s, "best_index = {}", b.index);
            let _ = writeln!(s, "best_tag = {}", b.tag);
            let _ = writeln!(s, "best_x = {}", fmt_list(&b.x, ", "));
            let _ = writeln!(s, "best_y = {}", fmt_f64(b.y));
            let _ = writeln!(s, "best_constraints = {}", fmt_list(&b.constraints, ", "));
        }
        None => {
            let _ = writeln!(s, "best_index = none");
        }
    }
    for w in &report.warnings {
        let _ = writeln!(s, "warning = {w}");
    }
    write(&cli.out, "summary.txt", &(head + &s))?;
    match report.best() {
        Some(b) => println!("optimize: best y = {} at {:?} (index {})", b.y, b.x, b.index),
        None => println!("optimize: no feasible design found"),
    }
    if failed > 0 {
        eprintln!("warning: {failed} of {} evaluations failed", report.budget_used);
        return Ok(Outcome::Partial);
    }
    Ok(Outcome::Success)
}

fn benchmark_table(rows: &[BenchmarkRow], reference: u64) -> String {
    let mut s = String::from("seed,role,noise_level,drop_rate,model,rmse\n");
    for r in rows {
        let role = if r.seed == reference { "reference" } else { "extra" };
        let _ = writeln!(
            s,
            "{},{role},{},{},{},{}",
            r.seed,
            fmt_f64(r.condition.level),
            fmt_f64(r.condition.drop_rate),
            r.kind,
            fmt_f64(r.rmse)
        );
    }
    s
}

fn cmd_benchmark(cli: &Cli) -> Result<Outcome> {
    let cfg = load_config(cli)?;
    let header = Header::new(Some(cfg.hash()));
    let EvaluatorSpec::Builtin(function) = cfg.evaluator else {
        return Err(Error::Config {
            line: 0,
            reason: "benchmark needs a builtin evaluator".into(),
        });
    };
    prepare_out(&cli.out)?;
    let seeds: Vec<u64> = (0..=cfg.benchmark_extra_seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let bench = BenchmarkConfig {
        function,
        space: cfg.space.clone(),
        n_samples: cfg.benchmark_samples,
        conditions: cfg.benchmark_conditions.clone(),
        kinds: cfg.benchmark_models.clone(),
        seeds,
        folds: cfg.k_folds,
        model: cfg.surrogate(),
    };
    let rows = run_benchmark(&bench)?;
    write(&cli.out, "benchmark.csv", &(header.text("") + &benchmark_table(&rows, cfg.seed)))?;

    // kriging CV error against sample count at zero noise, reference seed
    let n = cfg.benchmark_samples;
    let mut sizes: Vec<usize> = [n / 2, (3 * n) / 4, n].into_iter().filter(|&s| s >= cfg.k_folds.max(2)).collect();
    sizes.dedup();
    let mut trend = String::from("samples,model,rmse\n");
    let kriging = cfg.surrogate().with_kind(ModelKind::Kriging);
    for size in sizes {
        let data = builtin_dataset(function, &cfg.space, size, cfg.seed, None)?;
        let mut model = kriging.clone();
        model.kriging.seed = cfg.seed;
        let rep = cross_validate(&data, &[ModelKind::Kriging], &model, cfg.k_folds, cfg.seed)?;
        let _ = writeln!(trend, "{size},kriging,{}", fmt_f64(rep.rows[0].rmse));
    }
    write(&cli.out, "benchmark_trend.csv", &(header.text("") + &trend))?;

    for r in rows.iter().filter(|r| r.seed == cfg.seed) {
        println!(
            "benchmark: level {} drop {} {} rmse {}",
            r.condition.level, r.condition.drop_rate, r.kind, r.rmse
        );
    }
    Ok(Outcome::Success)
}
