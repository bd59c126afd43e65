//! Black-box function backends.
//!
//! Built-in analytic benchmarks return exact values and gradients. The
//! external backend drives a solver process through a pair of text files:
//!
//! ```text
//! design.in   line 1: d; lines 2..=d+1: coordinates
//! design.out  objective <v>
//!             constraint <v>        (zero or more, in order)
//!             gradient              (optional, followed by d lines)
//! ```
//!
//! Gradient noise and gradient drop-outs can be injected with
//! [`with_noise`] to emulate unreliable adjoint solutions.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numfmt::fmt_f64;
use crate::samples::Status;

/// Outcome of one evaluation. Gradients are in raw design coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub y: f64,
    pub constraints: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub status: Status,
}

impl EvalResult {
    pub fn failed() -> Self {
        Self {
            y: f64::NAN,
            constraints: Vec::new(),
            grad: None,
            status: Status::Failed,
        }
    }

    fn with_gradient(y: f64, constraints: Vec<f64>, grad: Vec<f64>) -> Self {
        Self {
            y,
            constraints,
            grad: Some(grad),
            status: Status::Ok,
        }
    }
}

/// Anything that can evaluate a raw design. `index` identifies the
/// evaluation within a run and seeds any per-sample randomness.
pub trait BlackBox: Send + Sync {
    fn evaluate(&self, x: &[f64], index: usize) -> EvalResult;
}

impl<F> BlackBox for F
where
    F: Fn(&[f64]) -> EvalResult + Send + Sync,
{
    fn evaluate(&self, x: &[f64], _index: usize) -> EvalResult {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Sphere,
    Rosenbrock,
    Branin,
    Rastrigin,
    LinearSlope,
}

impl FromStr for Builtin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Builtin::Sphere),
            "rosenbrock" => Ok(Builtin::Rosenbrock),
            "branin" => Ok(Builtin::Branin),
            "rastrigin" => Ok(Builtin::Rastrigin),
            "linear-slope" => Ok(Builtin::LinearSlope),
            other => Err(Error::UnknownFunction(other.to_string())),
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Builtin::Sphere => "sphere",
            Builtin::Rosenbrock => "rosenbrock",
            Builtin::Branin => "branin",
            Builtin::Rastrigin => "rastrigin",
            Builtin::LinearSlope => "linear-slope",
        })
    }
}

const BRANIN_B: f64 = 5.1 / (4.0 * PI * PI);
const BRANIN_C: f64 = 5.0 / PI;
const BRANIN_T: f64 = 1.0 / (8.0 * PI);

impl Builtin {
    /// Value and gradient at `x`.
    pub fn eval(self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = x.len();
        let need = |n: usize, exact: bool| -> Result<()> {
            if (exact && d != n) || d < n {
                Err(Error::DimensionMismatch { expected: n, got: d })
            } else {
                Ok(())
            }
        };
        match self {
            Builtin::Sphere => {
                need(1, false)?;
                Ok((x.iter().map(|v| v * v).sum(), x.iter().map(|v| 2.0 * v).collect()))
            }
            Builtin::Rosenbrock => {
                need(2, false)?;
                let mut y = 0.0;
                let mut g = vec![0.0; d];
                for k in 0..d - 1 {
                    let a = x[k + 1] - x[k] * x[k];
                    let b = 1.0 - x[k];
                    y += 100.0 * a * a + b * b;
                    g[k] += -400.0 * a * x[k] - 2.0 * b;
                    g[k + 1] += 200.0 * a;
                }
                Ok((y, g))
            }
            Builtin::Branin => {
                need(2, true)?;
                let (x1, x2) = (x[0], x[1]);
                let q = x2 - BRANIN_B * x1 * x1 + BRANIN_C * x1 - 6.0;
                let y = q * q + 10.0 * (1.0 - BRANIN_T) * x1.cos() + 10.0;
                let g1 = 2.0 * q * (-2.0 * BRANIN_B * x1 + BRANIN_C) - 10.0 * (1.0 - BRANIN_T) * x1.sin();
                Ok((y, vec![g1, 2.0 * q]))
            }
            Builtin::Rastrigin => {
                need(1, false)?;
                let y = 10.0 * d as f64
                    + x.iter()
                        .map(|v| v * v - 10.0 * (2.0 * PI * v).cos())
                        .sum::<f64>();
                let g = x
                    .iter()
                    .map(|v| 2.0 * v + 20.0 * PI * (2.0 * PI * v).sin())
                    .collect();
                Ok((y, g))
            }
            Builtin::LinearSlope => {
                need(1, false)?;
                Ok((x.iter().sum(), vec![1.0; d]))
            }
        }
    }
}

/// Constraint `c(x) = a·(x₁ − t)`, feasible when `c ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearConstraint {
    pub a: f64,
    pub t: f64,
}

impl LinearConstraint {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.a * (x[0] - self.t)
    }
}

/// A built-in benchmark with an optional linear constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinEvaluator {
    pub function: Builtin,
    pub constraint: Option<LinearConstraint>,
}

impl BuiltinEvaluator {
    pub fn new(function: Builtin) -> Self {
        Self {
            function,
            constraint: None,
        }
    }

    pub fn with_constraint(mut self, c: LinearConstraint) -> Self {
        self.constraint = Some(c);
        self
    }

    pub fn n_constraints(&self) -> usize {
        usize::from(self.constraint.is_some())
    }
}

impl BlackBox for BuiltinEvaluator {
    fn evaluate(&self, x: &[f64], _index: usize) -> EvalResult {
        match self.function.eval(x) {
            Ok((y, g)) => {
                let c = self.constraint.iter().map(|c| c.eval(x)).collect();
                EvalResult::with_gradient(y, c, g)
            }
            Err(e) => {
                log::error!("builtin {} failed: {e}", self.function);
                EvalResult::failed()
            }
        }
    }
}

/// Evaluates a named built-in benchmark without constraints.
pub fn evaluate_builtin(name: &str, x: &[f64]) -> Result<EvalResult> {
    let f: Builtin = name.parse()?;
    let (y, g) = f.eval(x)?;
    Ok(EvalResult::with_gradient(y, Vec::new(), g))
}

/// Relative gradient noise and gradient drop-out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Standard deviation of the perturbation relative to `‖∇f‖₂`.
    pub level: f64,
    /// Probability of discarding the gradient.
    pub drop_rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(level: f64, drop_rate: f64, seed: u64) -> Result<Self> {
        if !(level >= 0.0 && level.is_finite()) {
            return Err(Error::InvalidSpace("noise level must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&drop_rate) {
            return Err(Error::InvalidSpace("drop rate must lie in [0, 1]".into()));
        }
        Ok(Self {
            level,
            drop_rate,
            seed,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.level == 0.0 && self.drop_rate == 0.0
    }
}

/// Perturbs the gradient of a successful result with seeded Gaussian noise
/// of standard deviation `level·‖∇f‖₂` and drops it with probability
/// `drop_rate`. The objective value is never altered. The draws depend only
/// on `(spec.seed, index)`.
pub fn with_noise(mut result: EvalResult, spec: &NoiseSpec, index: usize) -> EvalResult {
    let Some(grad) = result.grad.as_mut() else {
        return result;
    };
    if spec.is_identity() {
        return result;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    for g in grad.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *g += spec.level * norm * z;
    }
    let u: f64 = rng.random();
    if u < spec.drop_rate {
        result.grad = None;
        result.status = Status::GradientFailed;
    }
    result
}

/// External solver invoked as `<program> [args..] design.in design.out`
/// inside `workdir/run-<index>`.
#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    pub command: Vec<String>,
    pub workdir: PathBuf,
    pub timeout: Duration,
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);

impl ExternalEvaluator {
    /// `command` is split on whitespace into program and leading arguments.
    pub fn new(command: &str, workdir: impl Into<PathBuf>) -> Result<Self> {
        let command: Vec<String> = command.split_whitespace().map(str::to_string).collect();
        if command.is_empty() {
            return Err(Error::InvalidSpace("empty external command".into()));
        }
        Ok(Self {
            command,
            workdir: workdir.into(),
            timeout: DEFAULT_TIMEOUT,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn run_dir(&self, index: usize) -> PathBuf {
        self.workdir.join(format!("run-{index}"))
    }
}

impl BlackBox for ExternalEvaluator {
    fn evaluate(&self, x: &[f64], index: usize) -> EvalResult {
        match run_external(self, x, index) {
            Ok(r) => r,
            Err(e) => {
                log::error!("evaluation {index} failed: {e}");
                EvalResult::failed()
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum ExternalError {
    #[error("spawn: {0}")]
    Spawn(std::io::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("exit status {0}")]
    Exit(std::process::ExitStatus),
    #[error("design.out line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub fn write_design_file(path: &Path, x: &[f64]) -> std::io::Result<()> {
    let mut text = format!("{}\n", x.len());
    for &v in x {
        text.push_str(&fmt_f64(v));
        text.push('\n');
    }
    fs::write(path, text)
}

/// Evaluates `x` through the external protocol; every failure mode maps to
/// a `failed` status.
pub fn evaluate_external(command: &str, x: &[f64], workdir: &Path, timeout: Duration) -> EvalResult {
    match ExternalEvaluator::new(command, workdir) {
        Ok(ev) => ev.with_timeout(timeout).evaluate(x, 0),
        Err(e) => {
            log::error!("{e}");
            EvalResult::failed()
        }
    }
}

fn run_external(ev: &ExternalEvaluator, x: &[f64], index: usize) -> std::result::Result<EvalResult, ExternalError> {
    let dir = ev.run_dir(index);
    fs::create_dir_all(&dir)?;
    let out_path = dir.join("design.out");
    if out_path.exists() {
        fs::remove_file(&out_path)?;
    }
    write_design_file(&dir.join("design.in"), x)?;
    let program = absolute_program(&ev.command[0]);
    let mut child = Command::new(program)
        .args(&ev.command[1..])
        .arg("design.in")
        .arg("design.out")
        .current_dir(&dir)
        .stdin(Stdio::null())
        .stdout(fs::File::create(dir.join("stdout.log"))?)
        .stderr(fs::File::create(dir.join("stderr.log"))?)
        .spawn()
        .map_err(ExternalError::Spawn)?;
    let start = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if start.elapsed() >= ev.timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(ExternalError::Timeout(ev.timeout));
        }
        std::thread::sleep(Duration::from_millis(5));
    };
    if !status.success() {
        return Err(ExternalError::Exit(status));
    }
    let text = fs::read_to_string(&out_path)?;
    parse_design_out(&text, x.len())
}

/// Relative program paths are resolved against the caller's directory
/// because the child runs inside its run directory.
fn absolute_program(program: &str) -> PathBuf {
    let p = Path::new(program);
    if p.components().count() > 1 && p.is_relative() {
        std::env::current_dir().map(|c| c.join(p)).unwrap_or_else(|_| p.to_path_buf())
    } else {
        p.to_path_buf()
    }
}

fn parse_design_out(text: &str, d: usize) -> std::result::Result<EvalResult, ExternalError> {
    let mut objective = None;
    let mut constraints = Vec::new();
    let mut grad = None;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let num = |line: usize, s: &str| {
        s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(ExternalError::Parse {
            line: line + 1,
            reason: format!("not a finite number: `{}`", s.trim()),
        })
    };
    while let Some((i, line)) = lines.next() {
        let mut words = line.split_whitespace();
        match (words.next(), words.next()) {
            (Some("objective"), Some(v)) => objective = Some(num(i, v)?),
            (Some("constraint"), Some(v)) => constraints.push(num(i, v)?),
            (Some("gradient"), None) => {
                let mut g = Vec::with_capacity(d);
                for _ in 0..d {
                    match lines.next() {
                        Some((j, l)) => g.push(num(j, l)?),
                        None => {
                            return Err(ExternalError::Parse {
                                line: i + 1,
                                reason: format!("gradient needs {d} values"),
                            })
                        }
                    }
                }
                grad = Some(g);
            }
            _ => {
                return Err(ExternalError::Parse {
                    line: i + 1,
                    reason: format!("unrecognized line `{line}`"),
                })
            }
        }
    }
    let y = objective.ok_or(ExternalError::Parse {
        line: 0,
        reason: "missing objective".into(),
    })?;
    Ok(match grad {
        Some(g) => EvalResult::with_gradient(y, constraints, g),
        None => EvalResult {
            y,
            constraints,
            grad: None,
            status: Status::GradientFailed,
        },
    })
}
