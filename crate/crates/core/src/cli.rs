//! The `tdv` command line.
//!
//! ```text
//! tdv denoise  --order 2 --alpha 1,2 --lambda 8 -i noisy.pgm -o clean.pgm
//! tdv inpaint  --mask mask.pgm -i damaged.pgm -o filled.pgm
//! tdv tdv-eval --order 2 --alpha 1,1 -i image.pgm
//! tdv verify   --grid 8x8 --trials 100 --seed 7
//! ```
//!
//! Every argument is checked and every input file read before any
//! computation starts. `TDV_THREADS` caps the worker pool.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::anisotropy::{rotation_contraction_field, structure_tensor_field, StructureTensorParams, WeightCollection};
use crate::error::{Result, TdvError};
use crate::io;
use crate::solver::{self, ForwardOp, Problem, SolveState};
use crate::tdv::{self, AlphaVector, TdvOptions};
use crate::tensor::{Grid, TensorField};
use crate::verify::{self, VerifyConfig};

pub const THREADS_ENV: &str = "TDV_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Denoise,
    Inpaint,
    TdvEval,
    Verify,
}

/// How the weight fields `M_j` are built. The same field is used at every
/// level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AnisotropySpec {
    Identity,
    Rotation { theta: f64, a: f64 },
    Structure { sigma: f64, rho: f64, a: f64 },
}

impl FromStr for AnisotropySpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> std::result::Result<Vec<f64>, String> {
            rest.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}")))
                .collect()
        };
        let contraction_ok = |a: f64| a > 0.0 && a <= 1.0;
        match kind {
            "identity" if rest.is_empty() => Ok(AnisotropySpec::Identity),
            "rotation" => match nums()?.as_slice() {
                &[theta, a] if theta.is_finite() && contraction_ok(a) => Ok(AnisotropySpec::Rotation { theta, a }),
                &[_, _] => Err("rotation needs a finite angle and a contraction in (0, 1]".into()),
                _ => Err("expected rotation:THETA,A".into()),
            },
            "structure" => match nums()?.as_slice() {
                &[sigma, rho, a] if sigma >= 0.0 && rho >= 0.0 && contraction_ok(a) => {
                    Ok(AnisotropySpec::Structure { sigma, rho, a })
                }
                &[_, _, _] => Err("structure needs sigma, rho >= 0 and a contraction in (0, 1]".into()),
                _ => Err("expected structure:SIGMA,RHO,A".into()),
            },
            _ => Err(format!(
                "unknown anisotropy {s:?}; use identity, rotation:THETA,A or structure:SIGMA,RHO,A"
            )),
        }
    }
}

impl fmt::Display for AnisotropySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnisotropySpec::Identity => write!(f, "identity"),
            AnisotropySpec::Rotation { theta, a } => write!(f, "rotation:{theta},{a}"),
            AnisotropySpec::Structure { sigma, rho, a } => write!(f, "structure:{sigma},{rho},{a}"),
        }
    }
}

impl AnisotropySpec {
    /// `q` copies of the weight field for `image`.
    pub fn build(&self, image: &TensorField, q: usize) -> Result<WeightCollection> {
        let grid = image.grid();
        match *self {
            AnisotropySpec::Identity => WeightCollection::identity(grid, q),
            AnisotropySpec::Rotation { theta, a } => {
                WeightCollection::repeated(rotation_contraction_field(grid, theta, a)?, q)
            }
            AnisotropySpec::Structure { sigma, rho, a } => {
                WeightCollection::repeated(structure_tensor_field(image, StructureTensorParams::new(sigma, rho, a))?, q)
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tdv", version, about = "Total directional variation regularisation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Denoise an image: min TDV(u) + λ/2 ‖u - f‖².
    Denoise(SolveArgs),
    /// Fill masked pixels: min TDV(u) + λ/2 ‖S(u - f)‖².
    Inpaint(InpaintArgs),
    /// Evaluate TDV of an image.
    TdvEval(RegArgs),
    /// Run the identity suite on random data.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct RegArgs {
    /// Regularisation order Q.
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Weights α_0,..,α_{Q-1}; α_0 scales the highest derivative.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.0])]
    alpha: Vec<f64>,
    /// identity | rotation:THETA,A | structure:SIGMA,RHO,A
    #[arg(long, default_value = "identity")]
    anisotropy: AnisotropySpec,
    /// Relative duality-gap tolerance.
    #[arg(long, default_value_t = 1e-6)]
    gap_tol: f64,
    /// Iteration cap.
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    /// Input image (PGM or TDVF).
    #[arg(short, long)]
    input: PathBuf,
    /// JSON summary path.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    reg: RegArgs,
    /// Fidelity weight λ.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Output field; `.pgm` writes an 8-bit image, anything else TDVF.
    #[arg(short, long)]
    output: PathBuf,
    /// Per-iteration metrics CSV (default: output with extension `.csv`).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Standard deviation of seeded Gaussian noise added to the input.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exit with success even if the gap tolerance was not reached.
    #[arg(long)]
    allow_nonconverged: bool,
}

#[derive(Debug, Args)]
struct InpaintArgs {
    #[command(flatten)]
    solve: SolveArgs,
    /// Observation mask; pixels >= 0.5 are observed.
    #[arg(long)]
    mask: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Grid as HEIGHTxWIDTH.
    #[arg(long, default_value = "8x8", value_parser = parse_grid)]
    grid: (usize, usize),
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HEIGHTxWIDTH")?;
    let h = h.parse::<usize>().map_err(|e| e.to_string())?;
    let w = w.parse::<usize>().map_err(|e| e.to_string())?;
    if h == 0 || w == 0 {
        return Err("grid sides must be positive".into());
    }
    Ok((h, w))
}

/// A fully validated invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub task: Task,
    pub order: usize,
    pub alpha: Vec<f64>,
    pub anisotropy: AnisotropySpec,
    pub lambda: f64,
    pub max_iters: usize,
    pub gap_tol: f64,
    pub seed: u64,
    pub noise: f64,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub allow_nonconverged: bool,
    pub grid: Option<(usize, usize)>,
    pub trials: usize,
}

impl RunConfig {
    /// Parses `args` (program name first) and validates the result.
    pub fn from_args<I, T>(args: I) -> std::result::Result<Self, clap::Error>
    where
        I: IntoIterator<Item = T>,
        T: Into<std::ffi::OsString> + Clone,
    {
        let cli = Cli::try_parse_from(args)?;
        let cfg = RunConfig::from_command(cli.command);
        cfg.validate().map_err(|e| {
            use clap::CommandFactory;
            Cli::command().error(clap::error::ErrorKind::ValueValidation, e.to_string())
        })?;
        Ok(cfg)
    }

    fn from_command(command: Command) -> Self {
        let base = |task, reg: RegArgs| RunConfig {
            task,
            order: reg.order,
            alpha: reg.alpha,
            anisotropy: reg.anisotropy,
            lambda: 0.0,
            max_iters: reg.max_iters,
            gap_tol: reg.gap_tol,
            seed: 0,
            noise: 0.0,
            input: Some(reg.input),
            output: None,
            mask: None,
            metrics: None,
            summary: reg.summary,
            allow_nonconverged: false,
            grid: None,
            trials: 0,
        };
        let solve = |task, s: SolveArgs| {
            let metrics = s.metrics.unwrap_or_else(|| s.output.with_extension("csv"));
            let summary = s.reg.summary.clone().unwrap_or_else(|| s.output.with_extension("json"));
            RunConfig {
                lambda: s.lambda,
                seed: s.seed,
                noise: s.noise,
                output: Some(s.output),
                metrics: Some(metrics),
                summary: Some(summary),
                allow_nonconverged: s.allow_nonconverged,
                ..base(task, s.reg)
            }
        };
        match command {
            Command::Denoise(s) => solve(Task::Denoise, s),
            Command::Inpaint(a) => RunConfig {
                mask: Some(a.mask),
                ..solve(Task::Inpaint, a.solve)
            },
            Command::TdvEval(reg) => base(Task::TdvEval, reg),
            Command::Verify(v) => RunConfig {
                task: Task::Verify,
                order: 0,
                alpha: Vec::new(),
                anisotropy: AnisotropySpec::Identity,
                lambda: 0.0,
                max_iters: 0,
                gap_tol: 0.0,
                seed: v.seed,
                noise: 0.0,
                input: None,
                output: None,
                mask: None,
                metrics: None,
                summary: None,
                allow_nonconverged: false,
                grid: Some(v.grid),
                trials: v.trials,
            },
        }
    }

    /// Re-checks every numeric constraint of the library types and that
    /// outputs can be created.
    pub fn validate(&self) -> Result<()> {
        if self.task == Task::Verify {
            if self.trials == 0 {
                return Err(TdvError::Parameter("--trials must be at least 1".into()));
            }
            return Ok(());
        }
        if self.order == 0 {
            return Err(TdvError::Parameter("--order must be at least 1".into()));
        }
        let alpha = AlphaVector::new(self.alpha.clone())?;
        if alpha.len() != self.order {
            return Err(TdvError::Parameter(format!(
                "--alpha has {} entries but --order is {}",
                alpha.len(),
                self.order
            )));
        }
        if !(self.gap_tol > 0.0 && self.gap_tol.is_finite()) {
            return Err(TdvError::Parameter("--gap-tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(TdvError::Parameter("--max-iters must be at least 1".into()));
        }
        if matches!(self.task, Task::Denoise | Task::Inpaint) {
            if !(self.lambda > 0.0 && self.lambda.is_finite()) {
                return Err(TdvError::Parameter("--lambda must be positive".into()));
            }
            if !(self.noise >= 0.0 && self.noise.is_finite()) {
                return Err(TdvError::Parameter("--noise must be non-negative".into()));
            }
            for path in [&self.output, &self.metrics, &self.summary].into_iter().flatten() {
                check_writable_dir(path)?;
            }
        }
        if let Some(path) = &self.summary {
            check_writable_dir(path)?;
        }
        Ok(())
    }
}

fn check_writable_dir(path: &Path) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !dir.is_dir() {
        return Err(TdvError::Parameter(format!("output directory {} does not exist", dir.display())));
    }
    Ok(())
}

/// Builds the global worker pool from `TDV_THREADS`, if set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| TdvError::Parameter(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // A pool built earlier in the process stays in place.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// What a run produced.
#[derive(Debug, Clone)]
pub enum Outcome {
    Solved { state: SolveState },
    Evaluated { value: f64, lower_bound: f64, iterations: usize },
    Verified { checks: Vec<verify::IdentityCheck> },
}

impl Outcome {
    /// Whether the run counts as a success for `cfg`.
    pub fn success(&self, cfg: &RunConfig) -> bool {
        match self {
            Outcome::Solved { state } => state.converged || cfg.allow_nonconverged,
            Outcome::Evaluated { .. } => true,
            Outcome::Verified { checks } => checks.iter().all(|c| c.passed()),
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    task: Task,
    final_energy: Option<f64>,
    final_gap: Option<f64>,
    iterations: usize,
    converged: bool,
    energy_increases: usize,
    operator_norm: f64,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    task: Task,
    value: f64,
    lower_bound: f64,
    iterations: usize,
    config: &'a RunConfig,
}

/// Executes a validated configuration, writing every file it names.
pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    configure_threads()?;
    match cfg.task {
        Task::Verify => {
            let (h, w) = cfg.grid.unwrap_or((8, 8));
            let checks = verify::run_identity_suite(&VerifyConfig {
                grid: Grid::new(h, w)?,
                trials: cfg.trials,
                seed: cfg.seed,
            })?;
            Ok(Outcome::Verified { checks })
        }
        Task::TdvEval => {
            let u = io::load_field(required(&cfg.input, "input")?)?;
            let weights = cfg.anisotropy.build(&u, cfg.order)?;
            let alpha = AlphaVector::new(cfg.alpha.clone())?;
            let eval = tdv::tdv_value_with(
                &u,
                &weights,
                &alpha,
                TdvOptions {
                    tol: cfg.gap_tol,
                    max_iters: cfg.max_iters,
                },
            )?;
            if let Some(path) = &cfg.summary {
                write_json(
                    path,
                    &EvalSummary {
                        task: cfg.task,
                        value: eval.value,
                        lower_bound: eval.lower_bound,
                        iterations: eval.iterations,
                        config: cfg,
                    },
                )?;
            }
            Ok(Outcome::Evaluated {
                value: eval.value,
                lower_bound: eval.lower_bound,
                iterations: eval.iterations,
            })
        }
        Task::Denoise | Task::Inpaint => {
            let mut f = io::load_field(required(&cfg.input, "input")?)?;
            let forward = match &cfg.mask {
                Some(path) => {
                    let m = io::load_image(path)?;
                    if m.grid() != f.grid() {
                        return Err(TdvError::Dimension("mask and input sizes differ".into()));
                    }
                    let bin = m.data().iter().map(|v| if *v >= 0.5 { 1.0 } else { 0.0 }).collect();
                    ForwardOp::Mask(TensorField::from_data(m.grid(), 0, bin)?)
                }
                None => ForwardOp::Identity,
            };
            if cfg.noise > 0.0 {
                add_noise(&mut f, cfg.noise, cfg.seed);
            }
            let weights = cfg.anisotropy.build(&f, cfg.order)?;
            let problem = Problem::new(f, forward, weights, AlphaVector::new(cfg.alpha.clone())?, cfg.lambda)?;
            let (u, state) = solver::solve(&problem, cfg.max_iters, cfg.gap_tol)?;
            info!("{} iterations, converged: {}", state.iterations, state.converged);
            io::save_field(required(&cfg.output, "output")?, &u)?;
            if let Some(path) = &cfg.metrics {
                write_metrics(path, &state)?;
            }
            if let Some(path) = &cfg.summary {
                write_json(
                    path,
                    &Summary {
                        task: cfg.task,
                        final_energy: state.final_energy(),
                        final_gap: state.final_gap(),
                        iterations: state.iterations,
                        converged: state.converged,
                        energy_increases: state.energy_increases,
                        operator_norm: state.operator_norm,
                        config: cfg,
                    },
                )?;
            }
            Ok(Outcome::Solved { state })
        }
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| TdvError::Parameter(format!("missing {what} path")))
}

/// Adds `N(0, sigma²)` noise from a generator seeded with `seed`.
pub fn add_noise(f: &mut TensorField, sigma: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    for v in f.data_mut() {
        *v += normal.sample(&mut rng);
    }
}

/// `iter,primal_energy,gap` rows.
pub fn write_metrics(path: &Path, state: &SolveState) -> Result<()> {
    let mut out = String::from("iter,primal_energy,gap\n");
    for h in &state.history {
        out.push_str(&format!("{},{},{}\n", h.iteration, h.primal_energy, h.gap));
    }
    fs::write(path, out).map_err(|e| TdvError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("summary is plain data");
    fs::write(path, text + "\n").map_err(|e| TdvError::io(path, e))
}

/// Parses, runs and reports; the whole program behind the `tdv` binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cfg = match RunConfig::from_args(args) {
        Ok(cfg) => cfg,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = match run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match &outcome {
        Outcome::Verified { checks } => {
            let _ = write!(stdout, "{}", verify::render_table(checks));
        }
        Outcome::Evaluated {
            value,
            lower_bound,
            iterations,
        } => {
            let _ = writeln!(stdout, "tdv {value:.12e}");
            let _ = writeln!(stdout, "lower_bound {lower_bound:.12e}");
            let _ = writeln!(stdout, "iterations {iterations}");
        }
        Outcome::Solved { state } => {
            let _ = writeln!(
                stdout,
                "iterations {} converged {} energy {:.12e} gap {:.3e}",
                state.iterations,
                state.converged,
                state.final_energy().unwrap_or(f64::NAN),
                state.final_gap().unwrap_or(f64::NAN)
            );
        }
    }
    if outcome.success(&cfg) {
        ExitCode::SUCCESS
    } else {
        if let Outcome::Solved { .. } = outcome {
            eprintln!("error: gap tolerance not reached (pass --allow-nonconverged to accept)");
        }
        ExitCode::FAILURE
    }
}
