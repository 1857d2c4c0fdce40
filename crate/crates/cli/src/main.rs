//! `gnslab`: batch front-end for the GNS, Lieb–Thirring and trapped Hartree–Fock solvers.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

/// Failure classes, mapped to exit codes by `main`.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl CliError {
    /// A core error attributed to a configuration field or section.
    pub fn at(field: &str, e: gns_core::Error) -> Self {
        match e {
            gns_core::Error::Config(m) | gns_core::Error::Input(m) | gns_core::Error::GridMismatch(m) => {
                CliError::Config(format!("{field}: {m}"))
            }
            other => CliError::Runtime(format!("{field}: {other}")),
        }
    }
}

impl From<gns_core::Error> for CliError {
    fn from(e: gns_core::Error) -> Self {
        match e {
            gns_core::Error::Config(_) | gns_core::Error::Input(_) | gns_core::Error::GridMismatch(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(format!("json: {e}"))
    }
}

/// Whether a finished pipeline met its own convergence criteria.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    Partial,
}

#[derive(Parser, Debug)]
#[command(name = "gnslab", version, about = "Fermionic GNS constants, Lieb–Thirring duality and trapped Hartree–Fock runs")]
struct Cli {
    /// TOML run configuration; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $GNSLAB_OUTPUT/<command>, else runs/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for pipelines that run independent jobs.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Box side length.
    #[arg(long = "L", global = true)]
    box_length: Option<f64>,
    /// Grid points per axis.
    #[arg(long = "n", global = true)]
    points: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize the GNS ratio over rank-N density operators.
    Gns(GnsArgs),
    /// Negative spectrum of √−Δ + V∗|x|^{−α}, or the duality scan.
    Lt(LtArgs),
    /// Minimize the trapped Hartree–Fock functional, or run the dilation probe.
    Trapped(TrappedArgs),
    /// Warm-started minimizations along a K list.
    Sweep(SweepArgs),
    /// Fit blow-up exponents to sweep records.
    Fit(FitArgs),
    /// Identity checks on a stored density operator.
    Verify(VerifyArgs),
    /// Gaussian closed-form checks of the spectral kernels.
    Oracle,
}

#[derive(Args, Debug)]
struct GnsArgs {
    #[arg(long)]
    alpha: Option<f64>,
    /// Schatten exponent: a number ≥ 1 or "inf".
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Args, Debug)]
struct LtArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    qprime: Option<f64>,
    #[arg(long)]
    eig_cap: Option<usize>,
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long)]
    state: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    duality: bool,
}

#[derive(Args, Debug)]
struct TrappedArgs {
    #[arg(long)]
    n_cap: Option<usize>,
    /// Coupling constant K.
    #[arg(long = "K")]
    coupling: Option<f64>,
    #[arg(long)]
    mass: Option<f64>,
    #[arg(long)]
    probe_state: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Comma-separated ascending K list.
    #[arg(long = "K", value_delimiter = ',')]
    couplings: Vec<f64>,
    #[arg(long)]
    adaptive_factor: Option<f64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    state: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Directory written by `gns` (the `optimizer` subdirectory) or any stored operator.
    dir: PathBuf,
    /// Riesz exponent, if the manifest does not record it.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = gns_core::diagnostics::DEFAULT_TOLERANCE)]
    tol: f64,
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut c = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(o) = &cli.out {
        c.output = Some(o.clone());
    }
    if let Some(l) = cli.box_length {
        c.grid.box_length = l;
    }
    if let Some(n) = cli.points {
        c.grid.points = n;
    }
    match &cli.command {
        Command::Gns(a) => {
            if let Some(v) = a.alpha {
                c.gns.alpha = v;
            }
            if let Some(q) = &a.q {
                c.gns.q = q.parse().map_err(|e| CliError::at("gns.q", e))?;
            }
            if let Some(v) = a.rank {
                c.gns.rank = v;
            }
            if let Some(v) = a.tol {
                c.gns.tol = v;
            }
            if let Some(v) = a.max_iter {
                c.gns.max_iter = v;
            }
            if let Some(v) = a.restarts {
                c.gns.restarts = v;
            }
        }
        Command::Lt(a) => {
            if let Some(v) = a.alpha {
                c.lt.alpha = v;
            }
            if let Some(v) = a.qprime {
                c.lt.qprime = v;
            }
            if let Some(v) = a.eig_cap {
                c.lt.eig_cap = v;
            }
            if a.field.is_some() {
                c.lt.field = a.field.clone();
            }
            if a.state.is_some() {
                c.lt.state = a.state.clone();
            }
            if a.beta.is_some() {
                c.lt.beta = a.beta;
            }
            c.lt.duality |= a.duality;
        }
        Command::Trapped(a) => {
            if let Some(v) = a.n_cap {
                c.trapped.n_cap = v;
            }
            if let Some(v) = a.coupling {
                c.trapped.coupling = v;
            }
            if let Some(v) = a.mass {
                c.trapped.mass = v;
            }
            if a.probe_state.is_some() {
                c.trapped.probe_state = a.probe_state.clone();
            }
        }
        Command::Sweep(a) => {
            if !a.couplings.is_empty() {
                c.sweep.couplings = a.couplings.clone();
                c.sweep.ladder = None;
            }
            if a.adaptive_factor.is_some() {
                c.sweep.adaptive_factor = a.adaptive_factor;
            }
        }
        Command::Fit(a) => {
            if a.records.is_some() {
                c.fit.records = a.records.clone();
            }
            if a.state.is_some() {
                c.fit.state = a.state.clone();
            }
        }
        Command::Verify(_) | Command::Oracle => {}
    }
    Ok(c)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Gns(_) => "gns",
        Command::Lt(_) => "lt",
        Command::Trapped(_) => "trapped",
        Command::Sweep(_) => "sweep",
        Command::Fit(_) => "fit",
        Command::Verify(_) => "verify",
        Command::Oracle => "oracle",
    }
}

fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = resolve(cli)?;
    let name = command_name(&cli.command);
    let dir = cfg.output.clone().unwrap_or_else(|| {
        std::env::var_os("GNSLAB_OUTPUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs")).join(name)
    });
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let out = run::Output::create(dir, name, &cfg)?;
    match &cli.command {
        Command::Gns(_) => run::gns(&cfg, &out),
        Command::Lt(_) => run::lt(&cfg, &out),
        Command::Trapped(_) => run::trapped(&cfg, &out),
        Command::Sweep(_) => run::sweep(&cfg, &out),
        Command::Fit(_) => run::fit(&cfg, &out),
        Command::Verify(a) => run::verify(&a.dir, a.alpha, a.tol, &out),
        Command::Oracle => run::oracle(&cfg, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(Outcome::Converged) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => {
            eprintln!("finished without meeting the convergence criteria; partial results written");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
