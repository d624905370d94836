//! `ot`: command-line front end for the otkit solvers.
//!
//! Exit codes: 0 converged, 1 usage or input error, 2 numerical failure or
//! non-convergence (partial results are still printed). Every flag can also
//! be set through an `OT_*` environment variable; flags take precedence.

mod commands;
mod methods;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use methods::{Method, Settings};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ot",
    version,
    about = "Optimal transport distances, plans, interpolations and stippling"
)]
struct Cli {
    /// Worker threads for data-parallel steps.
    #[arg(long, global = true, env = "OT_THREADS", default_value_t = 1)]
    threads: usize,
    /// Machine-readable JSON output.
    #[arg(long, global = true, env = "OT_JSON")]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct SolverArgs {
    /// Ground cost exponent: c(x, y) = |x − y|^p.
    #[arg(long, env = "OT_P", default_value_t = 2.0)]
    p: f64,
    /// Entropic regularization, in cost units unless --relative-alpha.
    #[arg(long, env = "OT_ALPHA", default_value_t = 0.01)]
    alpha: f64,
    /// Scale alpha by the largest cost (or the squared diameter for conv).
    #[arg(long, env = "OT_RELATIVE_ALPHA")]
    relative_alpha: bool,
    /// Run Sinkhorn on log-scalings.
    #[arg(long, env = "OT_LOG_DOMAIN")]
    log_domain: bool,
    /// Iteration cap.
    #[arg(long, env = "OT_ITERS")]
    iters: Option<usize>,
    /// Convergence tolerance.
    #[arg(long, env = "OT_TOL")]
    tol: Option<f64>,
    /// Time steps of the dynamic solver.
    #[arg(long, env = "OT_NT", default_value_t = 16)]
    nt: usize,
    /// Augmented-Lagrangian penalty of the dynamic and Beckmann solvers.
    #[arg(long, env = "OT_R", default_value_t = 1.0)]
    r: f64,
}

impl SolverArgs {
    fn settings(&self) -> Settings {
        Settings {
            p: self.p,
            alpha: self.alpha,
            relative_alpha: self.relative_alpha,
            log_domain: self.log_domain,
            iters: self.iters,
            tol: self.tol,
            nt: self.nt,
            r: self.r,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Distance between two measures with one method.
    Dist {
        #[arg(long, env = "OT_METHOD")]
        method: Method,
        /// Source measure (.json, .csv, .pgm or .off).
        #[arg(long)]
        a: PathBuf,
        /// Target measure.
        #[arg(long)]
        b: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Optimal (or entropic) plan as `i,j,mass` CSV.
    Plan {
        #[arg(long, env = "OT_METHOD", default_value = "lp")]
        method: Method,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Every applicable method on one instance, with pairwise deviations.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Restrict to these methods.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Displacement interpolation between two grids, written as PGM frames.
    Interpolate {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Output directory for frame_NNNN.pgm and report.json.
        #[arg(long)]
        out: PathBuf,
        /// Time steps; nt + 1 frames are written.
        #[arg(long, env = "OT_FRAMES", default_value_t = 16)]
        frames: usize,
        #[arg(long, env = "OT_R", default_value_t = 1.0)]
        r: f64,
        #[arg(long, env = "OT_ITERS")]
        iters: Option<usize>,
        #[arg(long, env = "OT_TOL")]
        tol: Option<f64>,
    },
    /// Entropic Wasserstein barycenter of histograms or grids.
    Barycenter {
        /// Comma-separated input files sharing one support.
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        /// Comma-separated weights on the simplex.
        #[arg(long, value_delimiter = ',', required = true)]
        weights: Vec<f64>,
        #[arg(long, env = "OT_ALPHA", default_value_t = 0.01)]
        alpha: f64,
        #[arg(long, env = "OT_RELATIVE_ALPHA")]
        relative_alpha: bool,
        /// `sinkhorn` (explicit kernel) or `conv` (heat kernel, grids only).
        #[arg(long, env = "OT_METHOD", default_value = "sinkhorn")]
        method: Method,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "OT_ITERS")]
        iters: Option<usize>,
        #[arg(long, env = "OT_TOL")]
        tol: Option<f64>,
    },
    /// Semidiscrete transport from a 2D density to weighted sites.
    Semidiscrete {
        /// Sites and target masses as a JSON measure.
        #[arg(long)]
        sites: PathBuf,
        /// 2D density (.pgm or .csv).
        #[arg(long)]
        density: PathBuf,
        #[arg(long, env = "OT_SOLVER", default_value = "newton")]
        solver: SemiMethod,
        #[arg(long, env = "OT_TOL", default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, env = "OT_ITERS", default_value_t = 10_000)]
        iters: usize,
        /// Cell polygons as GeoJSON-like JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Blue-noise stippling of a 2D density.
    Stipple {
        #[arg(long)]
        density: PathBuf,
        #[arg(long, env = "OT_N")]
        n: usize,
        #[arg(long, env = "OT_SEED", default_value_t = 0)]
        seed: u64,
        /// Lloyd iterations.
        #[arg(long, env = "OT_ITERS", default_value_t = 50)]
        iters: usize,
        /// Points as a JSON measure; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scatter plot of the points.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SemiMethod {
    Newton,
    Ascent,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        eprintln!("error: --threads: {e}");
        return ExitCode::from(1);
    }
    let json = cli.json;
    let result = match cli.command {
        Command::Dist {
            method,
            a,
            b,
            solver,
        } => commands::dist(method, &a, &b, &solver.settings(), json),
        Command::Plan {
            method,
            a,
            b,
            out,
            solver,
        } => commands::plan(method, &a, &b, out.as_deref(), &solver.settings(), json),
        Command::Compare {
            a,
            b,
            methods,
            solver,
        } => commands::compare(&a, &b, methods.as_deref(), &solver.settings(), json),
        Command::Interpolate {
            a,
            b,
            out,
            frames,
            r,
            iters,
            tol,
        } => commands::interpolate(&a, &b, &out, frames, r, iters, tol, json),
        Command::Barycenter {
            inputs,
            weights,
            alpha,
            relative_alpha,
            method,
            out,
            iters,
            tol,
        } => {
            let opts = commands::BarycenterArgs {
                alpha,
                relative_alpha,
                method,
                iters,
                tol,
            };
            commands::barycenter(&inputs, &weights, &out, opts, json)
        }
        Command::Semidiscrete {
            sites,
            density,
            solver,
            tol,
            iters,
            out,
        } => commands::semidiscrete(&sites, &density, solver, tol, iters, out.as_deref(), json),
        Command::Stipple {
            density,
            n,
            seed,
            iters,
            out,
            svg,
        } => commands::stipple(
            &density,
            n,
            seed,
            iters,
            out.as_deref(),
            svg.as_deref(),
            json,
        ),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
