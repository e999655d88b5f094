//! Command-line interface: synthetic-data generation, MAP fitting,
//! replicated contraction experiments, estimator comparisons, and design
//! diagnostics. Exit codes: 0 success, 1 ran but degraded (no convergence
//! or every cell failed), 2 invalid input, 3 output I/O failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use mssl::io;
use mssl::metrics::{epsilon_n, restricted_eigenvalue};
use mssl::model::Dataset;
use mssl::prior::{theory_tuned_hyperparams, Hyperparameters, TuningKnobs};
use mssl::sim::{default_plan, generate_instance, run_plan, ComparisonMode, ExperimentPlan, GenConfig};
use mssl::solver::{fit, SolverConfig};
use mssl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mssl",
    version,
    about = "Sparse multivariate regression with simultaneous precision-matrix estimation"
)]
struct Cli {
    /// Worker threads for experiment cells (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance (design, responses, truth) into a directory
    Generate {
        /// Generation config JSON; bundled defaults when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the MAP estimate to a design/response pair
    Fit {
        /// Design matrix CSV
        #[arg(long)]
        x: PathBuf,
        /// Response matrix CSV
        #[arg(long)]
        y: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Hyperparameter JSON
        #[arg(long, conflicts_with = "theory_tuned")]
        config: Option<PathBuf>,
        /// Derive hyperparameters from the (n, p, q) schedules
        #[arg(long)]
        theory_tuned: bool,
        /// Eigenvalue floor; overrides the config value
        #[arg(long)]
        tau: Option<f64>,
        /// JSON array of [lambda0, xi0] spike-rate rungs, solved with warm starts
        #[arg(long)]
        ladder: Option<PathBuf>,
    },
    /// Run a replicated contraction experiment from a plan
    Experiment {
        /// Experiment plan JSON; bundled default plan when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Overrides the plan's base seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Experiment comparing the joint fit against independent per-response fits
    Compare {
        /// Experiment plan JSON; bundled default plan when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Overrides the plan's base seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Design diagnostics: restricted eigenvalue and contraction rate
    Metrics {
        /// Design matrix CSV
        #[arg(long)]
        x: PathBuf,
        /// Sparsity level s for the restricted eigenvalue
        #[arg(long)]
        sparsity: usize,
        /// Response count; enables the contraction-rate output
        #[arg(long)]
        q: Option<usize>,
        /// Coefficient sparsity for the rate
        #[arg(long, default_value_t = 0)]
        s0_b: usize,
        /// Off-diagonal sparsity for the rate
        #[arg(long, default_value_t = 0)]
        s0_omega: usize,
        /// Also write metrics.json into this directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("MSSL_LOG")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Generate { config, out, seed } => cmd_generate(config, out, seed),
        Command::Fit {
            x,
            y,
            out,
            config,
            theory_tuned,
            tau,
            ladder,
        } => cmd_fit(x, y, out, config, theory_tuned, tau, ladder),
        Command::Experiment { config, out, seed } => cmd_experiment(config, out, seed, None),
        Command::Compare { config, out, seed } => {
            cmd_experiment(config, out, seed, Some(ComparisonMode::VsSeparateSsl))
        }
        Command::Metrics {
            x,
            sparsity,
            q,
            s0_b,
            s0_omega,
            out,
        } => cmd_metrics(x, sparsity, q, s0_b, s0_omega, out),
    }
}

fn require_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::InvalidParam(format!(
            "input file not found: {}",
            path.display()
        )));
    }
    Ok(())
}

fn cmd_generate(config: Option<PathBuf>, out: PathBuf, seed: Option<u64>) -> Result<ExitCode> {
    let mut gen: GenConfig = match config {
        Some(path) => {
            require_input(&path)?;
            io::read_json(&path)?
        }
        None => GenConfig::default(),
    };
    if let Some(s) = seed {
        gen.seed = s;
    }
    gen.validate()?;
    let (data, truth) = generate_instance(&gen)?;

    fs::create_dir_all(&out)?;
    io::write_matrix_csv(&out.join("X.csv"), data.x())?;
    io::write_matrix_csv(&out.join("Y.csv"), data.y())?;
    io::write_matrix_csv(&out.join("truth_B0.csv"), &truth.b0)?;
    io::write_matrix_csv(&out.join("truth_Omega0.csv"), &truth.omega0)?;
    io::write_json(&out.join("truth_meta.json"), &io::TruthMeta::new(&gen, &truth))?;
    println!(
        "generated n={} p={} q={} (seed {}) into {}",
        gen.n,
        gen.p,
        gen.q,
        gen.seed,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    x: PathBuf,
    y: PathBuf,
    out: PathBuf,
    config: Option<PathBuf>,
    theory_tuned: bool,
    tau: Option<f64>,
    ladder: Option<PathBuf>,
) -> Result<ExitCode> {
    require_input(&x)?;
    require_input(&y)?;
    if let Some(path) = &config {
        require_input(path)?;
    }
    if let Some(path) = &ladder {
        require_input(path)?;
    }

    let x_m = io::read_matrix_csv(&x)?;
    let y_m = io::read_matrix_csv(&y)?;
    if x_m.nrows() != y_m.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} rows but Y has {}",
            x_m.nrows(),
            y_m.nrows()
        )));
    }
    let data = match Dataset::new(x_m.clone(), y_m.clone()) {
        Ok(d) => d,
        Err(_) => {
            log::warn!("design columns are not sqrt(n)-normalized; fitting without the convention");
            Dataset::unnormalized(x_m, y_m)?
        }
    };

    let tau_value = tau.unwrap_or(1e-3);
    let hp: Hyperparameters = if theory_tuned {
        theory_tuned_hyperparams(data.n(), data.p(), data.q(), &TuningKnobs::default(), tau_value)?
    } else {
        let path = config.ok_or_else(|| {
            Error::InvalidParam("pass --config <hyperparameters.json> or --theory-tuned".into())
        })?;
        let from_file: Hyperparameters = io::read_json(&path)?;
        match tau {
            Some(t) => Hyperparameters::new(from_file.beta().clone(), from_file.omega().clone(), t)?,
            None => from_file,
        }
    };

    let solver = SolverConfig {
        ladder: match ladder {
            Some(path) => Some(io::read_json(&path)?),
            None => None,
        },
        ..SolverConfig::default()
    };
    let result = fit(&data, &hp, &solver)?;

    fs::create_dir_all(&out)?;
    io::write_matrix_csv(&out.join("B_hat.csv"), result.estimate.b())?;
    io::write_matrix_csv(&out.join("Omega_hat.csv"), result.estimate.omega())?;
    io::write_json(
        &out.join("fit_summary.json"),
        &io::FitSummary::new(&hp, &solver, &result, data.columns_normalized()),
    )?;
    println!(
        "fit {} after {} outer iterations; effective dims B={} Omega={}",
        if result.converged {
            "converged"
        } else {
            "hit the iteration cap"
        },
        result.n_outer_iters,
        result.eff_dim_b,
        result.eff_dim_omega
    );
    Ok(if result.converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_experiment(
    config: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
    force_mode: Option<ComparisonMode>,
) -> Result<ExitCode> {
    let mut plan: ExperimentPlan = match config {
        Some(path) => {
            require_input(&path)?;
            io::read_json(&path)?
        }
        None => default_plan(),
    };
    if let Some(s) = seed {
        plan.base.seed = s;
    }
    if let Some(mode) = force_mode {
        plan.comparison_mode = mode;
    }
    plan.validate()?;

    let report = run_plan(&plan)?;
    fs::create_dir_all(&out)?;
    io::write_records_csv(&out.join("contraction_records.csv"), &report.cells)?;
    io::write_summary_json(&out.join("summary.json"), &report)?;
    io::write_rate_curve_csv(&out.join("rate_curve.csv"), &report)?;
    println!(
        "{} cells fitted, {} failed; outputs in {}",
        report.cells.len(),
        report.failures.len(),
        out.display()
    );
    Ok(if report.cells.is_empty() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

#[derive(Serialize)]
struct MetricsDoc {
    n: usize,
    p: usize,
    sparsity: usize,
    phi_sq: f64,
    phi_sq_exact: bool,
    eps_n: Option<f64>,
}

fn cmd_metrics(
    x: PathBuf,
    sparsity: usize,
    q: Option<usize>,
    s0_b: usize,
    s0_omega: usize,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    require_input(&x)?;
    let x_m = io::read_matrix_csv(&x)?;
    let phi = restricted_eigenvalue(&x_m, sparsity)?;
    let eps = match q {
        Some(q) => Some(epsilon_n(x_m.nrows(), x_m.ncols(), q, s0_b, s0_omega)?),
        None => None,
    };
    let doc = MetricsDoc {
        n: x_m.nrows(),
        p: x_m.ncols(),
        sparsity,
        phi_sq: phi.value,
        phi_sq_exact: phi.exact,
        eps_n: eps,
    };
    match eps {
        Some(e) => println!(
            "phi^2({sparsity}) = {}{}; eps_n = {e}",
            phi.value,
            if phi.exact { "" } else { " (upper bound)" }
        ),
        None => println!(
            "phi^2({sparsity}) = {}{}",
            phi.value,
            if phi.exact { "" } else { " (upper bound)" }
        ),
    }
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        io::write_json(&dir.join("metrics.json"), &doc)?;
    }
    Ok(ExitCode::SUCCESS)
}
