//! Command-line driver for the Nash equilibrium solvers.
//!
//! Subcommands run the two built-in benchmarks, solve config-defined
//! problems, and check the strong-monotonicity offset. Exit codes: 0 when
//! the solver terminates regularly, 2 when it hits the iteration cap, 1 on
//! any error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use nep_cli::config::{build_problem, parse_config};
use nep_cli::{table, vtk};
use nep_solver::diagnostics::build_table;
use nep_solver::mesh_fem::block_m_norm;
use nep_solver::problem::{make_example1, make_example2, AdjointMode, ExactSolution, NepProblem};
use nep_solver::semismooth::set_change_count;
use nep_solver::solvers::{run_solver, Method, SolveReport, SolverConfig, Termination};

#[derive(Parser)]
#[command(
    name = "nep",
    version,
    about = "Semi-smooth Newton and active-set solvers for PDE-constrained Nash equilibrium problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Four-player benchmark on the unit square with piecewise constant
    /// targets and an affine state bound (defaults: 64x64, alpha 1e-5).
    Example1(RunArgs),
    /// Four-player benchmark on (-1,1)^2 with a known equilibrium, reported
    /// against the exact solution (defaults: 64x64, alpha 0.1).
    Example2(RunArgs),
    /// Solve a problem defined in a config file (see docs/config-format.md).
    Solve {
        /// Path to the config file.
        config: PathBuf,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Estimate the strong-monotonicity offset of a config-defined problem
    /// and report whether alpha clears it.
    CheckOffset {
        /// Path to the config file.
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Cells in the x direction (default: benchmark default or config value).
    #[arg(long)]
    nx: Option<usize>,
    /// Cells in the y direction (default: same as nx).
    #[arg(long)]
    ny: Option<usize>,
    /// Control cost weight override.
    #[arg(long)]
    alpha: Option<f64>,
    /// Penalty weight override.
    #[arg(long)]
    rho: Option<f64>,
    /// Outer method.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Relative GMRES tolerance for the Newton systems.
    #[arg(long)]
    gmres_tol: Option<f64>,
    /// Outer iteration cap.
    #[arg(long)]
    max_outer: Option<usize>,
    /// Write the convergence table to this path as CSV.
    #[arg(long, value_name = "PATH")]
    out_table: Option<PathBuf>,
    /// Write the final state, controls, adjoints, and bound to this path as
    /// legacy-ASCII VTK.
    #[arg(long, value_name = "PATH")]
    out_fields: Option<PathBuf>,
    /// Run both methods and report their largest discrepancy.
    #[arg(long)]
    compare: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// Semi-smooth Newton with matrix-free GMRES steps.
    Ssn,
    /// Active-set method with direct saddle-system solves.
    As,
}

impl From<MethodArg> for Method {
    fn from(arg: MethodArg) -> Method {
        match arg {
            MethodArg::Ssn => Method::SemismoothNewton,
            MethodArg::As => Method::ActiveSet,
        }
    }
}

fn method_name(method: Method) -> &'static str {
    match method {
        Method::SemismoothNewton => "semi-smooth Newton",
        Method::ActiveSet => "active set",
    }
}

fn main() -> ExitCode {
    // Exit code 2 is reserved for the iteration cap, so usage errors map to
    // 1 instead of clap's default 2. Help and version requests come through
    // the same path and keep their success status.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Example1(args) => {
            let (nx, ny) = resolve_mesh(&args, 64);
            let (mut problem, solver) = make_example1(nx, ny);
            if let Some(alpha) = args.alpha {
                ensure_positive(alpha, "--alpha")?;
                problem.alpha = alpha;
            }
            let label = format!("example1  mesh {nx}x{ny}");
            execute(problem, solver, None, &args, &label)
        }
        Command::Example2(args) => {
            let (nx, ny) = resolve_mesh(&args, 64);
            let alpha = args.alpha.unwrap_or(0.1);
            ensure_positive(alpha, "--alpha")?;
            let (problem, solver, exact) = make_example2(nx, ny, alpha);
            let label = format!("example2  mesh {nx}x{ny}");
            execute(problem, solver, Some(exact), &args, &label)
        }
        Command::Solve { config, args } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut cfg =
                parse_config(&text).with_context(|| format!("parsing {}", config.display()))?;
            if let Some(nx) = args.nx {
                cfg.nx = nx;
            }
            if let Some(ny) = args.ny {
                cfg.ny = ny;
            } else if let Some(nx) = args.nx {
                cfg.ny = nx;
            }
            if cfg.nx < 2 || cfg.ny < 2 {
                bail!("mesh needs nx >= 2 and ny >= 2");
            }
            if let Some(alpha) = args.alpha {
                ensure_positive(alpha, "--alpha")?;
                cfg.alpha = alpha;
            }
            let (problem, solver) = build_problem(&cfg)?;
            let label = format!(
                "solve {}  mesh {}x{}",
                config.display(),
                cfg.nx,
                cfg.ny
            );
            execute(problem, solver, None, &args, &label)
        }
        Command::CheckOffset { config } => check_offset(&config),
    }
}

fn resolve_mesh(args: &RunArgs, default_nx: usize) -> (usize, usize) {
    let nx = args.nx.unwrap_or(default_nx);
    let ny = args.ny.unwrap_or(nx);
    (nx, ny)
}

fn ensure_positive(value: f64, flag: &str) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        bail!("{flag} must be positive and finite");
    }
    Ok(())
}

/// Applies the remaining flag overrides, runs one or both methods, prints
/// tables, writes the requested artifacts, and maps the termination to the
/// exit code.
fn execute(
    mut problem: NepProblem,
    mut solver: SolverConfig,
    exact: Option<ExactSolution>,
    args: &RunArgs,
    label: &str,
) -> Result<ExitCode> {
    if let Some(rho) = args.rho {
        ensure_positive(rho, "--rho")?;
        problem.rho = rho;
    }
    if let Some(tol) = args.gmres_tol {
        ensure_positive(tol, "--gmres-tol")?;
        solver.gmres_tol = tol;
    }
    if let Some(cap) = args.max_outer {
        if cap == 0 {
            bail!("--max-outer must be at least 1");
        }
        solver.max_outer = cap;
    }
    if let Some(method) = args.method {
        solver.method = method.into();
    }

    if args.compare {
        if args.method.is_some() {
            bail!("--compare runs both methods; drop --method");
        }
        return compare_methods(&problem, &solver, exact.as_ref(), args, label);
    }

    println!(
        "{label}  alpha {:e}  rho {}  method {}",
        problem.alpha,
        problem.rho,
        method_name(solver.method)
    );
    let report = run_solver(&problem, &solver)?;
    print_report(&problem, &report, exact.as_ref());
    write_artifacts(&problem, &report, exact.as_ref(), args)?;
    Ok(exit_for(&[&report]))
}

/// Runs both methods on the same problem and reports where their iterates
/// and classifications part ways, if anywhere.
fn compare_methods(
    problem: &NepProblem,
    solver: &SolverConfig,
    exact: Option<&ExactSolution>,
    args: &RunArgs,
    label: &str,
) -> Result<ExitCode> {
    let mut reports = Vec::new();
    for method in [Method::SemismoothNewton, Method::ActiveSet] {
        let mut config = solver.clone();
        config.method = method;
        println!(
            "{label}  alpha {:e}  rho {}  method {}",
            problem.alpha,
            problem.rho,
            method_name(method)
        );
        let report = run_solver(problem, &config)?;
        print_report(problem, &report, exact);
        println!();
        reports.push(report);
    }
    let (ssn, active) = (&reports[0], &reports[1]);

    if ssn.rows.len() != active.rows.len() {
        println!(
            "methods took different iteration counts: {} vs {}",
            ssn.rows.len(),
            active.rows.len()
        );
    }
    let common_sets = ssn.sets_history.len().min(active.sets_history.len());
    let max_set_diff = (0..common_sets)
        .map(|k| set_change_count(&ssn.sets_history[k], &active.sets_history[k]))
        .max()
        .unwrap_or(0);
    println!(
        "largest classification discrepancy over {} recorded iterations: {} nodes",
        common_sets, max_set_diff
    );
    let common_u = ssn.u_history.len().min(active.u_history.len());
    let max_u_diff = (0..common_u)
        .map(|k| {
            let diff: Vec<Vec<f64>> = ssn.u_history[k]
                .iter()
                .zip(&active.u_history[k])
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect();
            block_m_norm(&problem.forms.mass, &diff)
        })
        .fold(0.0, f64::max);
    println!("largest control discrepancy (M-norm): {max_u_diff:.3e}");

    write_artifacts(problem, ssn, exact, args)?;
    Ok(exit_for(&[ssn, active]))
}

fn print_report(problem: &NepProblem, report: &SolveReport, exact: Option<&ExactSolution>) {
    let table = build_table(report, &problem.forms.mass, exact);
    print!("{}", table::render_text(&table));
    let outcome = match report.termination {
        Termination::SetStationary => "classification repeated",
        Termination::ResidualFallback => "optimality residual crossed the fallback threshold",
        Termination::IterationCap => "iteration cap reached without set stationarity",
    };
    println!(
        "terminated after {} iterations: {} (wall {:.2} s)",
        report.rows.len(),
        outcome,
        report.wall_seconds
    );
    println!(
        "final optimality residual {:.3e} ({})",
        report.final_optimality,
        if report.certified {
            "certified equilibrium"
        } else {
            "not certified"
        }
    );
}

/// Writes the CSV table and VTK fields when requested. Fields come from the
/// final control iterate with the state re-solved and adjoints rebuilt in
/// exact multiplier form, the same quantities the optimality residual uses.
fn write_artifacts(
    problem: &NepProblem,
    report: &SolveReport,
    exact: Option<&ExactSolution>,
    args: &RunArgs,
) -> Result<()> {
    if let Some(path) = &args.out_table {
        let table = build_table(report, &problem.forms.mass, exact);
        fs::write(path, table::to_csv(&table))
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote table to {}", path.display());
    }
    if let Some(path) = &args.out_fields {
        let u = match report.u_history.last() {
            Some(u) => u.clone(),
            None => vec![vec![0.0; problem.n_vertices()]; problem.n_players()],
        };
        let y = problem.solve_state(&u);
        let p: Vec<Vec<f64>> = (0..problem.n_players())
            .map(|nu| problem.solve_adjoint(nu, &y, AdjointMode::ExactMultiplier))
            .collect();
        let arrays = vtk::field_arrays(&y, &u, &p, &problem.psi);
        fs::write(path, vtk::render(&problem.mesh, &arrays))
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote fields to {}", path.display());
    }
    Ok(())
}

fn exit_for(reports: &[&SolveReport]) -> ExitCode {
    if reports
        .iter()
        .any(|r| r.termination == Termination::IterationCap)
    {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn check_offset(config: &Path) -> Result<ExitCode> {
    let text =
        fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = parse_config(&text).with_context(|| format!("parsing {}", config.display()))?;
    let (problem, _) = build_problem(&cfg)?;
    let estimate = problem.offset_estimate()?;
    println!(
        "mesh {}x{}  players {}",
        cfg.nx,
        cfg.ny,
        problem.n_players()
    );
    for (nu, norm) in estimate.player_norms.iter().enumerate() {
        println!("player {} cross-observation norm: {:.6e}", nu + 1, norm);
    }
    println!("total offset bound: {:.6e}", estimate.total);
    println!("alpha: {:.6e}", problem.alpha);
    if estimate.alpha_ok {
        println!("monotonicity condition satisfied: alpha exceeds the offset bound");
    } else {
        println!("monotonicity condition NOT satisfied: alpha is at or below the offset bound");
    }
    Ok(ExitCode::SUCCESS)
}
