//! Command-line experiment runner: configuration, orchestration and
//! reproducible CSV/report emission.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{
    CostateConfig, Experiment, ExperimentConfig, Method, OutputConfig, ProblemConfig, ReferenceConfig, ShootingConfig, SolverConfig, StateConfig,
    SystemConfig, VariationalConfig,
};
pub use output::{
    comparison_csv, del_diagnostics_csv, del_trajectory_csv, pmp_diagnostics_csv, pmp_trajectory_csv, Csv, NumberFormat, Report, DIAGNOSTICS_HEADER,
};

use crate::error::{Error, Result};
use crate::geometry::check_model;
use crate::pmp::{solve_shooting, ShootingOutcome, TerminalMode};
use crate::systems::Preset;
use crate::varint::{compare_refinement, diagnostics, reintegrate_controls, regularity_sweep, solve_del, state_distance, REINTEGRATION_SUBSTEPS};

/// Bundled experiment configurations, by file name.
pub const BUNDLED_CONFIGS: [(&str, &str); 3] = [
    ("particle-case1.cfg", include_str!("../../configs/particle-case1.cfg")),
    ("particle-case2.cfg", include_str!("../../configs/particle-case2.cfg")),
    ("sleigh-paper51.cfg", include_str!("../../configs/sleigh-paper51.cfg")),
];

#[derive(Debug, Parser)]
#[command(name = "nhtrack", version, about = "Optimal trajectory tracking for nonholonomic mechanical systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the configured problem and write trajectory.csv, diagnostics.csv and report.txt.
    Run(JobArgs),
    /// Variational solve at h and h/2 with RK4 re-integration of the recovered controls.
    Compare(JobArgs),
    /// Run the model invariant suite on a preset.
    Check(CheckArgs),
    /// List the system presets and bundled configurations.
    Presets(PresetsArgs),
}

#[derive(Debug, Args)]
pub struct JobArgs {
    /// Experiment configuration (repeat for several experiments).
    #[arg(long = "config", required = true, value_name = "PATH")]
    pub configs: Vec<PathBuf>,
    /// Output directory; with several configs each gets a subdirectory named after its file.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of experiments run concurrently.
    #[arg(long, default_value_t = 1, value_name = "K")]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Take the preset and seed from this configuration.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Preset name, e.g. `particle` or `sleigh:custom{m=2,J=3,a=0.1}`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Number of random sample configurations.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Seed of the sample generator (overrides the config seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PresetsArgs {
    /// Print the text of a bundled configuration.
    #[arg(long, value_name = "NAME")]
    pub show: Option<String>,
}

/// Process exit status of a command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Converged,
    NotConverged,
    ConfigError,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Converged => 0,
            Status::ConfigError => 1,
            Status::NotConverged => 2,
        }
    }

    /// Combined status of several experiments: a config error dominates nonconvergence.
    fn worst(a: Status, b: Status) -> Status {
        a.max(b)
    }
}

/// Entry point of the `nhtrack` binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(execute(cli).code())
}

pub fn execute(cli: Cli) -> Status {
    match cli.command {
        Command::Run(args) => run_jobs(&args, JobKind::Run),
        Command::Compare(args) => run_jobs(&args, JobKind::Compare),
        Command::Check(args) => check(&args),
        Command::Presets(args) => presets(&args),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum JobKind {
    Run,
    Compare,
}

fn job_directory(args: &JobArgs, path: &Path, config: &ExperimentConfig) -> PathBuf {
    let base = args.out.clone().unwrap_or_else(|| config.output.directory.clone());
    if args.configs.len() > 1 {
        base.join(path.file_stem().unwrap_or_default())
    } else {
        base
    }
}

fn run_jobs(args: &JobArgs, kind: JobKind) -> Status {
    let jobs = args.jobs.max(1).min(args.configs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<(Status, String)>>> = Mutex::new(vec![None; args.configs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(path) = args.configs.get(i) else { break };
                let outcome = run_one(args, path, kind);
                results.lock().expect("no panics while holding the lock")[i] = Some(outcome);
            });
        }
    });
    let mut status = Status::Converged;
    for (path, result) in args.configs.iter().zip(results.into_inner().expect("threads joined")) {
        let (s, message) = result.expect("every job ran");
        match s {
            Status::ConfigError => eprintln!("{}: {message}", path.display()),
            _ => println!("{}: {message}", path.display()),
        }
        status = Status::worst(status, s);
    }
    status
}

fn run_one(args: &JobArgs, path: &Path, kind: JobKind) -> (Status, String) {
    let experiment = match ExperimentConfig::load(path).and_then(ExperimentConfig::build) {
        Ok(e) => e,
        Err(e) => return (Status::ConfigError, format!("configuration error: {e}")),
    };
    let dir = job_directory(args, path, &experiment.config);
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return (Status::ConfigError, format!("cannot create {}: {e}", dir.display()));
    }
    let result = match kind {
        JobKind::Run => run_experiment(&experiment, path, &dir),
        JobKind::Compare => compare_experiment(&experiment, path, &dir),
    };
    match result {
        Ok(summary) => {
            let status = if summary.converged { Status::Converged } else { Status::NotConverged };
            (status, format!("{} -> {}", summary.message, dir.display()))
        }
        Err(e) => {
            let mut report = Report::default();
            report.section("nhtrack failure");
            report.field("config", path.display());
            report.field("error", &e);
            let _ = report.write(&dir.join("report.txt"));
            (Status::NotConverged, format!("solver failure: {e}"))
        }
    }
}

/// Headline of a finished experiment.
#[derive(Clone, Debug)]
pub struct Summary {
    pub converged: bool,
    pub message: String,
}

fn report_header(report: &mut Report, title: &str, experiment: &Experiment, path: &Path) {
    report.section(title);
    report.field("config", path.display());
    report.field("system", experiment.model.name());
    report.field("method", experiment.config.solver.method);
    report.field("terminal mode", experiment.problem.terminal);
}

fn echo_settings(report: &mut Report, experiment: &Experiment) {
    report.section("settings (canonical configuration)");
    report.line(experiment.config.echo().trim_end());
}

fn columns(report: &mut Report, files: &[(&str, &Csv)]) {
    report.section("columns");
    for (name, csv) in files {
        report.field(name, csv.header().join(","));
    }
}

/// Solves the configured problem and writes `trajectory.csv`, `diagnostics.csv` and `report.txt` into `dir`.
pub fn run_experiment(experiment: &Experiment, path: &Path, dir: &Path) -> Result<Summary> {
    match experiment.config.solver.method {
        Method::PmpShooting => run_shooting(experiment, path, dir),
        Method::Variational => run_variational(experiment, path, dir),
    }
}

/// Shooting with optional warm-started Mayer-weight continuation; returns every stage.
pub fn shooting_stages(experiment: &Experiment) -> Result<Vec<(f64, ShootingOutcome)>> {
    let model = experiment.model.as_ref();
    let settings = experiment.config.shooting_settings()?;
    let mut weights = experiment.config.solver.shooting.omega_continuation.clone();
    if weights.is_empty() || experiment.problem.terminal == TerminalMode::Hard {
        weights = vec![experiment.problem.omega];
    }
    let mut alpha = experiment.config.alpha0(model);
    let mut stages = Vec::with_capacity(weights.len());
    for w in weights {
        let problem = experiment.problem.clone().with_omega(w);
        let outcome = solve_shooting(model, &problem, &alpha, &settings)?;
        alpha = outcome.alpha.clone();
        stages.push((w, outcome));
    }
    Ok(stages)
}

fn run_shooting(experiment: &Experiment, path: &Path, dir: &Path) -> Result<Summary> {
    let model = experiment.model.as_ref();
    let problem = &experiment.problem;
    let format = NumberFormat::new(experiment.config.output.precision);
    let stages = shooting_stages(experiment)?;
    let (_, outcome) = stages.last().expect("at least one stage");
    let traj = &outcome.trajectory;

    let trajectory = pmp_trajectory_csv(model, traj, format);
    let diag = pmp_diagnostics_csv(model, problem, traj, format)?;
    trajectory.write(&dir.join("trajectory.csv"))?;
    diag.write(&dir.join("diagnostics.csv"))?;

    let cost = traj.cost(model, problem)?;
    let terminal_error = traj.terminal_error(model, problem)?;
    let mut report = Report::default();
    report_header(&mut report, "nhtrack run report", experiment, path);
    columns(&mut report, &[("trajectory.csv", &trajectory), ("diagnostics.csv", &diag)]);
    for (w, stage) in &stages {
        report.section(&format!("newton log (omega = {w})"));
        report.newton_log(&stage.iterations, format);
        report.field("converged", stage.converged);
        report.field("terminal configuration error", format.fmt(stage.trajectory.terminal_configuration_error(model, &problem.clone().with_omega(*w))?));
    }
    report.section("result");
    report.field("converged", outcome.converged);
    report.field("newton iterations", outcome.iterations.len() - 1);
    report.field("residual norm", format.fmt(outcome.residual_norm));
    report.field("alpha lambda", output::display_vector(&outcome.alpha.lambda, format));
    report.field("alpha mu", output::display_vector(&outcome.alpha.mu, format));
    report.field("cost running", format.fmt(cost.running));
    report.field("cost terminal", format.fmt(cost.terminal));
    report.field("cost total", format.fmt(cost.total));
    report.field("terminal tracking error", format.fmt(terminal_error));
    report.field("terminal configuration error", format.fmt(traj.terminal_configuration_error(model, problem)?));
    report.field("final configuration", output::display_configuration(model, &traj.states.last().expect("non-empty").q, format));
    report.field("constraint residual (inf)", format.fmt(traj.constraint_residual(model)?));
    report.field("stationarity defect", format.fmt(traj.stationarity_defect(problem)));
    echo_settings(&mut report, experiment);
    report.write(&dir.join("report.txt"))?;

    Ok(Summary {
        converged: outcome.converged,
        message: format!(
            "{} after {} iterations, residual {}, cost {}, terminal tracking error {}",
            if outcome.converged { "converged" } else { "NOT converged" },
            outcome.iterations.len() - 1,
            format.fmt(outcome.residual_norm),
            format.fmt(cost.total),
            format.fmt(terminal_error),
        ),
    })
}

fn run_variational(experiment: &Experiment, path: &Path, dir: &Path) -> Result<Summary> {
    let model = experiment.model.as_ref();
    let problem = &experiment.problem;
    let format = NumberFormat::new(experiment.config.output.precision);
    let settings = experiment.config.solver.variational.settings();
    let outcome = solve_del(model, problem, experiment.config.del_grid()?, &settings)?;
    let traj = &outcome.trajectory;

    let rows = diagnostics(model, problem, traj, settings.psi_velocity)?;
    let trajectory = del_trajectory_csv(model, traj, format);
    let diag = del_diagnostics_csv(&rows, format);
    trajectory.write(&dir.join("trajectory.csv"))?;
    diag.write(&dir.join("diagnostics.csv"))?;

    let psi = traj.constraint_residuals(model, settings.psi_velocity);
    let first = if settings.enforce_first_interval { 0 } else { 1 };
    let enforced_max = psi[first..].iter().copied().fold(0.0, f64::max);
    let end = traj.nodes.last().expect("non-empty");
    let reference_end = problem.reference_at(problem.horizon)?;
    let regularity = regularity_sweep(model, problem, traj, &settings)?;
    let worst_condition = regularity.iter().map(|r| r.condition).fold(0.0, f64::max);
    let cost = traj.cost(model, problem)?;

    let mut report = Report::default();
    report_header(&mut report, "nhtrack run report", experiment, path);
    columns(&mut report, &[("trajectory.csv", &trajectory), ("diagnostics.csv", &diag)]);
    report.line("interval columns (u, lambda, constraint_residual) refer to [t_k, t_k+1] and are blank at the last node");
    report.section("newton log");
    report.newton_log(&outcome.iterations, format);
    report.section("result");
    report.field("converged", outcome.converged);
    report.field("newton iterations", outcome.iterations.len() - 1);
    report.field("residual norm (inf)", format.fmt(outcome.residual_norm));
    report.field("steps", traj.steps());
    report.field("h", format.fmt(traj.h()));
    report.field("max enforced psi residual", format.fmt(enforced_max));
    report.field("first interval psi residual", format.fmt(psi[0]));
    report.field("cost total", format.fmt(cost));
    report.field("action sum", format.fmt(rows.last().expect("non-empty").action));
    report.field("final node", output::display_configuration(model, &end.q, format));
    report.field("final node equals reference", *end == reference_end);
    report.field("terminal tracking error", format.fmt(state_distance(model, end, &reference_end)));
    report.field("regularity (max condition)", format.fmt(worst_condition));
    report.field("regular at every interval", regularity.iter().all(|r| r.nonsingular));
    echo_settings(&mut report, experiment);
    report.write(&dir.join("report.txt"))?;

    Ok(Summary {
        converged: outcome.converged,
        message: format!(
            "{} after {} iterations, residual {}, max enforced psi {}, final node equals reference: {}",
            if outcome.converged { "converged" } else { "NOT converged" },
            outcome.iterations.len() - 1,
            format.fmt(outcome.residual_norm),
            format.fmt(enforced_max),
            *end == reference_end,
        ),
    })
}

/// The h-halving study of the variational solution, plus an optional
/// cross-check of the total cost against shooting.
pub fn compare_experiment(experiment: &Experiment, path: &Path, dir: &Path) -> Result<Summary> {
    let model = experiment.model.as_ref();
    let problem = &experiment.problem;
    let format = NumberFormat::new(experiment.config.output.precision);
    let settings = experiment.config.solver.variational.settings();
    let study = compare_refinement(model, problem, experiment.config.del_grid()?, &settings)?;

    let coarse = &study.coarse.trajectory;
    let reintegrated = reintegrate_controls(model, coarse, REINTEGRATION_SUBSTEPS)?;
    let side_by_side = comparison_csv(model, coarse, &reintegrated, format);
    let rows = diagnostics(model, problem, coarse, settings.psi_velocity)?;
    let trajectory = del_trajectory_csv(model, coarse, format);
    let diag = del_diagnostics_csv(&rows, format);
    side_by_side.write(&dir.join("comparison.csv"))?;
    trajectory.write(&dir.join("trajectory.csv"))?;
    diag.write(&dir.join("diagnostics.csv"))?;

    let mut converged = study.coarse.converged && study.fine.converged;
    let mut report = Report::default();
    report_header(&mut report, "nhtrack compare report", experiment, path);
    columns(&mut report, &[("comparison.csv", &side_by_side), ("trajectory.csv", &trajectory), ("diagnostics.csv", &diag)]);
    report.line("all intervals are constrained in this study (enforce_first_interval = true)");
    report.section("h-halving");
    for (label, level, disc) in [("h", &study.coarse, study.coarse_discrepancy), ("h/2", &study.fine, study.fine_discrepancy)] {
        report.field(&format!("steps ({label})"), level.trajectory.steps());
        report.field(&format!("converged ({label})"), level.converged);
        report.field(&format!("newton iterations ({label})"), level.iterations.len() - 1);
        report.field(&format!("endpoint discrepancy ({label})"), format.fmt(disc));
    }
    report.field("discrepancy ratio", format.fmt(study.ratio()));

    let mut message = format!("discrepancy ratio {}", format.fmt(study.ratio()));
    if experiment.config.solver.compare_with_shooting {
        let stages = shooting_stages(experiment)?;
        let (_, shooting) = stages.last().expect("at least one stage");
        let pmp_cost = shooting.trajectory.cost(model, problem)?.total;
        let del_cost = coarse.cost(model, problem)?;
        let gap = (del_cost - pmp_cost).abs() / pmp_cost.abs();
        converged &= shooting.converged;
        report.section("cross-method cost");
        report.field("shooting converged", shooting.converged);
        report.field("shooting cost", format.fmt(pmp_cost));
        report.field("variational cost", format.fmt(del_cost));
        report.field("relative gap", format.fmt(gap));
        message.push_str(&format!(", cost gap {}", format.fmt(gap)));
    }
    echo_settings(&mut report, experiment);
    report.write(&dir.join("report.txt"))?;
    Ok(Summary { converged, message })
}

fn check(args: &CheckArgs) -> Status {
    let resolved = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::load(path).and_then(|c| Ok((c.system.preset.parse::<Preset>()?, c.output.seed))),
        (None, Some(name)) => name.parse::<Preset>().map(|p| (p, 0)),
        (None, None) => Err(Error::Config("either --config or --preset is required".into())),
    };
    let (preset, seed) = match resolved {
        Ok(x) => x,
        Err(e) => {
            eprintln!("{e}");
            return Status::ConfigError;
        }
    };
    let model = match preset.build() {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            return Status::ConfigError;
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.unwrap_or(seed));
    let samples: Vec<_> = (0..args.samples.max(1))
        .map(|_| nalgebra::DVector::from_fn(model.dim(), |_, _| rng.random_range(-3.0..3.0)))
        .collect();
    println!("invariant suite for {} ({} samples)", model.name(), samples.len());
    let mut all = true;
    for c in check_model(model.as_ref(), &samples) {
        all &= c.passed;
        println!("{:<6} {:<40} worst {:.3e} (tolerance {:.1e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.worst, c.tolerance);
    }
    if all {
        Status::Converged
    } else {
        Status::NotConverged
    }
}

fn presets(args: &PresetsArgs) -> Status {
    if let Some(name) = &args.show {
        return match BUNDLED_CONFIGS.iter().find(|(n, _)| n == name || n.trim_end_matches(".cfg") == name) {
            Some((_, text)) => {
                print!("{text}");
                Status::Converged
            }
            None => {
                eprintln!("no bundled configuration named `{name}`");
                Status::ConfigError
            }
        };
    }
    println!("systems:");
    for (name, description) in Preset::catalogue() {
        println!("  {name:<32} {description}");
    }
    println!("bundled configurations (print with --show <name>):");
    for (name, text) in BUNDLED_CONFIGS {
        let summary = ExperimentConfig::parse(text)
            .map(|c| format!("{} / {}", c.system.preset, c.solver.method))
            .unwrap_or_else(|e| format!("invalid: {e}"));
        println!("  {name:<32} {summary}");
    }
    Status::Converged
}
