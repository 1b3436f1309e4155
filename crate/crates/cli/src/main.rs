use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use relaxrk::dg::FluxKind;
use relaxrk::relax::Mode;
use relaxrk_cli::config::{self, Overrides, ProblemId, RunConfig, SchemeId};
use relaxrk_cli::convergence::{self, ConvergenceReport};
use relaxrk_cli::{driver, tables, CliError};

#[derive(Parser)]
#[command(
    name = "relaxrk",
    version,
    about = "Relaxation Runge-Kutta runs, convergence ladders and tables"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate an entropy-carrying ODE test problem.
    Ode(RunArgs),
    /// Integrate 1D Burgers with an explicit or IMEX scheme.
    BurgersImex(RunArgs),
    /// Integrate 1D Burgers with the multirate scheme.
    BurgersMultirate(RunArgs),
    /// Run a step-size ladder against a reference solution.
    Converge(RunArgs),
    /// Render convergence reports as an aligned table and a flat CSV.
    Tables(TablesArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Standard,
    Relaxation,
    Idt,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Standard => Mode::Standard,
            ModeArg::Relaxation => Mode::Relaxation,
            ModeArg::Idt => Mode::Idt,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FluxArg {
    #[value(alias = "ec")]
    EntropyConserving,
    #[value(alias = "lf", alias = "es")]
    LaxFriedrichs,
}

impl From<FluxArg> for FluxKind {
    fn from(f: FluxArg) -> FluxKind {
        match f {
            FluxArg::EntropyConserving => FluxKind::EntropyConserving,
            FluxArg::LaxFriedrichs => FluxKind::LaxFriedrichs,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's completion mode.
    #[arg(long)]
    mode: Option<ModeArg>,
    /// Override the config's interface flux.
    #[arg(long)]
    flux: Option<FluxArg>,
    /// Force the minmod limiter on.
    #[arg(long)]
    limiter: bool,
}

#[derive(Args)]
struct TablesArgs {
    /// Output directory for tables.txt and tables.csv.
    #[arg(long)]
    out: PathBuf,
    /// Convergence reports (JSON), rendered in argument order.
    #[arg(required = false)]
    reports: Vec<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let over = Overrides {
            mode: self.mode.map(Mode::from),
            flux: self.flux.map(FluxKind::from),
            limiter: if self.limiter { Some(true) } else { None },
        };
        config::load(&self.config, &over).map_err(CliError::Config)
    }
}

fn check_problem(cfg: &RunConfig, cmd: &str) -> Result<(), CliError> {
    let ok = match cmd {
        "ode" => cfg.problem.is_ode(),
        "burgers-imex" => cfg.problem == ProblemId::Burgers && cfg.scheme != SchemeId::Mrk2,
        "burgers-multirate" => cfg.problem == ProblemId::Burgers && cfg.scheme == SchemeId::Mrk2,
        _ => true,
    };
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "config.problem: {} with scheme {} does not fit the {cmd} subcommand",
            cfg.problem.label(),
            cfg.scheme.label()
        )))
    }
}

fn cmd_run(args: &RunArgs, cmd: &str) -> Result<(), CliError> {
    let cfg = args.load()?;
    check_problem(&cfg, cmd)?;
    let summary = driver::run(&cfg, &args.out)?;
    println!(
        "{}: {} steps to t = {:.6}, gamma in [{:.12}, {:.12}], artifacts in {}",
        cfg.method_label(),
        summary.steps,
        summary.t_final,
        summary.gamma_min,
        summary.gamma_max,
        args.out.display()
    );
    Ok(())
}

fn cmd_converge(args: &RunArgs) -> Result<(), CliError> {
    let cfg = args.load()?;
    let report = convergence::run_ladder(&cfg)?;
    std::fs::create_dir_all(&args.out)?;
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Run(format!("serializing report: {e}")))?;
    std::fs::write(args.out.join("report.json"), text + "\n")?;
    print!("{}", tables::render_text(std::slice::from_ref(&report)));
    Ok(())
}

fn cmd_tables(args: &TablesArgs) -> Result<(), CliError> {
    let mut reports: Vec<ConvergenceReport> = Vec::with_capacity(args.reports.len());
    for path in &args.reports {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("report {}: {e}", path.display())))?;
        let report = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("report {}: {e}", path.display())))?;
        reports.push(report);
    }
    std::fs::create_dir_all(&args.out)?;
    let text = tables::render_text(&reports);
    std::fs::write(args.out.join("tables.txt"), &text)?;
    std::fs::write(args.out.join("tables.csv"), tables::render_csv(&reports))?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Ode(args) => cmd_run(args, "ode"),
        Cmd::BurgersImex(args) => cmd_run(args, "burgers-imex"),
        Cmd::BurgersMultirate(args) => cmd_run(args, "burgers-multirate"),
        Cmd::Converge(args) => cmd_converge(args),
        Cmd::Tables(args) => cmd_tables(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
