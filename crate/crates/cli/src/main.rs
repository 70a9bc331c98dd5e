mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "tiegrid", version, about = "Cascading failures, unified frequency control and tie-line switching on DC grid models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CaseArgs {
    /// Case file (.json or MATPOWER .m), or the name of a bundled case.
    case: String,
    /// Reject unknown fields in JSON cases.
    #[arg(long)]
    strict_parse: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// DC power flow, or the steady-state control program after failures.
    Solve {
        #[command(flatten)]
        case: CaseArgs,
        /// Failed line as FROM-TO bus ids; repeatable.
        #[arg(long = "fail", value_parser = parse_line)]
        failures: Vec<(u32, u32)>,
        /// Drop line limits from the control program.
        #[arg(long)]
        agc: bool,
        /// Replace the case dispatch with the DC OPF solution first.
        #[arg(long)]
        opf: bool,
        #[arg(long, default_value_t = 0.5)]
        dual_threshold: f64,
        /// Also write solve.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One cascade trace.
    Cascade {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long = "fail", value_parser = parse_line, required = true)]
        failures: Vec<(u32, u32)>,
        #[arg(long, value_enum, default_value_t = Rule::Uc)]
        rule: Rule,
        #[arg(long, default_value_t = 100)]
        max_stages: usize,
        /// Write cascade.json and stages.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Control areas and tie-line switching.
    Partition {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, value_enum, default_value_t = PartitionMethod::Modularity)]
        method: PartitionMethod,
        #[arg(long, value_enum, default_value_t = Switching::LargestFlow)]
        switching: Switching,
        /// Write partition.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Single-line contingency sweep over strategies and scaling factors.
    Sweep {
        #[command(flatten)]
        case: CaseArgs,
        /// `auto` (modularity areas, largest-flow switching), `case` (the
        /// partition block or bus areas of the case) or a partition JSON file.
        #[arg(long, default_value = "auto")]
        partition: String,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5")]
        alpha: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "uc-tree,uc-mesh,agc-tree,agc-mesh")]
        strategies: Vec<tiegrid::harness::Strategy>,
        #[arg(long, default_value_t = 100)]
        max_stages: usize,
        #[arg(long, default_value_t = 1e-4)]
        agr_tol: f64,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
    },
    /// The 39-bus two-area demonstration.
    Demo39 {
        /// Case to run instead of the bundled 39-bus system.
        #[arg(default_value = "ieee39")]
        case: String,
        #[arg(long)]
        strict_parse: bool,
        #[arg(long, default_value_t = 0.5)]
        dual_threshold: f64,
        #[arg(long, default_value_t = 60.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value = "demo39-out")]
        out: PathBuf,
    },
    /// Convert a MATPOWER case to the JSON case format.
    Import {
        file: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    Uc,
    Agc,
    Droop,
    Proportional,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum PartitionMethod {
    Modularity,
    Given,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Switching {
    Optimal,
    LargestFlow,
}

fn parse_line(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s
        .split_once(['-', ','])
        .ok_or_else(|| format!("expected FROM-TO, got '{s}'"))?;
    let a = a.trim().parse().map_err(|_| format!("bad bus id '{a}'"))?;
    let b = b.trim().parse().map_err(|_| format!("bad bus id '{b}'"))?;
    Ok((a, b))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve {
            case,
            failures,
            agc,
            opf,
            dual_threshold,
            out,
        } => commands::solve(&case.case, case.strict_parse, &failures, agc, opf, dual_threshold, out),
        Command::Cascade {
            case,
            failures,
            rule,
            max_stages,
            out,
        } => commands::cascade(&case.case, case.strict_parse, &failures, rule, max_stages, out),
        Command::Partition {
            case,
            method,
            switching,
            out,
        } => commands::partition(&case.case, case.strict_parse, method, switching, out),
        Command::Sweep {
            case,
            partition,
            alpha,
            strategies,
            max_stages,
            agr_tol,
            workers,
            out,
        } => commands::sweep(commands::SweepArgs {
            case: case.case,
            strict_parse: case.strict_parse,
            partition,
            alphas: alpha,
            strategies,
            max_stages,
            agr_tol,
            workers,
            out,
        }),
        Command::Demo39 {
            case,
            strict_parse,
            dual_threshold,
            horizon,
            dt,
            out,
        } => commands::demo39(&case, strict_parse, dual_threshold, horizon, dt, &out),
        Command::Import { file, out } => commands::import(&file, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tiegrid: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
