//! `cmkt`: run market scenarios from the command line.
//!
//! Exit status is 0 when every check passes, 1 when a check fails, 2 on
//! input errors and 3 when a solver does not converge.

use std::{fs, path::PathBuf, process::ExitCode};

use clap::{Parser, Subcommand, ValueEnum};
use condmarket::{
    experiment::{apply_tolerance, execute, tolerance_applies, Command, RunReport, TOLERANCE_NAMES},
    scenario::{parse_scenario, validate, ScenarioFile},
    Error,
};

/// Prefix of environment variables overriding tolerances, e.g. `CMKT_TOL_CLEAR_TOL=1e-9`.
const ENV_PREFIX: &str = "CMKT_TOL_";

const EXIT_CHECK: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "cmkt", version, about = "Solve and check conditional-security market scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Also write the JSON report to this path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Fail on claim checks as well as invariants.
    #[arg(long, global = true)]
    strict: bool,

    /// Tolerance override `name=value`; repeatable. Overrides CMKT_TOL_<NAME>.
    #[arg(long = "tol", global = true, value_parser = parse_tol)]
    tols: Vec<(String, f64)>,

    /// Report format on standard output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run the experiment the scenario selects.
    Run { file: PathBuf },
    /// Check quotes such as `A2=0.4` or `A2|A1=0.3` for arbitrage.
    Arbitrage {
        file: PathBuf,
        #[arg(long = "quote", required = true)]
        quotes: Vec<String>,
    },
    /// Run the security-creation protocol.
    Protocol { file: PathBuf },
    /// Search random populations for a consensus gap.
    Search {
        file: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the best trial as a replayable scenario.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Compare the compact market with the fully connected benchmark.
    Compare { file: PathBuf },
}

fn parse_tol(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let name = name.trim();
    if !TOLERANCE_NAMES.contains(&name) {
        return Err(format!("unknown tolerance `{name}`; known: {}", TOLERANCE_NAMES.join(", ")));
    }
    let value: f64 = value.trim().parse().map_err(|e| format!("{name}: {e}"))?;
    Ok((name.to_string(), value))
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NoConvergence { .. } | Error::UnboundedDemand(_) | Error::InfeasibleProblem(_) => EXIT_SOLVER,
            _ => EXIT_INPUT,
        };
        Failure { code, message: e.to_string() }
    }
}

fn input_error(message: String) -> Failure {
    Failure { code: EXIT_INPUT, message }
}

fn env_tolerances() -> Result<Vec<(String, f64)>, Failure> {
    let mut out = Vec::new();
    for name in TOLERANCE_NAMES {
        let var = format!("{ENV_PREFIX}{}", name.to_uppercase());
        if let Ok(raw) = std::env::var(&var) {
            let value = raw.trim().parse().map_err(|e| input_error(format!("{var}: {e}")))?;
            out.push((name.to_string(), value));
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let file = match &cli.command {
        Cmd::Run { file } | Cmd::Arbitrage { file, .. } | Cmd::Protocol { file } | Cmd::Search { file, .. } | Cmd::Compare { file } => file,
    };
    let text = fs::read_to_string(file).map_err(|e| input_error(format!("{}: {e}", file.display())))?;
    let mut source: ScenarioFile = parse_scenario(&text)?.source;

    let mut command = match &cli.command {
        Cmd::Run { .. } => Command::Run,
        Cmd::Compare { .. } => Command::Compare,
        Cmd::Protocol { .. } => Command::Protocol,
        Cmd::Arbitrage { quotes, .. } => Command::Arbitrage { quotes: quotes.clone(), tol: None },
        Cmd::Search { trials, seed, .. } => Command::Search { trials: *trials, seed: *seed },
    };
    // environment first so that flags win; environment values skip what the experiment does not read
    let env = env_tolerances()?;
    for (name, value, from_flag) in env.iter().map(|(n, v)| (n, *v, false)).chain(cli.tols.iter().map(|(n, v)| (n, *v, true))) {
        if let (Command::Arbitrage { tol, .. }, "arb_tol") = (&mut command, name.as_str()) {
            if !(value.is_finite() && value > 0.0) {
                return Err(input_error(format!("tolerance arb_tol = {value} must be positive")));
            }
            *tol = Some(value);
        } else if from_flag || tolerance_applies(&source, name) {
            apply_tolerance(&mut source, name, value)?;
        }
    }
    let scenario = validate(source)?;

    let report = execute(&scenario, &command)?;
    emit(&cli, &report)?;
    if let Cmd::Search { emit: Some(path), .. } = &cli.command {
        let found = report.search.as_ref().and_then(|s| s.outcome.scenario.as_ref());
        match found {
            Some(file) => write(path, &format!("{}\n", serde_json::to_string_pretty(file).expect("scenario serializes")))?,
            None => eprintln!("no trial finished; nothing written to {}", path.display()),
        }
    }

    Ok(if report.stalled() {
        EXIT_SOLVER
    } else if !report.passed_at(cli.strict) {
        EXIT_CHECK
    } else {
        0
    })
}

fn write(path: &PathBuf, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn emit(cli: &Cli, report: &RunReport) -> Result<(), Failure> {
    match cli.format {
        Format::Text => print!("{}", report.to_text()),
        Format::Json => println!("{}", report.to_json()),
    }
    if let Some(path) = &cli.out {
        write(path, &format!("{}\n", report.to_json()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
