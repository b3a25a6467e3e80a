use clap::{Args, Parser, Subcommand, ValueEnum};
use nads::Hypothesis;
use nads_cli::scenario::Scenario;
use nads_cli::{grid, CliError};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nads", version, about = "Two-tier nano-abnormality detection: analysis, simulation and design")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "NADS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Write CSV here instead of standard output.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also write every resolved grid point as <hash>.toml into DIR.
    #[arg(long, value_name = "DIR")]
    dump_configs: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Truth {
    H0,
    H1,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic P_D, P_F, P_M for the scenario (and its [grid], if any).
    Analyze(Common),
    /// Monte Carlo estimate of the DGN decision rate.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_count)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "both")]
        truth: Truth,
    },
    /// Smallest M meeting P_D >= xi and P_F <= gamma.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        xi: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Analyze over the cartesian product of --vary axes and the [grid] table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// key=start:step:stop or key=v1,v2,... (repeatable).
        #[arg(long = "vary", value_name = "KEY=SPEC")]
        vary: Vec<String>,
    },
}

/// Accepts `100000` as well as `1e5`.
fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(n) = s.parse::<u64>() {
        return Ok(n);
    }
    match s.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x <= u64::MAX as f64 => Ok(x as u64),
        _ => Err(format!("`{s}` is not a non-negative whole number")),
    }
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn prepare(common: &Common, extra: Vec<grid::Axis>) -> Result<Vec<Scenario>, CliError> {
    let s = Scenario::load(&common.scenario)?;
    let pts = nads_cli::points(&s, extra)?;
    if let Some(dir) = &common.dump_configs {
        nads_cli::dump_configs(&pts, dir)?;
    }
    Ok(pts)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("thread count must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::Analyze(common) => {
            let rows = nads_cli::analyze(&prepare(&common, Vec::new())?)?;
            nads_cli::write_csv(&rows, sink(&common.out)?)
        }
        Command::Sweep { common, vary } => {
            let axes = vary.iter().map(|v| grid::parse_vary(v)).collect::<Result<Vec<_>, _>>()?;
            let rows = nads_cli::analyze(&prepare(&common, axes)?)?;
            nads_cli::write_csv(&rows, sink(&common.out)?)
        }
        Command::Simulate { common, trials, seed, truth } => {
            if trials == 0 {
                return Err(CliError::Config("--trials must be >= 1".into()));
            }
            let truths = match truth {
                Truth::H0 => vec![Hypothesis::H0],
                Truth::H1 => vec![Hypothesis::H1],
                Truth::Both => vec![Hypothesis::H0, Hypothesis::H1],
            };
            let results = nads_cli::simulate(&prepare(&common, Vec::new())?, &truths, trials, seed)?;
            for (row, _) in &results {
                eprintln!(
                    "{} {:?}: rate {:.6e} (99% CI {:.6e} .. {:.6e})",
                    row.config_hash, row.truth, row.rate, row.ci_low, row.ci_high
                );
            }
            let rows: Vec<_> = results.into_iter().map(|(r, _)| r).collect();
            nads_cli::write_csv(&rows, sink(&common.out)?)
        }
        Command::Optimize { common, xi, gamma } => {
            let s = Scenario::load(&common.scenario)?;
            if s.grid.is_some() {
                eprintln!("note: [grid] is ignored by optimize");
            }
            if let Some(dir) = &common.dump_configs {
                nads_cli::dump_configs(std::slice::from_ref(&s), dir)?;
            }
            let (res, rows) = nads_cli::optimize(&s, xi, gamma)?;
            println!("{}", nads_cli::design_summary(&res, s.design.m_max));
            if let Some(p) = &common.out {
                nads_cli::write_csv(&rows, std::fs::File::create(p)?)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
