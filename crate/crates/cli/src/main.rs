use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isoaffine_cli::{commands, report, CliError, Scenario};

#[derive(Parser)]
#[command(name = "isoaffine", version, about = "Affine gas expansion and perturbation runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true, env = "ISOAFFINE_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct Common {
    /// Scenario file; the built-in reference scenario if omitted
    #[arg(long, env = "ISOAFFINE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "ISOAFFINE_OUT", default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed
    #[arg(long, env = "ISOAFFINE_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the affine motion; write trajectory, frames and residuals
    Affine(Common),
    /// Run the perturbation problem
    Evolve(Common),
    /// Run the identity suites on seeded fields
    Verify(Common),
    /// Summarise ledgers into report.csv
    Report {
        /// Ledger files or directories
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, env = "ISOAFFINE_OUT", default_value = "out")]
        out: PathBuf,
    },
}

fn scenario(c: &Common) -> Result<Scenario, CliError> {
    let mut s = match &c.config {
        Some(p) => Scenario::load(p)?,
        None => Scenario::reference(),
    };
    if let Some(seed) = c.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let run = |c: &Common, f: fn(&Scenario, &std::path::Path) -> isoaffine_cli::Result<commands::Outputs>| {
        let s = scenario(c)?;
        for p in f(&s, &c.out)?.files {
            println!("{}", p.display());
        }
        Ok(())
    };
    match &cli.command {
        Command::Affine(c) => run(c, commands::affine),
        Command::Evolve(c) => run(c, commands::evolve),
        Command::Verify(c) => run(c, commands::verify),
        Command::Report { paths, out } => {
            let rows = report::report(paths)?;
            let text = report::to_csv(&rows);
            std::fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.clone(), source })?;
            let path = out.join("report.csv");
            isoaffine_cli::ledger::write_text(&path, &text)?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
