use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use fluctlab_cli::battery::{run_suite, Hooks, Suite};
use fluctlab_cli::config::{ExperimentConfig, EXPERIMENT_NAMES};
use fluctlab_cli::experiments::execute;
use fluctlab_cli::output::write_outputs;

#[derive(Parser)]
#[command(
    name = "fluctlab",
    version,
    about = "Lattice-gas and Kac-ring fluctuation experiments"
)]
struct Cli {
    /// Worker threads for replica parallelism.
    #[arg(long, global = true, env = "FLUCTLAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; falls back to `out` in the config, then `results`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the acceptance battery and print a pass/fail table.
    Verify {
        #[arg(value_enum)]
        suite: SuiteArg,
    },
    /// List experiment names.
    Experiments,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Quick,
    Acceptance,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match cli.command {
        Command::Run { config, out, seed } => run(&config, out, seed),
        Command::Verify { suite } => verify(match suite {
            SuiteArg::Quick => Suite::Quick,
            SuiteArg::Acceptance => Suite::Acceptance,
        }),
        Command::Experiments => {
            for name in EXPERIMENT_NAMES {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
    }
}

fn run(path: &PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    let mut config = match ExperimentConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid configuration: {e}");
            eprintln!("valid experiments: {}", EXPERIMENT_NAMES.join(", "));
            return ExitCode::from(2);
        }
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    let out = out
        .or_else(|| config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    let start = Instant::now();
    let outcome = match execute(&config) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    match write_outputs(&out, &config, &outcome, start.elapsed().as_secs_f64()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: cannot write results: {e}");
            ExitCode::from(1)
        }
    }
}

fn verify(suite: Suite) -> ExitCode {
    let results = run_suite(suite, &Hooks::default());
    for r in &results {
        println!("{}", r.line());
    }
    let failed: Vec<_> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name)
        .collect();
    if failed.is_empty() {
        println!("all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::from(1)
    }
}
